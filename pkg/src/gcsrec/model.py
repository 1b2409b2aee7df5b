"""The dual-branch network: shared GNN over sampled graph views, user
gating, causal self-attention over the item sequence, and attention fusion
into one sequence representation scored against all items.

Layout conventions. The attention branch works on left-padded windows of
``max_len`` slots (real items occupy the last n slots). The graph branch
works on compact n-row matrices aligned with sequence order; the window's
real slots are extracted before fusion so the three representations are
row-aligned position by position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig
from .corpus import TrainingRow
from .transition_graph import SampledView


class ModelParams:
    """Named learnable tensors; iteration order is creation order."""

    def __init__(self, arrays: dict[str, Tensor], cfg: ModelConfig,
                 item_count: int, user_count: int):
        self.arrays = arrays
        self.cfg = cfg
        self.item_count = item_count
        self.user_count = user_count

    def __getitem__(self, name: str) -> Tensor:
        return self.arrays[name]

    def named(self):
        return self.arrays.items()

    @property
    def item_emb(self) -> Tensor:
        return self.arrays["item_emb"]

    @property
    def user_emb(self) -> Tensor:
        return self.arrays["user_emb"]

    def copy(self) -> "ModelParams":
        arrays = {n: Tensor(t.data.copy(), name=n) for n, t in self.arrays.items()}
        return ModelParams(arrays, self.cfg, self.item_count, self.user_count)


def _xavier(rng, fan_in, fan_out, *shape):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(cfg: ModelConfig, item_count: int, user_count: int,
                rng: np.random.Generator) -> ModelParams:
    """Fresh parameters; the padding row of the item table starts (and must
    stay) exactly zero."""
    d, h, L = cfg.dim, cfg.heads, cfg.max_len
    dh = d // h
    arrays: dict[str, np.ndarray] = {}

    item = rng.normal(0.0, 0.1, size=(item_count + 1, d))
    item[0] = 0.0
    arrays["item_emb"] = item
    arrays["user_emb"] = rng.normal(0.0, 0.1, size=(user_count, d))
    arrays["pos_emb"] = rng.normal(0.0, 0.1, size=(L, d))

    # positive bias keeps the relu layers alive under the orthogonality
    # pressure of the contrastive objective (dead rows break its cosine)
    arrays["gnn_w1"] = _xavier(rng, d, d, d, d)
    arrays["gnn_b1"] = np.full(d, 0.25)
    arrays["gnn_w2"] = _xavier(rng, 2 * d, d, 2 * d, d)
    arrays["gnn_b2"] = np.full(d, 0.25)

    arrays["gate_w1"] = _xavier(rng, d, 1, d, 1)
    arrays["gate_w2"] = _xavier(rng, L, d, L, d)

    for layer in range(cfg.layers):
        p = f"attn{layer}_"
        for head in range(h):
            arrays[p + f"wq{head}"] = _xavier(rng, d, dh, d, dh)
            arrays[p + f"wk{head}"] = _xavier(rng, d, dh, d, dh)
            arrays[p + f"wv{head}"] = _xavier(rng, d, dh, d, dh)
        arrays[p + "wo"] = _xavier(rng, d, d, d, d)
        arrays[p + "ffn_w1"] = _xavier(rng, d, d, d, d)
        arrays[p + "ffn_b1"] = np.zeros(d)
        arrays[p + "ffn_w2"] = _xavier(rng, d, d, d, d)
        arrays[p + "ffn_b2"] = np.zeros(d)
        arrays[p + "ln1_gain"] = np.ones(d)
        arrays[p + "ln1_bias"] = np.zeros(d)
        arrays[p + "ln2_gain"] = np.ones(d)
        arrays[p + "ln2_bias"] = np.zeros(d)

    arrays["fusion_wt"] = _xavier(rng, 3 * d, d, 3 * d, d)
    arrays["fusion_proj"] = _xavier(rng, d, d, d, d)
    arrays["fusion_query"] = _xavier(rng, d, 1, d, 1)

    tensors = {n: Tensor(a.astype(np.float64), name=n) for n, a in arrays.items()}
    return ModelParams(tensors, cfg, item_count, user_count)


def _view_adjacency(view: SampledView, unweighted: bool) -> tuple[np.ndarray, np.ndarray]:
    """Dense weighted adjacency and row-normalized unweighted adjacency for
    the view's node ordering. Zero-weight edges behave exactly like absent
    edges; isolated nodes get all-zero rows."""
    m = len(view.nodes)
    pos = {node: k for k, node in enumerate(view.nodes)}
    aw = np.zeros((m, m))
    amean = np.zeros((m, m))
    for node, nbrs in view.neighbor_index.items():
        i = pos[node]
        live = [(other, nw) for other, nw in nbrs if nw != 0.0]
        for other, nw in live:
            aw[i, pos[other]] = 1.0 if unweighted else nw
        if live:
            share = 1.0 / len(live)
            for other, _ in live:
                amean[i, pos[other]] = share
    return aw, amean


def gnn_encode(view: SampledView, params: ModelParams, unweighted: bool = False) -> Tensor:
    """Two propagation layers over one sampled view; returns the anchor
    rows (n, d) in sequence order.

    Layer 1 sums neighbor embeddings scaled by the normalized edge weights,
    adds the node's own embedding, then applies a linear map + relu. Layer
    2 concatenates each node with its neighbors' mean (zero for isolated
    nodes) and applies a second linear map + relu.
    """
    n = len(view.anchor_items)
    aw, amean = _view_adjacency(view, unweighted)
    h0 = ad.gather_rows(params.item_emb, np.array(view.nodes))
    agg = ad.matmul(Tensor(aw), h0)
    h1 = ad.relu(ad.add(ad.matmul(ad.add(agg, h0), params["gnn_w1"]), params["gnn_b1"]))
    mean_nbr = ad.matmul(Tensor(amean), h1)
    h2_in = ad.concat([h1, mean_nbr], axis=-1)
    h2 = ad.relu(ad.add(ad.matmul(h2_in, params["gnn_w2"]), params["gnn_b2"]))
    # anchors were inserted first when the view was sampled
    return ad.gather_rows(h2, np.arange(n))


def user_gate(h: Tensor, user_index: int, params: ModelParams) -> Tensor:
    """Scale each row of h by a sigmoid gate conditioned on the user."""
    n = h.shape[0]
    p_u = ad.gather_rows(params.user_emb, np.array([user_index]))          # (1, d)
    w2_rows = ad.gather_rows(params["gate_w2"], np.arange(n))              # (n, d)
    logits = ad.add(ad.matmul(h, params["gate_w1"]), ad.matmul(w2_rows, ad.transpose(p_u)))
    return ad.mul(h, ad.sigmoid(logits))


def _attention_bias(windows: np.ndarray) -> np.ndarray:
    """(B, L, L) additive mask: position t may attend to slots <= t that
    hold real items; -1e9 elsewhere."""
    b, length = windows.shape
    causal = np.triu(np.full((length, length), -1e9), k=1)
    key_pad = np.where(windows == 0, -1e9, 0.0)                            # (B, L)
    return causal[None, :, :] + key_pad[:, None, :]


def transformer_encode(windows: np.ndarray, params: ModelParams,
                       rng: np.random.Generator | None = None,
                       training: bool = False) -> Tensor:
    """Causal multi-head self-attention stack over left-padded windows.

    windows: (B, max_len) int item indices, 0 = padding. Returns the last
    layer's states, (B, max_len, d).
    """
    cfg = params.cfg
    d = cfg.dim
    length = windows.shape[1]
    scale = 1.0 / math.sqrt(d)

    emb = ad.gather_rows(params.item_emb, windows)                         # (B, L, d)
    pos = ad.gather_rows(params["pos_emb"], np.arange(length))             # (L, d)
    x = ad.add(emb, pos)
    bias = _attention_bias(windows)

    for layer in range(cfg.layers):
        p = f"attn{layer}_"
        heads = []
        for head in range(cfg.heads):
            q = ad.matmul(x, params[p + f"wq{head}"])
            k = ad.matmul(x, params[p + f"wk{head}"])
            v = ad.matmul(x, params[p + f"wv{head}"])
            logits = ad.add_const(ad.scale(ad.matmul(q, ad.swap_last2(k)), scale), bias)
            heads.append(ad.matmul(ad.softmax(logits), v))
        mh = ad.matmul(ad.concat(heads, axis=-1), params[p + "wo"])
        x = ad.layer_norm(ad.add(x, ad.dropout(mh, cfg.dropout, rng, training)),
                          params[p + "ln1_gain"], params[p + "ln1_bias"])
        inner = ad.relu(ad.add(ad.matmul(x, params[p + "ffn_w1"]), params[p + "ffn_b1"]))
        ff = ad.add(ad.matmul(inner, params[p + "ffn_w2"]), params[p + "ffn_b2"])
        x = ad.layer_norm(ad.add(x, ad.dropout(ff, cfg.dropout, rng, training)),
                          params[p + "ln2_gain"], params[p + "ln2_bias"])
    return x


def fuse_and_score(q_prime: Tensor, q_second: Tensor, h_seq: Tensor,
                   params: ModelParams) -> tuple[Tensor, Tensor]:
    """Fuse the three row-aligned (n, d) representations and score items.

    Returns (m, scores): the pooled (1, d) sequence representation and its
    dot products with every real item embedding, (1, item_count).
    """
    fused = ad.concat([q_prime, q_second, h_seq], axis=-1)                 # (n, 3d)
    g = ad.matmul(fused, params["fusion_wt"])                              # (n, d)
    e = ad.matmul(ad.matmul(g, params["fusion_proj"]), params["fusion_query"])  # (n, 1)
    alpha = ad.softmax(ad.transpose(e))                                    # (1, n)
    m = ad.matmul(alpha, g)                                                # (1, d)
    real_items = ad.gather_rows(params.item_emb, np.arange(1, params.item_count + 1))
    scores = ad.matmul(m, ad.transpose(real_items))                        # (1, |V|)
    return m, scores


@dataclass
class BatchForward:
    """Everything a training step needs from one forward pass."""
    scores: Tensor                  # (B, |V|)
    z_prime: Tensor                 # (B, d)  mean-pooled view representations
    z_second: Tensor                # (B, d)
    per_row: list[tuple[Tensor, Tensor, Tensor]]  # (E0, Q', Q'') per row


def _stacked_view_arrays(views: list[SampledView], unweighted: bool):
    """Pad all views to a common node count for one batched GNN pass.

    Returns int node indices (V, m) where padding points at item 0 (the
    zero embedding row), plus the (V, m, m) weighted and mean-aggregation
    adjacency stacks (padding rows are all zero).
    """
    m = max(len(v.nodes) for v in views)
    count = len(views)
    node_idx = np.zeros((count, m), dtype=np.int64)
    aw = np.zeros((count, m, m))
    amean = np.zeros((count, m, m))
    for k, view in enumerate(views):
        node_idx[k, : len(view.nodes)] = view.nodes
        a, am = _view_adjacency(view, unweighted)
        sz = len(view.nodes)
        aw[k, :sz, :sz] = a
        amean[k, :sz, :sz] = am
    return node_idx, aw, amean


def _gnn_layers(node_idx: np.ndarray, aw: np.ndarray, amean: np.ndarray,
                params: ModelParams) -> Tensor:
    """The two propagation layers over stacked views: (V, m, d) states."""
    h0 = ad.gather_rows(params.item_emb, node_idx)
    agg = ad.matmul(Tensor(aw), h0)
    h1 = ad.relu(ad.add(ad.matmul(ad.add(agg, h0), params["gnn_w1"]), params["gnn_b1"]))
    mean_nbr = ad.matmul(Tensor(amean), h1)
    h2_in = ad.concat([h1, mean_nbr], axis=-1)
    return ad.relu(ad.add(ad.matmul(h2_in, params["gnn_w2"]), params["gnn_b2"]))


def forward_batch(rows: list[TrainingRow], view_pairs: list[tuple[SampledView, SampledView]],
                  params: ModelParams, rng: np.random.Generator | None = None,
                  training: bool = False, unweighted: bool = False) -> BatchForward:
    """Run the full network over a batch of rows in window layout.

    All 2B sampled views go through the GNN as one padded stack. The gated
    view states are scattered into the same left-padded (B, max_len) slot
    layout the attention branch uses, so fusion is row-aligned; padded
    slots are masked out of the fusion pooling.
    """
    cfg = params.cfg
    b_rows, length, d = len(rows), cfg.max_len, cfg.dim
    lens = np.array([len(r.prefix) for r in rows])
    windows = np.stack([r.window for r in rows])                           # (B, L)
    h_all = transformer_encode(windows, params, rng, training)             # (B, L, d)

    views = [v for pair in view_pairs for v in pair]                       # 2B, draws interleaved
    node_idx, aw, amean = _stacked_view_arrays(views, unweighted)
    m = node_idx.shape[1]
    h_view = _gnn_layers(node_idx, aw, amean, params)                      # (2B, m, d)
    h_flat = ad.concat([ad.reshape(h_view, (2 * b_rows * m, d)), Tensor(np.zeros((1, d)))],
                       axis=0)
    zero_slot = 2 * b_rows * m

    # window-layout index per draw: row b, anchor t -> stacked view row
    real = np.arange(length)[None, :] >= (length - lens)[:, None]          # (B, L)
    anchor_of_slot = np.arange(length)[None, :] - (length - lens)[:, None]
    pad_h = []
    for draw in (0, 1):
        view_base = (2 * np.arange(b_rows) + draw)[:, None] * m
        idx = np.where(real, view_base + anchor_of_slot, zero_slot)
        pad_h.append(ad.gather_rows(h_flat, idx))                          # (B, L, d)

    # pre-gate mean pooling over each row's anchors
    pool = np.zeros((b_rows, b_rows * length))
    for b, n in enumerate(lens):
        pool[b, b * length + length - n: (b + 1) * length] = 1.0 / n
    z_prime, z_second = (ad.matmul(Tensor(pool), ad.reshape(h, (b_rows * length, d)))
                         for h in pad_h)

    # user gate, broadcast over slots; padded slots stay zero through h
    users = np.array([r.user_index for r in rows])
    p_rows = ad.reshape(ad.gather_rows(params.user_emb, users), (b_rows, 1, d))
    w2_rows = ad.gather_rows(params["gate_w2"], np.where(real, anchor_of_slot, 0))
    gate_bias = ad.sum_last(ad.mul(w2_rows, p_rows))                       # (B, L, 1)
    q_pad = []
    for h in pad_h:
        gate = ad.sigmoid(ad.add(ad.matmul(h, params["gate_w1"]), gate_bias))
        q_pad.append(ad.mul(h, gate))

    # fusion with padded-slot masking
    fused = ad.concat([q_pad[0], q_pad[1], h_all], axis=-1)                # (B, L, 3d)
    g = ad.matmul(fused, params["fusion_wt"])                              # (B, L, d)
    e = ad.matmul(ad.matmul(g, params["fusion_proj"]), params["fusion_query"])
    slot_bias = np.where(real, 0.0, -1e9)
    alpha = ad.softmax(ad.add_const(ad.reshape(e, (b_rows, 1, length)), slot_bias[:, None, :]))
    pooled = ad.reshape(ad.matmul(alpha, g), (b_rows, d))                  # (B, d)
    real_items = ad.gather_rows(params.item_emb, np.arange(1, params.item_count + 1))
    scores = ad.matmul(pooled, ad.transpose(real_items))                   # (B, |V|)

    per_row = []
    q_flat = [ad.reshape(q, (b_rows * length, d)) for q in q_pad]
    for b, row in enumerate(rows):
        n = lens[b]
        slots = np.arange(b * length + length - n, (b + 1) * length)
        e0 = ad.gather_rows(params.item_emb, np.array(row.prefix))
        per_row.append((e0, ad.gather_rows(q_flat[0], slots),
                        ad.gather_rows(q_flat[1], slots)))

    return BatchForward(scores, z_prime, z_second, per_row)
