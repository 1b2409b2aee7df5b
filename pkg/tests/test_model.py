"""Network-component tests: GNN layers vs a straight-loop oracle, gating
vs the scalar formula, attention masking contracts, fusion pooling, and
the end-to-end gradient check."""

import numpy as np
import pytest
from fdcheck import gradcheck, max_rel_err, numeric_grad

from gcsrec import autodiff as ad
from gcsrec.autodiff import Tape, Tensor, backward
from gcsrec.config import ModelConfig, TrainConfig
from gcsrec.corpus import Sequence, Vocabulary, expand_subsequences
from gcsrec.model import (
    ModelParams,
    _attention_bias,
    forward_batch,
    fuse_and_score,
    gnn_encode,
    init_params,
    transformer_encode,
    user_gate,
)
from gcsrec.training import batch_loss, sample_view_pair
from gcsrec.transition_graph import SampledView, build_witg
from gcsrec import rng as rngmod


def vocab_of(item_count, user_count=4):
    items = [f"i{k}" for k in range(item_count)]
    users = [f"u{k}" for k in range(user_count)]
    return Vocabulary({it: k + 1 for k, it in enumerate(items)}, ["<pad>"] + items,
                      {u: k for k, u in enumerate(users)}, users)


def tiny_params(d=8, max_len=4, items=6, users=3, dropout=0.0, seed=0):
    cfg = ModelConfig(dim=d, heads=2, layers=2, max_len=max_len, dropout=dropout)
    return init_params(cfg, items, users, rngmod.stream(seed, "init"))


def make_view(anchors, nodes, edges):
    """edges as (i, j, w) with both directions indexed."""
    index = {n: [] for n in nodes}
    for i, j, w in edges:
        index[i].append((j, w))
        index[j].append((i, w))
    return SampledView(tuple(anchors), list(nodes), [(min(i, j), max(i, j), w)
                                                     for i, j, w in edges], index)


def gnn_oracle(view, params, unweighted=False):
    """Non-vectorized reimplementation of the two propagation layers."""
    E = params.item_emb.data
    w1, b1 = params["gnn_w1"].data, params["gnn_b1"].data
    w2, b2 = params["gnn_w2"].data, params["gnn_b2"].data
    live = {v: [(u, 1.0 if unweighted else w) for u, w in nbrs if w != 0.0]
            for v, nbrs in view.neighbor_index.items()}
    h1 = {}
    for v in view.nodes:
        agg = np.zeros(E.shape[1])
        for u, w in live[v]:
            agg = agg + w * E[u]
        h1[v] = np.maximum((agg + E[v]) @ w1 + b1, 0.0)
    h2 = {}
    for v in view.nodes:
        nbrs = live[v]
        mean = (sum(h1[u] for u, _ in nbrs) / len(nbrs)) if nbrs else np.zeros(E.shape[1])
        h2[v] = np.maximum(np.concatenate([h1[v], mean]) @ w2 + b2, 0.0)
    return np.stack([h2[a] for a in view.anchor_items])


class TestGnnEncode:
    def test_matches_loop_oracle(self):
        params = tiny_params(items=8)
        rng = np.random.default_rng(0)
        nodes = [3, 1, 5, 7, 2]
        edges = [(3, 1, 0.7), (1, 5, 1.3), (5, 7, 0.4), (3, 7, 2.0)]
        view = make_view([3, 1, 5], nodes, edges)
        got = gnn_encode(view, params).data
        np.testing.assert_allclose(got, gnn_oracle(view, params), atol=1e-10)

    def test_isolated_anchor_formula(self):
        params = tiny_params(items=6)
        view = make_view([4], [4], [])
        got = gnn_encode(view, params).data
        e = params.item_emb.data[4]
        h1 = np.maximum(e @ params["gnn_w1"].data + params["gnn_b1"].data, 0.0)
        want = np.maximum(np.concatenate([h1, np.zeros_like(h1)]) @ params["gnn_w2"].data
                          + params["gnn_b2"].data, 0.0)
        np.testing.assert_allclose(got[0], want, atol=1e-12)

    def test_zero_weight_edge_transparent(self):
        params = tiny_params(items=6)
        with_dead_edge = make_view([1, 2], [1, 2], [(1, 2, 0.0)])
        without = make_view([1, 2], [1, 2], [])
        np.testing.assert_array_equal(gnn_encode(with_dead_edge, params).data,
                                      gnn_encode(without, params).data)

    def test_unweighted_mode_forces_unit_weights(self):
        params = tiny_params(items=6)
        weighted = make_view([1, 2], [1, 2], [(1, 2, 0.37)])
        unit = make_view([1, 2], [1, 2], [(1, 2, 1.0)])
        np.testing.assert_array_equal(gnn_encode(weighted, params, unweighted=True).data,
                                      gnn_encode(unit, params).data)
        assert not np.array_equal(gnn_encode(weighted, params).data,
                                  gnn_encode(unit, params).data)


class TestUserGate:
    def test_zero_weights_halve(self):
        params = tiny_params()
        params["gate_w1"].data[:] = 0.0
        params["gate_w2"].data[:] = 0.0
        h = Tensor(np.random.default_rng(1).normal(size=(3, 8)))
        np.testing.assert_allclose(user_gate(h, 0, params).data, h.data / 2, atol=1e-15)

    def test_saturated_gate_passes_through(self):
        params = tiny_params()
        params["gate_w1"].data[:] = 0.0
        params["gate_w2"].data[:] = 50.0
        params.user_emb.data[:] = 1.0
        h = Tensor(np.random.default_rng(2).normal(size=(3, 8)))
        np.testing.assert_allclose(user_gate(h, 1, params).data, h.data, atol=1e-12)

    def test_matches_scalar_oracle(self):
        params = tiny_params()
        rng = np.random.default_rng(3)
        h = rng.normal(size=(4, 8))
        got = user_gate(Tensor(h), 2, params).data
        w1 = params["gate_w1"].data
        w2 = params["gate_w2"].data
        pu = params.user_emb.data[2]
        for t in range(4):
            logit = sum(h[t, k] * w1[k, 0] for k in range(8)) \
                + sum(w2[t, k] * pu[k] for k in range(8))
            gate = 1.0 / (1.0 + np.exp(-logit))
            np.testing.assert_allclose(got[t], h[t] * gate, atol=1e-12)


def ln_ref(x, gain, bias, eps=1e-8):
    mu = x.mean()
    var = ((x - mu) ** 2).mean()
    return gain * (x - mu) / np.sqrt(var + eps) + bias


class TestTransformerEncode:
    def test_single_item_matches_numpy_oracle(self):
        params = tiny_params(max_len=4)
        cfg = params.cfg
        window = np.array([[0, 0, 0, 3]])
        got = transformer_encode(window, params).data[0, 3]

        x = params.item_emb.data[3] + params["pos_emb"].data[3]
        for layer in range(cfg.layers):
            p = f"attn{layer}_"
            heads = [x @ params[p + f"wv{h}"].data for h in range(cfg.heads)]
            mh = np.concatenate(heads) @ params[p + "wo"].data
            x = ln_ref(x + mh, params[p + "ln1_gain"].data, params[p + "ln1_bias"].data)
            inner = np.maximum(x @ params[p + "ffn_w1"].data + params[p + "ffn_b1"].data, 0)
            ff = inner @ params[p + "ffn_w2"].data + params[p + "ffn_b2"].data
            x = ln_ref(x + ff, params[p + "ln2_gain"].data, params[p + "ln2_bias"].data)
        np.testing.assert_allclose(got, x, atol=1e-12)

    def test_causal_mask_bit_identical_prefix(self):
        params = tiny_params(max_len=4, items=6)
        w1 = np.array([[1, 2, 3, 4]])
        w2 = np.array([[1, 2, 3, 5]])  # differs only at the last slot
        out1 = transformer_encode(w1, params).data
        out2 = transformer_encode(w2, params).data
        np.testing.assert_array_equal(out1[0, :3], out2[0, :3])
        assert not np.array_equal(out1[0, 3], out2[0, 3])

    def test_attention_rows_sum_one_over_real_keys(self):
        rng = np.random.default_rng(4)
        windows = np.array([[0, 0, 2, 5], [1, 2, 3, 4]])
        bias = _attention_bias(windows)
        logits = ad.add_const(Tensor(rng.normal(size=(2, 4, 4))), bias)
        probs = ad.softmax(logits).data
        np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-12)
        # padded keys receive exactly zero weight from real queries
        assert probs[0, 2, 0] == 0.0 and probs[0, 2, 1] == 0.0
        # causal: no weight on future slots
        assert probs[1, 0, 1] == 0.0 and probs[1, 2, 3] == 0.0

    def test_padding_transparency_across_window_sizes(self):
        small = tiny_params(max_len=4, items=6, users=3)
        big = tiny_params(max_len=6, items=6, users=3, seed=9)
        # share every parameter; the big model's extra leading position rows
        # and trailing gate rows stay as unrelated garbage
        for name, t in small.named():
            if name == "pos_emb":
                big["pos_emb"].data[2:] = t.data
            elif name == "gate_w2":
                big["gate_w2"].data[:4] = t.data
            else:
                big[name].data[:] = t.data

        seq = Sequence(1, (1, 2, 3, 5))
        graph = build_witg([seq, Sequence(0, (2, 4, 1)), Sequence(2, (5, 6, 3))],
                           vocab_of(6))
        cfg_small = TrainConfig(model=small.cfg, seed=3)
        cfg_big = TrainConfig(model=big.cfg, seed=3)
        row_s = expand_subsequences(seq, 4)[2]       # prefix (1, 2, 3)
        row_b = expand_subsequences(seq, 6)[2]
        assert row_s.prefix == row_b.prefix
        pair_s = sample_view_pair(graph, row_s, cfg_small, epoch=0)
        pair_b = sample_view_pair(graph, row_b, cfg_big, epoch=0)
        out_s = forward_batch([row_s], [pair_s], small)
        out_b = forward_batch([row_b], [pair_b], big)
        np.testing.assert_allclose(out_s.scores.data, out_b.scores.data, atol=1e-12)


class TestFuseAndScore:
    def test_single_position_pools_exactly(self):
        params = tiny_params()
        rng = np.random.default_rng(5)
        q1, q2, h = (Tensor(rng.normal(size=(1, 8))) for _ in range(3))
        m, scores = fuse_and_score(q1, q2, h, params)
        fused = np.concatenate([q1.data, q2.data, h.data], axis=-1)
        np.testing.assert_allclose(m.data, fused @ params["fusion_wt"].data, atol=1e-14)
        assert scores.shape == (1, params.item_count)

    def test_identical_rows_pool_uniformly(self):
        params = tiny_params()
        rng = np.random.default_rng(6)
        row = rng.normal(size=(1, 8))
        q1, q2, h = (Tensor(np.repeat(row, 2, axis=0)) for _ in range(3))
        m, _ = fuse_and_score(q1, q2, h, params)
        g_row = np.concatenate([row, row, row], axis=-1) @ params["fusion_wt"].data
        np.testing.assert_allclose(m.data, g_row, atol=1e-12)

    def test_score_softmax_normalizes(self):
        params = tiny_params()
        rng = np.random.default_rng(7)
        q1, q2, h = (Tensor(rng.normal(size=(3, 8))) for _ in range(3))
        _, scores = fuse_and_score(q1, q2, h, params)
        probs = ad.softmax(scores).data
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)


def tiny_batch(seed=0, d=8, max_len=4, dropout=0.0):
    """Two rows with prefixes of length <= 4 plus their sampled views."""
    cfg = TrainConfig(model=ModelConfig(dim=d, heads=2, layers=2, max_len=max_len,
                                        dropout=dropout), seed=seed)
    seqs = [Sequence(0, (1, 2, 3, 4)), Sequence(1, (2, 5, 1)), Sequence(2, (4, 6, 2, 5))]
    graph = build_witg(seqs, vocab_of(6))
    rows = [expand_subsequences(seqs[0], max_len)[2],   # prefix (1,2,3)
            expand_subsequences(seqs[2], max_len)[1]]   # prefix (4,6)
    pairs = [sample_view_pair(graph, r, cfg, epoch=0) for r in rows]
    params = init_params(cfg.model, 6, 3, rngmod.stream(seed, "init"))
    return cfg, params, rows, pairs


def reference_forward(rows, view_pairs, params, unweighted=False):
    """Straight per-row composition of the public ops (no batching tricks)."""
    length = params.cfg.max_len
    windows = np.stack([r.window for r in rows])
    h_all = transformer_encode(windows, params)
    h_flat = ad.reshape(h_all, (len(rows) * length, params.cfg.dim))
    scores, zs = [], ([], [])
    for b, (row, pair) in enumerate(zip(rows, view_pairs)):
        n = len(row.prefix)
        gated = []
        for k, view in enumerate(pair):
            h = gnn_encode(view, params, unweighted)
            zs[k].append(ad.masked_mean_rows(h, np.ones(n, dtype=bool)))
            gated.append(user_gate(h, row.user_index, params))
        slots = np.arange(b * length + (length - n), b * length + length)
        h_seq = ad.gather_rows(h_flat, slots)
        _, s = fuse_and_score(gated[0], gated[1], h_seq, params)
        scores.append(s)
    return (ad.concat(scores, axis=0), ad.concat(zs[0], axis=0),
            ad.concat(zs[1], axis=0))


class TestWholeNetwork:
    def test_vectorized_matches_per_row_reference(self):
        cfg, params, rows, pairs = tiny_batch()
        got = forward_batch(rows, pairs, params)
        want_scores, want_zp, want_zs = reference_forward(rows, pairs, params)
        np.testing.assert_allclose(got.scores.data, want_scores.data, atol=1e-12)
        np.testing.assert_allclose(got.z_prime.data, want_zp.data, atol=1e-12)
        np.testing.assert_allclose(got.z_second.data, want_zs.data, atol=1e-12)
        for b, (e0, q1, q2) in enumerate(got.per_row):
            h = gnn_encode(pairs[b][0], params)
            q_ref = user_gate(h, rows[b].user_index, params)
            np.testing.assert_allclose(q1.data, q_ref.data, atol=1e-12)

    def test_shared_item_table_feeds_both_branches(self):
        cfg, params, rows, pairs = tiny_batch()
        base = forward_batch(rows, pairs, params)
        h_gnn = gnn_encode(pairs[0][0], params).data.copy()
        params.item_emb.data[1] += 0.25
        bumped = forward_batch(rows, pairs, params)
        assert not np.array_equal(base.scores.data, bumped.scores.data)
        assert not np.array_equal(h_gnn, gnn_encode(pairs[0][0], params).data)

    def test_batch_isolation(self):
        cfg, params, rows, pairs = tiny_batch()
        alone = forward_batch([rows[0]], [pairs[0]], params)
        together = forward_batch(rows, pairs, params)
        np.testing.assert_allclose(alone.scores.data[0], together.scores.data[0],
                                   atol=1e-12)

    def test_end_to_end_gradients(self):
        cfg, params, rows, pairs = tiny_batch()
        leaves = [t for _, t in params.named()]

        def f():
            total, _ = batch_loss(rows, pairs, params, cfg, rng=None, training=False)
            return total

        worst = gradcheck(f, leaves, tol=1e-3)
        assert worst < 1e-3
