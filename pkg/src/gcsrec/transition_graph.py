"""Global weighted item-transition graph and per-sequence sampled views.

For every training sequence, item pairs up to 3 positions apart become
undirected edges whose raw weight accumulates 1/k for a gap of k. Raw
weights are then degree-normalized:

    norm_w(i, j) = w(i, j) * (1/deg(i) + 1/deg(j))

with deg the unweighted neighbor count. Per-sequence augmented views are
depth/size-bounded uniform neighborhood samples of this graph that keep
the parent edges (and normalized weights) among the sampled nodes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .corpus import Sequence, Vocabulary

MAX_GAP = 3  # transition edges span gaps k in {1, 2, 3}


@dataclass
class TransitionGraph:
    node_count: int                                   # |V|; node ids are 1..|V|
    adjacency: dict[int, list[tuple[int, float, float]]]  # node -> sorted (nbr, w, norm_w)

    def degree(self, node: int) -> int:
        return len(self.adjacency.get(node, ()))

    def neighbors(self, node: int) -> list[int]:
        return [n for n, _, _ in self.adjacency.get(node, ())]

    def edge_count(self) -> int:
        return sum(len(v) for v in self.adjacency.values()) // 2

    def edges(self):
        """Yield each undirected edge once as (i, j, w, norm_w) with i < j."""
        for i in sorted(self.adjacency):
            for j, w, nw in self.adjacency[i]:
                if i < j:
                    yield i, j, w, nw


@dataclass(frozen=True)
class SamplerConfig:
    depth: int = 2     # sampling steps per anchor
    size: int = 20     # neighbors drawn per frontier node per step
    seed: int = 0

    def __post_init__(self):
        if self.depth < 1 or self.size < 1:
            raise ValueError("sampler depth and size must be >= 1")


@dataclass
class SampledView:
    anchor_items: tuple[int, ...]                     # sequence items, in order
    nodes: list[int]                                  # sampled set, anchors first
    edges: list[tuple[int, int, float]]               # (i, j, norm_w), i < j
    neighbor_index: dict[int, list[tuple[int, float]]]  # within-view adjacency


def build_witg(train_sequences: list[Sequence], vocab: Vocabulary) -> TransitionGraph:
    """Accumulate gap-weighted co-occurrence over all training sequences.

    Per-edge counts of each gap are kept as integers so the result is
    exactly independent of sequence order; the float weights are formed
    once at the end.
    """
    counts: dict[tuple[int, int], list[int]] = {}
    for seq in train_sequences:
        items = seq.items
        n = len(items)
        for t in range(n):
            vt = items[t]
            if not 1 <= vt <= vocab.item_count:
                raise ValueError(f"item index {vt} outside vocabulary")
            for k in range(1, MAX_GAP + 1):
                if t + k >= n:
                    break
                vj = items[t + k]
                if vt == vj:
                    continue  # no self-loops
                key = (vt, vj) if vt < vj else (vj, vt)
                c = counts.get(key)
                if c is None:
                    c = counts[key] = [0, 0, 0]
                c[k - 1] += 1

    adjacency: dict[int, list[tuple[int, float, float]]] = {}
    raw: dict[tuple[int, int], float] = {}
    for (i, j), (c1, c2, c3) in counts.items():
        w = c1 + c2 / 2.0 + c3 / 3.0
        raw[(i, j)] = w
        adjacency.setdefault(i, []).append((j, w, 0.0))
        adjacency.setdefault(j, []).append((i, w, 0.0))

    deg = {node: len(nbrs) for node, nbrs in adjacency.items()}
    for node, nbrs in adjacency.items():
        normed = []
        for j, w, _ in nbrs:
            nw = w * (1.0 / deg[node] + 1.0 / deg[j])
            normed.append((j, w, nw))
        normed.sort()
        adjacency[node] = normed
    return TransitionGraph(vocab.item_count, adjacency)


def sample_view(graph: TransitionGraph, seq: Sequence, cfg: SamplerConfig,
                draw: int, epoch: int = 0) -> SampledView:
    """Sample one augmented view of the graph anchored on a sequence.

    Starting from each anchor item, ``cfg.depth`` rounds of GraphSage-style
    expansion each draw up to ``cfg.size`` distinct neighbors per frontier
    node, uniformly, ignoring edge weights. All parent edges between
    sampled nodes are kept with their normalized weights. Deterministic in
    (cfg.seed, sequence identity, draw, epoch). Anchors missing from the
    graph become isolated view nodes.
    """
    if not seq.items:
        raise ValueError("cannot sample a view for an empty sequence")
    anchors = seq.items
    r = rngmod.stream(cfg.seed, "view-sampling", rngmod.sequence_key(anchors), draw, epoch)

    node_set = dict.fromkeys(anchors)  # insertion-ordered set
    for anchor in anchors:
        frontier = [anchor]
        for _ in range(cfg.depth):
            nxt = []
            for node in frontier:
                nbrs = graph.neighbors(node)
                if not nbrs:
                    continue
                take = min(cfg.size, len(nbrs))
                picked = r.choice(len(nbrs), size=take, replace=False)
                picked.sort()
                nxt.extend(nbrs[p] for p in picked)
            for node in nxt:
                node_set.setdefault(node)
            frontier = nxt

    nodes = list(node_set)
    in_view = set(nodes)
    edges = []
    neighbor_index: dict[int, list[tuple[int, float]]] = {n: [] for n in nodes}
    for i in nodes:
        for j, _, nw in graph.adjacency.get(i, ()):
            if j in in_view:
                neighbor_index[i].append((j, nw))
                if i < j:
                    edges.append((i, j, nw))
    return SampledView(tuple(anchors), nodes, edges, neighbor_index)


def graph_stats(graph: TransitionGraph) -> dict[str, object]:
    """Node/edge counts, degree histogram, and raw-weight quantiles."""
    degrees = [graph.degree(n) for n in range(1, graph.node_count + 1)]
    weights = [w for _, _, w, _ in graph.edges()]
    hist: dict[int, int] = {}
    for d in degrees:
        hist[d] = hist.get(d, 0) + 1
    if weights:
        q = np.quantile(weights, [0.0, 0.25, 0.5, 0.75, 1.0])
        quantiles = {p: float(v) for p, v in zip(("min", "p25", "p50", "p75", "max"), q)}
    else:
        quantiles = {p: 0.0 for p in ("min", "p25", "p50", "p75", "max")}
    return {
        "nodes": graph.node_count,
        "edges": graph.edge_count(),
        "degree_histogram": dict(sorted(hist.items())),
        "weight_quantiles": quantiles,
    }


def format_stats(stats: dict[str, object]) -> str:
    lines = [f"nodes\t{stats['nodes']}", f"edges\t{stats['edges']}"]
    for d, c in stats["degree_histogram"].items():
        lines.append(f"degree[{d}]\t{c}")
    for p, v in stats["weight_quantiles"].items():
        lines.append(f"weight_{p}\t{v!r}")
    return "\n".join(lines) + "\n"


def save_graph(path: str, graph: TransitionGraph) -> None:
    """Plain-text edge list with a header carrying node count + content hash."""
    body_lines = [f"{i} {j} {w!r} {nw!r}" for i, j, w, nw in graph.edges()]
    body = "\n".join(body_lines)
    digest = hashlib.sha256(body.encode("ascii")).hexdigest()
    with open(path, "w") as fh:
        fh.write(f"witg 1 nodes={graph.node_count} sha256={digest}\n")
        if body:
            fh.write(body + "\n")


def load_graph(path: str) -> TransitionGraph:
    with open(path) as fh:
        header = fh.readline().strip().split()
        if len(header) != 4 or header[0] != "witg":
            raise ValueError(f"{path}: not a transition-graph file")
        node_count = int(header[2].split("=")[1])
        expected = header[3].split("=")[1]
        body_lines = [ln for ln in fh.read().split("\n") if ln]
    digest = hashlib.sha256("\n".join(body_lines).encode("ascii")).hexdigest()
    if digest != expected:
        raise ValueError(f"{path}: content hash mismatch")
    adjacency: dict[int, list[tuple[int, float, float]]] = {}
    for ln in body_lines:
        si, sj, sw, snw = ln.split()
        i, j, w, nw = int(si), int(sj), float(sw), float(snw)
        adjacency.setdefault(i, []).append((j, w, nw))
        adjacency.setdefault(j, []).append((i, w, nw))
    for nbrs in adjacency.values():
        nbrs.sort()
    return TransitionGraph(node_count, adjacency)
