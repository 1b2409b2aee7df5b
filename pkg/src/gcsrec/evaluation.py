"""Full-candidate ranking evaluation: HR@K and NDCG@K under leave-one-out.

Every held-out target is ranked against the whole item catalog (no
negative sampling). Score ties break by ascending item index so ranks are
deterministic. View sampling at evaluation time uses its own pinned seed
stream, independent of training draws.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace

import numpy as np

from . import rng as rngmod
from .config import TrainConfig, config_to_text
from .corpus import SplitDataset, TrainingRow
from .model import ModelParams, forward_batch
from .transition_graph import TransitionGraph, sample_view

EVAL_BATCH = 128


@dataclass(frozen=True)
class RankResult:
    user_index: int
    target: int
    rank: int  # 1-based among all real items


@dataclass
class MetricReport:
    hr10: float
    hr20: float
    ndcg10: float
    ndcg20: float
    users: int
    fingerprint: str

    def as_text(self) -> str:
        rows = [("HR@10", self.hr10), ("HR@20", self.hr20),
                ("N@10", self.ndcg10), ("N@20", self.ndcg20)]
        width = max(len(k) for k, _ in rows)
        lines = [f"{k:<{width}}  {v:.6f}" for k, v in rows]
        lines.append(f"{'users':<{width}}  {self.users}")
        lines.append(f"{'config':<{width}}  {self.fingerprint}")
        return "\n".join(lines) + "\n"

    def as_keyvalues(self) -> str:
        return (f"hr10 {self.hr10!r}\nhr20 {self.hr20!r}\n"
                f"ndcg10 {self.ndcg10!r}\nndcg20 {self.ndcg20!r}\n"
                f"users {self.users}\nconfig {self.fingerprint}\n")


def rank_target(scores: np.ndarray, target: int) -> RankResult:
    """Rank of a 1-based item index in a score vector over all real items."""
    scores = np.asarray(scores).reshape(-1)
    if not 1 <= target <= scores.size:
        raise ValueError(f"target {target} outside item range 1..{scores.size}")
    t = target - 1
    st = scores[t]
    rank = int((scores > st).sum()) + int((scores[:t] == st).sum()) + 1
    return RankResult(-1, target, rank)


def metrics(results: list[RankResult], k: int) -> tuple[float, float]:
    """(HR@k, NDCG@k) means over users; a single relevant item per user."""
    if not results:
        raise ValueError("no rank results to aggregate")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    hits = sum(1 for r in results if r.rank <= k)
    gain = sum(1.0 / math.log2(r.rank + 1) for r in results if r.rank <= k)
    n = len(results)
    return hits / n, gain / n


def config_fingerprint(cfg: TrainConfig) -> str:
    return hashlib.sha256(config_to_text(cfg).encode()).hexdigest()[:12]


def _eval_sampler(cfg: TrainConfig):
    return replace(cfg.sampler, seed=rngmod.derive_seed(cfg.sampler.seed, "eval"))


def rank_rows(params: ModelParams, rows: list[TrainingRow], graph: TransitionGraph,
              cfg: TrainConfig) -> list[RankResult]:
    """Forward arbitrary (prefix, target) rows and rank each target.

    Runs without a tape (pure inference, dropout off), in batches.
    """
    from .corpus import Sequence

    sampler = _eval_sampler(cfg)
    out: list[RankResult] = []
    for start in range(0, len(rows), EVAL_BATCH):
        chunk = rows[start:start + EVAL_BATCH]
        pairs = [
            (sample_view(graph, Sequence(r.user_index, r.prefix), sampler, draw=1),
             sample_view(graph, Sequence(r.user_index, r.prefix), sampler, draw=2))
            for r in chunk
        ]
        fwd = forward_batch(chunk, pairs, params, rng=None, training=False,
                            unweighted=cfg.unweighted_edges)
        for row, scores in zip(chunk, fwd.scores.data):
            r = rank_target(scores, row.target)
            out.append(RankResult(row.user_index, row.target, r.rank))
    return out


def _eval_rows(dataset: SplitDataset, mode: str, max_len: int) -> list[TrainingRow]:
    if mode not in ("valid", "test"):
        raise ValueError(f"mode must be 'valid' or 'test', got {mode!r}")
    train_by_user = {s.user_index: s.items for s in dataset.train}
    rows = []
    targets = dataset.valid_target if mode == "valid" else dataset.test_target
    for user, target in targets.items():
        prefix = train_by_user[user]
        if mode == "test":
            prefix = prefix + (dataset.valid_target[user],)
        prefix = prefix[-max_len:]
        window = np.zeros(max_len, dtype=np.int64)
        window[max_len - len(prefix):] = prefix
        rows.append(TrainingRow(user, tuple(prefix), window, target))
    return rows


def rank_dataset(params: ModelParams, dataset: SplitDataset, graph: TransitionGraph,
                 mode: str, cfg: TrainConfig) -> list[RankResult]:
    """Rank every evaluable user's held-out target for the given mode.

    In test mode the validation item joins the input prefix (the target
    itself is never part of any input).
    """
    rows = _eval_rows(dataset, mode, cfg.model.max_len)
    return rank_rows(params, rows, graph, cfg)


def evaluate(params: ModelParams, dataset: SplitDataset, graph: TransitionGraph,
             mode: str, cfg: TrainConfig) -> MetricReport:
    """Leave-one-out evaluation over every evaluable user."""
    results = rank_dataset(params, dataset, graph, mode, cfg)
    hr10, n10 = metrics(results, 10)
    hr20, n20 = metrics(results, 20)
    return MetricReport(hr10, hr20, n10, n20, len(results), config_fingerprint(cfg))
