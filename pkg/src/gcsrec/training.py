"""Mini-batch multi-task training with Adam, decoupled weight decay, step
learning-rate decay, per-epoch view resampling, and early stopping on
validation HR@10."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import evaluation, rng as rngmod
from .autodiff import Tape, Tensor, backward
from .config import TrainConfig
from .corpus import SplitDataset, TrainingRow, expand_subsequences
from .losses import BatchLossReport, loss_gcl, loss_main, loss_mmd, loss_total
from .model import ModelParams, forward_batch, init_params
from .transition_graph import SampledView, TransitionGraph, sample_view


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainState:
    params: ModelParams
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    best_metric: float = -1.0
    best_epoch: int = -1
    since_improve: int = 0

    @classmethod
    def fresh(cls, params: ModelParams) -> "TrainState":
        zeros = lambda: {n: np.zeros_like(t.data) for n, t in params.named()}
        return cls(params, zeros(), zeros())


@dataclass
class TrainingLog:
    lines: list[str] = field(default_factory=list)

    def step(self, i: int, report: BatchLossReport):
        self.lines.append(
            f"step {i} main {report.main!r} gcl {report.gcl!r} "
            f"mmd {report.mmd!r} total {report.total!r}")

    def epoch(self, e: int, lr: float, valid_hr10: float, best: float):
        self.lines.append(f"epoch {e} lr {lr!r} valid_hr10 {valid_hr10!r} best {best!r}")

    def note(self, text: str):
        self.lines.append(text)

    def text(self) -> str:
        return "\n".join(self.lines) + "\n"

    def write(self, path: str):
        with open(path, "w") as fh:
            fh.write(self.text())


def batch_loss(rows: list[TrainingRow], view_pairs: list[tuple[SampledView, SampledView]],
               params: ModelParams, cfg: TrainConfig,
               rng: np.random.Generator | None = None, training: bool = False,
               ) -> tuple[Tensor, BatchLossReport]:
    """Forward one batch and combine the three objectives.

    The auxiliary terms are computed once per row on the row's prefix; the
    alignment term is averaged over rows so every term scales as a
    per-row mean.
    """
    w = cfg.weights
    out = forward_batch(rows, view_pairs, params, rng, training,
                        unweighted=cfg.unweighted_edges)
    targets = np.array([r.target for r in rows])
    main = loss_main(out.scores, targets)
    # Rows with identical prefixes carry identical view representations;
    # they are the same sequence, not contrastive negatives of each other,
    # so the contrastive term sees one representative per distinct prefix.
    first_seen: dict[tuple, int] = {}
    for i, row in enumerate(rows):
        first_seen.setdefault(row.prefix, i)
    unique = np.array(sorted(first_seen.values()))
    if len(unique) < len(rows):
        z_prime = ad.gather_rows(out.z_prime, unique)
        z_second = ad.gather_rows(out.z_second, unique)
    else:
        z_prime, z_second = out.z_prime, out.z_second
    gcl = loss_gcl(z_prime, z_second, w.tau, symmetric=w.gcl_symmetric)
    mmd_terms = [loss_mmd(e0, q1, q2, w.rho, w.rho_median_heuristic)
                 for e0, q1, q2 in out.per_row]
    mmd_sum = mmd_terms[0]
    for term in mmd_terms[1:]:
        mmd_sum = ad.add(mmd_sum, term)
    mmd_mean = ad.scale(mmd_sum, 1.0 / len(mmd_terms))
    return loss_total(main, gcl, mmd_mean, w)


def sample_view_pair(graph: TransitionGraph, row: TrainingRow, cfg: TrainConfig,
                     epoch: int) -> tuple[SampledView, SampledView]:
    from .corpus import Sequence

    key_epoch = epoch if cfg.resample_per_epoch else 0
    seq = Sequence(row.user_index, row.prefix)
    return (sample_view(graph, seq, cfg.sampler, draw=1, epoch=key_epoch),
            sample_view(graph, seq, cfg.sampler, draw=2, epoch=key_epoch))


def adam_step(state: TrainState, grads, cfg: TrainConfig, lr: float) -> None:
    """Bias-corrected Adam with decoupled weight decay (both scaled by lr).

    Gradients are jointly rescaled when their global norm exceeds
    ``cfg.grad_clip`` (the cosine terms can spike when a pooled view
    representation gets small). The padding row of the item table takes
    no update and no decay.
    """
    state.step += 1
    t = state.step
    b1, b2, eps = cfg.beta1, cfg.beta2, cfg.eps
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    clip_scale = 1.0
    if cfg.grad_clip > 0.0:
        sq = 0.0
        for _, param in state.params.named():
            g = grads[param]
            sq += float((g * g).sum())
        gnorm = math.sqrt(sq)
        if gnorm > cfg.grad_clip:
            clip_scale = cfg.grad_clip / gnorm
    for name, param in state.params.named():
        g = grads[param]
        if clip_scale != 1.0:
            g = g * clip_scale
        if name == "item_emb":
            g = g.copy() if g is grads[param] else g
            g[0] = 0.0
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        mhat = m / c1
        vhat = v / c2
        param.data -= lr * (mhat / (np.sqrt(vhat) + eps) + cfg.l2 * param.data)
        if name == "item_emb":
            param.data[0] = 0.0


def training_rows(dataset: SplitDataset, max_len: int) -> list[TrainingRow]:
    rows = []
    for seq in dataset.train:
        if len(seq.items) >= 2:
            rows.extend(expand_subsequences(seq, max_len))
    return rows


@dataclass
class TrainResult:
    best: ModelParams      # checkpoint with the highest validation HR@10
    last: ModelParams      # parameters after the final epoch
    log: TrainingLog


def train(dataset: SplitDataset, graph: TransitionGraph, cfg: TrainConfig) -> TrainResult:
    """Fit the model; keeps both the best-validation and final checkpoints."""
    cfg = cfg.effective()
    log = TrainingLog()
    rows = training_rows(dataset, cfg.model.max_len)
    if not rows:
        raise TrainingError("no training rows (empty or degenerate training split)")

    user_count = max(s.user_index for s in dataset.full) + 1
    params = init_params(cfg.model, graph.node_count, user_count,
                         rngmod.stream(cfg.seed, "init"))
    state = TrainState.fresh(params)
    best_params = params.copy()
    log.note(f"train rows {len(rows)} users {user_count} items {graph.node_count}")

    for epoch in range(cfg.max_epochs):
        lr = cfg.learning_rate * cfg.lr_decay_factor ** (epoch // cfg.lr_decay_interval)
        order = rngmod.stream(cfg.seed, "shuffle", epoch).permutation(len(rows))
        dropout_rng = rngmod.stream(cfg.seed, "dropout", epoch)

        for start in range(0, len(rows), cfg.batch_size):
            batch = [rows[i] for i in order[start:start + cfg.batch_size]]
            pairs = [sample_view_pair(graph, row, cfg, epoch) for row in batch]
            try:
                with Tape() as tape:
                    total, report = batch_loss(batch, pairs, params, cfg,
                                               rng=dropout_rng, training=True)
            except ValueError as e:
                raise TrainingError(
                    f"non-finite loss at epoch {epoch} step {state.step}: {e}") from e
            grads = backward(tape, total)
            adam_step(state, grads, cfg, lr)
            log.step(state.step, report)

        report = evaluation.evaluate(params, dataset, graph, "valid", cfg)
        if report.hr10 > state.best_metric:
            state.best_metric = report.hr10
            state.best_epoch = epoch
            state.since_improve = 0
            best_params = params.copy()
        else:
            state.since_improve += 1
        log.epoch(epoch, lr, report.hr10, state.best_metric)
        if state.since_improve >= cfg.patience:
            log.note(f"early stop at epoch {epoch} (best epoch {state.best_epoch})")
            break

    return TrainResult(best_params, params, log)
