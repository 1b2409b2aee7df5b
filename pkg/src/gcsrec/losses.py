"""The three training objectives and their weighted combination.

* main: next-item cross-entropy over the full item catalog.
* gcl: in-batch InfoNCE between the two view representations of each row.
* mmd: Gaussian-kernel maximum mean discrepancy pulling the gated view
  representations toward the raw sequence embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import LossWeights


@dataclass
class BatchLossReport:
    total: float
    main: float
    gcl: float
    mmd: float


def loss_main(scores: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of the target items.

    scores: (B, |V|) with column j scoring item index j+1; targets are
    1-based item indices (never padding).
    """
    b, v = scores.shape
    targets = np.asarray(targets, dtype=np.int64)
    if np.any(targets < 1) or np.any(targets > v):
        raise ValueError("targets must be real item indices")
    onehot = np.zeros((b, v))
    onehot[np.arange(b), targets - 1] = 1.0
    probs = ad.softmax(scores)
    picked = ad.sum_last(ad.mul(probs, Tensor(onehot)))           # (B, 1)
    return ad.mean_all(ad.scale(ad.log(picked), -1.0))


def _nce_direction(logits: Tensor) -> Tensor:
    """Mean -log softmax of the diagonal against each row."""
    b = logits.shape[0]
    eye = Tensor(np.eye(b))
    probs = ad.softmax(logits)
    diag = ad.sum_last(ad.mul(probs, eye))
    return ad.mean_all(ad.scale(ad.log(diag), -1.0))


def loss_gcl(z_prime: Tensor, z_second: Tensor, tau: float, symmetric: bool = True) -> Tensor:
    """In-batch contrastive loss between paired view representations.

    Row i of each input is one sequence's pooled view embedding; the
    matching rows are positives and all cross pairs in the batch are
    negatives. Cosine similarities are scaled by 1/tau. A zero row is an
    error (cosine undefined; signals upstream collapse).
    """
    zp = ad.normalize_rows(z_prime)
    zs = ad.normalize_rows(z_second)
    logits = ad.scale(ad.matmul(zp, ad.transpose(zs)), 1.0 / tau)  # (B, B)
    forward = _nce_direction(logits)
    if not symmetric:
        return forward
    backward_dir = _nce_direction(ad.transpose(logits))
    return ad.scale(ad.add(forward, backward_dir), 0.5)


def mmd(x: Tensor, y: Tensor, rho: float) -> Tensor:
    """Biased V-statistic MMD with Gaussian kernel exp(-|a-b|^2 / 2 rho^2).

    Diagonal terms are included; the estimate is symmetric in x and y and
    exactly zero when the row multisets coincide.
    """
    c = -1.0 / (2.0 * rho * rho)
    kxx = ad.mean_all(ad.exp(ad.scale(ad.pairwise_sqdist(x, x), c)))
    kyy = ad.mean_all(ad.exp(ad.scale(ad.pairwise_sqdist(y, y), c)))
    kxy = ad.mean_all(ad.exp(ad.scale(ad.pairwise_sqdist(x, y), c)))
    return ad.add(ad.add(kxx, kyy), ad.scale(kxy, -2.0))


def median_bandwidth(e0: Tensor, q_prime: Tensor, q_second: Tensor) -> float:
    """Median pairwise distance across the pooled rows (a plain constant,
    not differentiated through)."""
    rows = np.concatenate([e0.data, q_prime.data, q_second.data], axis=0)
    diff = rows[:, None, :] - rows[None, :, :]
    dists = np.sqrt((diff * diff).sum(axis=-1))
    upper = dists[np.triu_indices(len(rows), k=1)]
    med = float(np.median(upper)) if upper.size else 1.0
    return med if med > 0 else 1.0


def loss_mmd(e0: Tensor, q_prime: Tensor, q_second: Tensor, rho: float,
             median_heuristic: bool = False) -> Tensor:
    """Alignment loss for one row: MMD(E0, Q') + MMD(E0, Q'')."""
    if median_heuristic:
        rho = median_bandwidth(e0, q_prime, q_second)
    return ad.add(mmd(e0, q_prime, rho), mmd(e0, q_second, rho))


def loss_total(main: Tensor, gcl: Tensor, mmd_term: Tensor,
               weights: LossWeights) -> tuple[Tensor, BatchLossReport]:
    """total = main + lambda1 * gcl + lambda2 * mmd.

    With both weights zero the total is bit-identical to the main term
    (the auxiliary values are still reported for logging).
    """
    total = ad.add(main, ad.add(ad.scale(gcl, weights.lambda1),
                                ad.scale(mmd_term, weights.lambda2)))
    report = BatchLossReport(total=float(total.data), main=float(main.data),
                             gcl=float(gcl.data), mmd=float(mmd_term.data))
    return total, report
