"""Domain-discrepancy estimators.

Two routes to the same quantity: an exact brute-force computation over an
explicitly enumerated finite hypothesis class (used for verification), and
the discriminator-based empirical estimate used during training.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .autodiff import ContractError
from .models import Mlp


@dataclass(frozen=True)
class FiniteHypothesisClass:
    """Explicit binary labelings over a fixed finite ground set.

    ``labelings[k, i]`` is hypothesis k's 0/1 label for ground-set point i.
    """

    labelings: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.labelings, dtype=np.int8)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ContractError("labelings must be a nonempty 2-D array")
        if not np.isin(arr, (0, 1)).all():
            raise ContractError("labelings must be 0/1")
        object.__setattr__(self, "labelings", arr)

    @property
    def n_hypotheses(self) -> int:
        return self.labelings.shape[0]

    @property
    def n_points(self) -> int:
        return self.labelings.shape[1]


def all_labelings(n_points: int) -> FiniteHypothesisClass:
    """Every binary labeling of an n-point ground set (2**n hypotheses)."""
    if not 1 <= n_points <= 16:
        raise ContractError("all_labelings supports 1..16 points")
    rows = list(product((0, 1), repeat=n_points))
    return FiniteHypothesisClass(np.array(rows, dtype=np.int8))


def threshold_class(points_1d: np.ndarray) -> FiniteHypothesisClass:
    """Threshold functions h_c(x) = 1[x >= c] over a 1-D ground set.

    One labeling per distinct cut position of the sorted points (n+1 rows).
    """
    pts = np.asarray(points_1d, dtype=np.float64).ravel()
    if pts.size == 0:
        raise ContractError("ground set must be nonempty")
    order = np.argsort(pts, kind="stable")
    n = pts.size
    rows = np.zeros((n + 1, n), dtype=np.int8)
    for k in range(n + 1):
        rows[k, order[k:]] = 1
    return FiniteHypothesisClass(rows)


def _as_sample(sample, n_points: int, name: str) -> np.ndarray:
    idx = np.asarray(sample, dtype=np.int64).ravel()
    if idx.size == 0:
        raise ContractError(f"{name} is empty")
    if idx.min() < 0 or idx.max() >= n_points:
        raise ContractError(f"{name} indexes outside the ground set")
    return idx


def _pairwise_disagreement(labelings: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """[m, m] matrix of empirical P[h != h'] over the sample idx.

    For 0/1 labels, 1[a != b] = a + b - 2ab, so the whole matrix reduces to
    row sums and one Gram product over the sampled columns.
    """
    sub = labelings[:, idx].astype(np.float64)
    cnt = sub.sum(axis=1)
    gram = sub @ sub.T
    return (cnt[:, None] + cnt[None, :] - 2.0 * gram) / idx.size


def disagreement_rate(label_a: np.ndarray, label_b: np.ndarray,
                      sample) -> float:
    """Empirical fraction of sample points where two labelings differ."""
    a = np.asarray(label_a)
    b = np.asarray(label_b)
    idx = _as_sample(sample, a.size, "sample")
    return float(np.mean(a[idx] != b[idx]))


def hdh_exact(hclass: FiniteHypothesisClass, sample_p, sample_q) -> float:
    """Exact symmetric-difference divergence between two empirical samples.

    2 * max over hypothesis pairs (h, h') of
    |P_hat[h != h'] - Q_hat[h != h']|, by exhaustive pair enumeration.
    Samples are index multisets into the ground set.
    """
    sp = _as_sample(sample_p, hclass.n_points, "sample_P")
    sq = _as_sample(sample_q, hclass.n_points, "sample_Q")
    dis_p = _pairwise_disagreement(hclass.labelings, sp)
    dis_q = _pairwise_disagreement(hclass.labelings, sq)
    return float(2.0 * np.max(np.abs(dis_p - dis_q)))


def hdh_discriminator_estimate(d: Mlp, encoder: Mlp, current_x: np.ndarray,
                               past_x: np.ndarray, past_index: int) -> float:
    """Discriminator-based divergence estimate for one past domain.

    With delta(x) = [d(e(x))]_i - [d(e(x))]_t (i = past_index, t = head
    arity = current domain), the discriminator's balanced pairwise accuracy
    is b = 1/2 * [frac of past samples with delta >= 0
                  + frac of current samples with delta < 0],
    and the estimate is clamp(2 * (2b - 1), 0, 2): 0 when the discriminator
    does no better than chance, 2 when it separates the domains perfectly.
    """
    if current_x.shape[0] == 0 or past_x.shape[0] == 0:
        raise ContractError("both sample sets must be nonempty")
    p_cur = d.forward(encoder.logits(current_x)).data
    p_past = d.forward(encoder.logits(past_x)).data
    t = p_cur.shape[1]
    if not 1 <= past_index <= t - 1:
        raise ContractError(
            f"past_index must be in [1, {t - 1}], got {past_index}")
    col = past_index - 1
    delta_cur = p_cur[:, col] - p_cur[:, t - 1]
    delta_past = p_past[:, col] - p_past[:, t - 1]
    b = 0.5 * (np.mean(delta_past >= 0) + np.mean(delta_cur < 0))
    return float(np.clip(2.0 * (2.0 * b - 1.0), 0.0, 2.0))
