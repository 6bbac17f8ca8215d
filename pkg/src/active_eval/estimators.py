"""Risk estimators for actively sampled test labels.

The target quantity is the mean loss over a finite evaluation pool of size N.
When labels are acquired by a non-uniform, without-replacement sampling scheme,
the plain subsample mean is biased towards whatever the scheme prefers. The
LURE estimator (levelled unbiased risk estimator) removes that bias with
per-step importance weights while keeping the estimator's variance low; with a
good proposal the variance drops far below uniform subsampling.

Also provided is the classic with-replacement importance-sampling estimator
used by the ARE baseline, which self-normalizes so that only the proposal
probabilities of the drawn points are needed.

All functions are pure; summations go through numpy (pairwise summation), so
aggregating long trajectories does not drift beyond the documented tolerances.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "EstimatorKind",
    "AcquisitionRecord",
    "RiskEstimate",
    "full_empirical_risk",
    "iid_risk",
    "lure_weight",
    "lure_weights",
    "lure_risk",
    "lure_trajectory",
    "running_mean",
    "are_is_risk",
    "are_is_trajectory",
    "save_trajectory",
    "load_trajectory",
    "TRAJECTORY_COLUMNS",
]

#: Relative tolerance when cross-checking stored weights against recomputation.
WEIGHT_CHECK_RTOL = 1e-12


class EstimatorKind(str, Enum):
    """Which estimator produced a risk value."""

    FULL = "full"
    IID = "iid"
    LURE = "lure"
    ARE_IS = "are_is"
    ARE_NAIVE_WITHOUT_REPLACEMENT = "are_naive_without_replacement"
    ARE_NAIVE_RHAT_IID = "are_naive_rhat_iid"


@dataclass(frozen=True)
class AcquisitionRecord:
    """One step of a without-replacement acquisition trajectory.

    ``step_m`` is 1-based. ``proposal_prob`` is the probability with which
    ``pool_index`` was drawn among the points still unlabelled at that step.
    ``lure_weight`` is the importance weight for the trajectory's final length.
    """

    step_m: int
    pool_index: int
    proposal_prob: float
    loss: float
    lure_weight: float


@dataclass(frozen=True)
class RiskEstimate:
    value: float
    num_labels_used: int
    estimator_kind: EstimatorKind


def full_empirical_risk(losses: Sequence[float]) -> float:
    """Mean loss over the entire pool (the oracle ground truth)."""
    arr = np.asarray(losses, dtype=float)
    if arr.size == 0:
        raise ValueError("empty pool")
    return float(np.mean(arr))


def iid_risk(acquired_losses: Sequence[float]) -> float:
    """Plain subsample mean; unbiased only for uniform acquisition."""
    arr = np.asarray(acquired_losses, dtype=float)
    if arr.size == 0:
        raise ValueError("no labels acquired")
    return float(np.mean(arr))


def lure_weight(m: int, M: int, N: int, q: float) -> float:
    """Importance weight for the m-th of M without-replacement draws from N points.

        v_m = 1 + (N - M) / (N - m) * (1 / ((N - m + 1) q) - 1)

    ``q`` is the probability of the drawn index among the N - m + 1 remaining
    points. At m = N (which forces M = N) the 0/0 factor is taken as 0, so
    v_N = 1; every weight is 1 in the M = N regime and the estimator reduces
    to the full-pool mean.
    """
    if not 1 <= m <= M <= N:
        raise ValueError(
            f"index out of range: need 1 <= m <= M <= N, got m={m}, M={M}, N={N}"
        )
    if q <= 0.0:
        raise ValueError(f"degenerate proposal: q must be positive, got {q}")
    if m == N:
        return 1.0
    return 1.0 + (N - M) / (N - m) * (1.0 / ((N - m + 1) * q) - 1.0)


def lure_weights(qs: Sequence[float], N: int, M: int | None = None) -> np.ndarray:
    """Vectorized ``lure_weight`` for steps 1..len(qs) of a trajectory."""
    q = np.asarray(qs, dtype=float)
    if M is None:
        M = q.size
    if not 1 <= M <= N:
        raise ValueError(f"index out of range: need 1 <= M <= N, got M={M}, N={N}")
    if q.size > M:
        raise ValueError("more proposal probabilities than acquisitions")
    if np.any(q <= 0.0):
        raise ValueError("degenerate proposal: q must be positive")
    m = np.arange(1, q.size + 1, dtype=float)
    w = np.ones(q.size)
    inner = m < N  # the m = N weight is 1 by convention
    w[inner] = 1.0 + (N - M) / (N - m[inner]) * (
        1.0 / ((N - m[inner] + 1.0) * q[inner]) - 1.0
    )
    return w


def lure_risk(records: Sequence[AcquisitionRecord], N: int) -> float:
    """LURE estimate from a complete without-replacement trajectory.

    Stored weights are recomputed from the proposal probabilities and
    cross-checked so that a corrupted (e.g. round-tripped) trajectory cannot
    silently bias the estimate.
    """
    if len(records) == 0:
        raise ValueError("no labels acquired")
    M = len(records)
    if M > N:
        raise ValueError(f"trajectory longer than pool: M={M} > N={N}")
    steps = np.array([r.step_m for r in records])
    if np.any(steps != np.arange(1, M + 1)):
        raise ValueError("corrupt trajectory: steps are not consecutive from 1")
    idx = [r.pool_index for r in records]
    if len(set(idx)) != M:
        raise ValueError("corrupt trajectory: repeated pool index")
    q = np.array([r.proposal_prob for r in records], dtype=float)
    stored = np.array([r.lure_weight for r in records], dtype=float)
    expected = lure_weights(q, N, M)
    scale = np.maximum(np.abs(expected), 1.0)
    if np.any(np.abs(stored - expected) > WEIGHT_CHECK_RTOL * scale):
        raise ValueError(
            "corrupt trajectory: stored weights do not match their proposal probabilities"
        )
    losses = np.array([r.loss for r in records], dtype=float)
    return float(np.mean(stored * losses))


def lure_trajectory(qs: Sequence[float], losses: Sequence[float], N: int) -> np.ndarray:
    """LURE estimate after every prefix of a without-replacement trajectory.

    The weights depend on the number of acquisitions M, so the estimate at
    step m treats the first m records as a complete trajectory of length m.
    Writing v_k = 1 + (N - M) a_k with a_k = (1 / ((N - k + 1) q_k) - 1) / (N - k)
    lets all prefixes share two cumulative sums, giving the whole curve in
    O(M) instead of O(M^2).
    """
    q = np.asarray(qs, dtype=float)
    L = np.asarray(losses, dtype=float)
    if q.size != L.size:
        raise ValueError("probabilities and losses differ in length")
    if q.size == 0:
        raise ValueError("no labels acquired")
    if q.size > N:
        raise ValueError(f"trajectory longer than pool: M={q.size} > N={N}")
    if np.any(q <= 0.0):
        raise ValueError("degenerate proposal: q must be positive")
    k = np.arange(1, q.size + 1, dtype=float)
    a = np.zeros(q.size)
    inner = k < N
    a[inner] = (1.0 / ((N - k[inner] + 1.0) * q[inner]) - 1.0) / (N - k[inner])
    sum_l = np.cumsum(L)
    sum_al = np.cumsum(a * L)
    m = np.arange(1, q.size + 1, dtype=float)
    return (sum_l + (N - m) * sum_al) / m


def running_mean(values: Sequence[float]) -> np.ndarray:
    """Unweighted mean after every prefix (the naive estimator trajectory)."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValueError("no labels acquired")
    return np.cumsum(arr) / np.arange(1, arr.size + 1)


def are_is_risk(records: Iterable[tuple[float, float]]) -> float:
    """Self-normalized importance-sampling estimate from with-replacement draws.

    ``records`` holds (proposal probability, loss) per query against a fixed
    proposal over the whole pool. The uniform pool measure cancels, leaving

        (sum_m loss_m / q_m) / (sum_m 1 / q_m).
    """
    rec = list(records)
    if len(rec) == 0:
        raise ValueError("no labels acquired")
    q = np.array([r[0] for r in rec], dtype=float)
    L = np.array([r[1] for r in rec], dtype=float)
    if np.any(q <= 0.0):
        raise ValueError("degenerate proposal: q must be positive")
    inv = 1.0 / q
    return float(np.sum(L * inv) / np.sum(inv))


def are_is_trajectory(qs: Sequence[float], losses: Sequence[float]) -> np.ndarray:
    """Self-normalized importance-sampling estimate after every prefix."""
    q = np.asarray(qs, dtype=float)
    L = np.asarray(losses, dtype=float)
    if q.size != L.size:
        raise ValueError("probabilities and losses differ in length")
    if q.size == 0:
        raise ValueError("no labels acquired")
    if np.any(q <= 0.0):
        raise ValueError("degenerate proposal: q must be positive")
    inv = 1.0 / q
    return np.cumsum(L * inv) / np.cumsum(inv)


# ---------------------------------------------------------------------------
# Trajectory serialization (one trajectory per file)
# ---------------------------------------------------------------------------

TRAJECTORY_COLUMNS = ["step", "pool_index", "proposal_prob", "loss", "lure_weight"]
_SCHEMA_LINE = "# schema=1"


def save_trajectory(path, records: Sequence[AcquisitionRecord]) -> None:
    """Write one acquisition trajectory as CSV (schema-versioned header)."""
    with open(path, "w", newline="") as fh:
        fh.write(_SCHEMA_LINE + "\n")
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_COLUMNS)
        for r in records:
            writer.writerow(
                [r.step_m, r.pool_index, repr(r.proposal_prob), repr(r.loss), repr(r.lure_weight)]
            )


def load_trajectory(path) -> list[AcquisitionRecord]:
    """Read a trajectory written by :func:`save_trajectory`."""
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != _SCHEMA_LINE:
            raise ValueError(f"unexpected schema line {first!r}")
        reader = csv.reader(fh)
        header = next(reader)
        if header != TRAJECTORY_COLUMNS:
            raise ValueError(f"unexpected trajectory columns {header!r}")
        records = []
        for row in reader:
            records.append(
                AcquisitionRecord(
                    step_m=int(row[0]),
                    pool_index=int(row[1]),
                    proposal_prob=float(row[2]),
                    loss=float(row[3]),
                    lure_weight=float(row[4]),
                )
            )
    return records
