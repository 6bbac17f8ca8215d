"""Acquisition scoring, proposal clipping, and index sampling.

A strategy turns model and surrogate predictions into nonnegative scores over
the points still unlabelled; the scores estimate each point's expected loss
(or a stand-in for it). :func:`build_proposal` normalizes scores into a
distribution and enforces a probability floor so every remaining point keeps
nonzero mass, which the unbiasedness of the LURE estimator requires and which
also bounds its weights when the scores are badly calibrated.

Scoring functions accept scalars or aligned arrays and are pure. Sampling
takes an explicit numpy Generator, never ambient state.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .losses import (
    CLASSIFICATION_LOSSES,
    PROB_FLOOR,
    REGRESSION_LOSSES,
    LossKind,
)

__all__ = [
    "Strategy",
    "AcquisitionConfig",
    "ProposalDistribution",
    "score_expected_loss_regression",
    "score_expected_loss_cross_entropy",
    "score_expected_loss_accuracy",
    "score_self_entropy",
    "score_mutual_information",
    "are_model_risk",
    "score_are_mse",
    "build_proposal",
    "sample_index",
    "sample_with_replacement",
]

#: Proposal probabilities must sum to one within this absolute tolerance.
PROPOSAL_SUM_ATOL = 1e-12
_PROB_SUM_ATOL = 1e-9


class Strategy(str, Enum):
    EXPECTED_LOSS_REGRESSION = "expected_loss_regression"
    EXPECTED_LOSS_CROSS_ENTROPY = "expected_loss_cross_entropy"
    EXPECTED_LOSS_ACCURACY = "expected_loss_accuracy"
    SELF_ENTROPY = "self_entropy"
    MUTUAL_INFORMATION = "mutual_information"
    ARE_MSE = "are_mse"
    TRUE_LOSS_ORACLE = "true_loss_oracle"
    UNIFORM = "uniform"


_REGRESSION_STRATEGIES = frozenset(
    {Strategy.EXPECTED_LOSS_REGRESSION, Strategy.ARE_MSE}
)
_CLASSIFICATION_STRATEGIES = frozenset(
    {
        Strategy.EXPECTED_LOSS_CROSS_ENTROPY,
        Strategy.EXPECTED_LOSS_ACCURACY,
        Strategy.SELF_ENTROPY,
        Strategy.MUTUAL_INFORMATION,
    }
)
#: Strategies allowed to run without the probability floor.
UNCLIPPED_STRATEGIES = frozenset({Strategy.TRUE_LOSS_ORACLE, Strategy.UNIFORM})


@dataclass(frozen=True)
class AcquisitionConfig:
    """How the next test label is chosen: strategy, floor, and loss."""

    strategy: Strategy
    loss_kind: LossKind
    clip_alpha: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.clip_alpha <= 1.0:
            raise ValueError(f"clip_alpha must be in [0, 1], got {self.clip_alpha}")
        if self.clip_alpha == 0.0 and self.strategy not in UNCLIPPED_STRATEGIES:
            raise ValueError(
                f"clip_alpha=0 is only allowed for "
                f"{sorted(s.value for s in UNCLIPPED_STRATEGIES)}, "
                f"got strategy {self.strategy.value!r}"
            )
        if self.strategy in _REGRESSION_STRATEGIES and self.loss_kind not in REGRESSION_LOSSES:
            raise ValueError(
                f"strategy {self.strategy.value!r} needs a regression loss, "
                f"got {self.loss_kind.value!r}"
            )
        if (
            self.strategy in _CLASSIFICATION_STRATEGIES
            and self.loss_kind not in CLASSIFICATION_LOSSES
        ):
            raise ValueError(
                f"strategy {self.strategy.value!r} needs a classification loss, "
                f"got {self.loss_kind.value!r}"
            )


@dataclass(frozen=True)
class ProposalDistribution:
    """Normalized probabilities over the remaining pool indices."""

    remaining_indices: np.ndarray
    probs: np.ndarray
    clip_floor: float = 0.0

    def __post_init__(self):
        idx = np.asarray(self.remaining_indices)
        p = np.asarray(self.probs, dtype=float)
        if idx.shape != p.shape or idx.ndim != 1:
            raise ValueError("indices and probabilities must be aligned 1-d arrays")
        if idx.size == 0:
            raise ValueError("empty remaining set")
        if abs(p.sum() - 1.0) > PROPOSAL_SUM_ATOL:
            raise ValueError("proposal probabilities do not sum to 1")
        object.__setattr__(self, "remaining_indices", idx)
        object.__setattr__(self, "probs", p)

    def prob_of(self, pool_index: int) -> float:
        """Probability assigned to one remaining pool index."""
        pos = np.nonzero(self.remaining_indices == pool_index)[0]
        if pos.size == 0:
            raise KeyError(f"index {pool_index} is not in the remaining set")
        return float(self.probs[pos[0]])


# ---------------------------------------------------------------------------
# Scores (unnormalized expected-loss estimates)
# ---------------------------------------------------------------------------

def score_expected_loss_regression(model_mean, surrogate_mean, surrogate_variance):
    """Expected squared error under the surrogate's Gaussian beliefs.

    Decomposes into (model mean - surrogate mean)^2 plus the surrogate's
    *total* predictive variance, i.e. epistemic and aleatoric uncertainty
    together, not just a noise estimate.
    """
    mm = np.asarray(model_mean, dtype=float)
    sm = np.asarray(surrogate_mean, dtype=float)
    sv = np.asarray(surrogate_variance, dtype=float)
    if np.any(sv < 0.0):
        raise ValueError("invalid surrogate variance: negative")
    return (mm - sm) ** 2 + sv


def _check_prob_rows(p: np.ndarray, name: str) -> None:
    if np.any(p < 0.0):
        raise ValueError(f"{name} has negative entries")
    sums = p.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > _PROB_SUM_ATOL):
        raise ValueError(f"{name} is not normalized")


def score_expected_loss_cross_entropy(model_probs, surrogate_probs):
    """Cross-entropy between the surrogate's predictive and the model's.

    Model probabilities are floored at ``PROB_FLOOR`` before the log so that
    an overconfident model with exact zeros cannot blow the score up to
    infinity. With the model as its own surrogate this is the model's
    predictive entropy.
    """
    f = np.asarray(model_probs, dtype=float)
    pi = np.asarray(surrogate_probs, dtype=float)
    if f.shape != pi.shape:
        raise ValueError(f"probability shapes differ: {f.shape} vs {pi.shape}")
    _check_prob_rows(f, "model_probs")
    _check_prob_rows(pi, "surrogate_probs")
    return -np.sum(pi * np.log(np.maximum(f, PROB_FLOOR)), axis=-1)


def score_expected_loss_accuracy(model_probs, surrogate_probs):
    """Surrogate probability that the model's argmax class is wrong."""
    f = np.asarray(model_probs, dtype=float)
    pi = np.asarray(surrogate_probs, dtype=float)
    if f.shape != pi.shape:
        raise ValueError(f"probability shapes differ: {f.shape} vs {pi.shape}")
    _check_prob_rows(f, "model_probs")
    _check_prob_rows(pi, "surrogate_probs")
    best = np.argmax(f, axis=-1)
    return 1.0 - np.take_along_axis(pi, np.expand_dims(best, -1), axis=-1).squeeze(-1)


def score_self_entropy(model_probs):
    """Predictive entropy of the model, with 0 log 0 taken as 0."""
    p = np.asarray(model_probs, dtype=float)
    _check_prob_rows(p, "model_probs")
    return _entropy_rows(p)


def score_mutual_information(member_probs):
    """Disagreement of an ensemble: entropy of the mean minus mean entropy.

    ``member_probs`` stacks one probability vector (or one row per point) per
    ensemble member along the first axis. Nonnegative by Jensen's inequality;
    tiny negative rounding is clamped to 0.
    """
    p = np.asarray(member_probs, dtype=float)
    if p.ndim < 2 or p.shape[0] < 2:
        raise ValueError("mutual information requires an ensemble of at least 2 members")
    _check_prob_rows(p, "member_probs")
    mean = p.mean(axis=0)
    mean_entropy = _entropy_rows(mean)
    member_entropy = _entropy_rows(p).mean(axis=0)
    return np.maximum(mean_entropy - member_entropy, 0.0)


def _entropy_rows(p):
    terms = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    return -np.sum(terms, axis=-1)


def are_model_risk(pool_variances) -> float:
    """Pool-mean expected loss under the model's own Gaussian predictive.

    For squared error the per-point expectation is the predictive variance,
    so this is simply the mean variance over the pool.
    """
    v = np.asarray(pool_variances, dtype=float)
    if v.size == 0:
        raise ValueError("empty pool")
    if np.any(v < 0.0):
        raise ValueError("invalid predictive variance: negative")
    return float(np.mean(v))


def score_are_mse(sigma_sq, model_risk):
    """Fixed-proposal score of the ARE baseline for squared-error evaluation.

    sqrt(3 s^2 - 2 R s + R^2) with s the point's predictive variance and R the
    pool-level risk guess; the radicand is a positive-definite quadratic in s,
    so the root is always real.
    """
    s = np.asarray(sigma_sq, dtype=float)
    r = np.asarray(model_risk, dtype=float)
    if np.any(s < 0.0) or np.any(r < 0.0):
        raise ValueError("variance and model risk must be nonnegative")
    radicand = 3.0 * s**2 - 2.0 * r * s + r**2
    return np.sqrt(np.maximum(radicand, 0.0))


# ---------------------------------------------------------------------------
# Proposal construction and sampling
# ---------------------------------------------------------------------------

def build_proposal(scores, clip_alpha: float, remaining_indices=None) -> ProposalDistribution:
    """Normalize scores over the remaining pool and enforce the probability floor.

    Every remaining index ends up with probability at least ``clip_alpha / R``
    (R remaining points): entries below the floor are raised to exactly the
    floor and the above-floor mass is rescaled proportionally, repeating if the
    rescale pushes further entries under the floor. All-zero scores fall back
    to the uniform distribution.
    """
    s = np.asarray(scores, dtype=float)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("empty remaining set")
    if remaining_indices is None:
        remaining_indices = np.arange(s.size)
    else:
        remaining_indices = np.asarray(remaining_indices)
        if remaining_indices.shape != s.shape:
            raise ValueError("scores and remaining indices must be aligned")
    if not np.all(np.isfinite(s)):
        raise ValueError("invalid acquisition score")
    if np.any(s < 0.0):
        raise ValueError("invalid acquisition score: negative")
    total = s.sum()
    if total <= 0.0:
        probs = np.full(s.size, 1.0 / s.size)
    else:
        probs = s / total
    if not 0.0 <= clip_alpha <= 1.0:
        raise ValueError(f"clip_alpha must be in [0, 1], got {clip_alpha}")
    floor = clip_alpha / s.size
    if clip_alpha > 0.0:
        probs = _apply_floor(probs, floor)
    return ProposalDistribution(remaining_indices, probs, clip_floor=floor)


def _apply_floor(p: np.ndarray, floor: float) -> np.ndarray:
    """Raise sub-floor entries to the floor; rescale the rest to keep sum 1."""
    pinned = p < floor
    if not pinned.any():
        return p
    for _ in range(p.size):
        free = ~pinned
        if not free.any():
            break
        free_mass = 1.0 - pinned.sum() * floor
        if free_mass <= 0.0:
            break
        out = np.where(pinned, floor, p * (free_mass / p[free].sum()))
        newly = free & (out < floor)
        if not newly.any():
            return out
        pinned |= newly
    # Only reachable when the floor is 1/R (clip_alpha = 1): uniform.
    return np.full(p.size, floor)


def sample_index(dist: ProposalDistribution, rng: np.random.Generator) -> tuple[int, float]:
    """Draw one remaining index; returns (pool index, probability used)."""
    pos = int(rng.choice(dist.probs.size, p=dist.probs))
    return int(dist.remaining_indices[pos]), float(dist.probs[pos])


def sample_with_replacement(
    dist: ProposalDistribution, rng: np.random.Generator, count: int
) -> tuple[np.ndarray, np.ndarray]:
    """Independent categorical draws from a fixed full-pool proposal.

    Returns (pool indices, novelty flags); a draw is novel when its index has
    not appeared earlier in this sequence. The novel count is the flag sum.
    """
    if count < 1:
        raise ValueError("count must be positive")
    pos = rng.choice(dist.probs.size, size=count, p=dist.probs, replace=True)
    indices = np.asarray(dist.remaining_indices)[pos]
    seen: set[int] = set()
    novel = np.zeros(count, dtype=bool)
    for i, idx in enumerate(indices):
        if int(idx) not in seen:
            novel[i] = True
            seen.add(int(idx))
    return indices, novel
