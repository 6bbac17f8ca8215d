"""Predictive models: the models under evaluation and the surrogates.

Two prediction roles are used throughout the package:

* regression models expose ``predict(X) -> RegressionPrediction`` carrying a
  mean and the *total* predictive variance (posterior plus noise) per point;
* classifiers expose ``predict_probs(X) -> (n, C)`` probability rows, and,
  when they are ensembles, ``predict_member_probs(X) -> (E, n, C)``.

Fitted models are treated as immutable; retraining builds a fresh model via
``spawn().fit(...)``, which is how the surrogate schedule consumes them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.spatial.distance import cdist

from . import _forest_numba as _fn

__all__ = [
    "KernelParams",
    "RegressionPrediction",
    "ClassPrediction",
    "matern32",
    "matern32_matrix",
    "factorize_kernel",
    "GaussianProcess",
    "LinearModel",
    "RandomForest",
    "Ensemble",
    "ensemble_predict",
    "ScheduleMode",
    "SurrogateSchedule",
    "apply_schedule",
]

MAX_JITTER = 1e-2


@dataclass(frozen=True)
class KernelParams:
    """Matern-3/2 kernel hyperparameters (no optimization, fixed by the caller)."""

    length_scale: float = 1.0
    output_variance: float = 1.0
    jitter: float = 1e-6

    def __post_init__(self):
        if self.length_scale <= 0.0:
            raise ValueError("length_scale must be positive")
        if self.output_variance <= 0.0:
            raise ValueError("output_variance must be positive")
        if self.jitter < 0.0:
            raise ValueError("jitter must be nonnegative")


@dataclass(frozen=True)
class RegressionPrediction:
    """Per-point predictive mean and total variance (aligned arrays)."""

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        var = np.atleast_1d(np.asarray(self.variance, dtype=float))
        if mean.shape != var.shape:
            raise ValueError("mean and variance shapes differ")
        if np.any(var < 0.0):
            raise ValueError("negative predictive variance")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", var)


@dataclass(frozen=True)
class ClassPrediction:
    """Per-point class probability rows, shape (n, C)."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.probs, dtype=float))
        if np.any(p < 0.0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("rows must be probability vectors")
        object.__setattr__(self, "probs", p)


def matern32(r, params: KernelParams = KernelParams()):
    """Matern covariance with smoothness 3/2 at distance r."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0.0):
        raise ValueError("distances must be nonnegative")
    z = np.sqrt(3.0) * r / params.length_scale
    return params.output_variance * (1.0 + z) * np.exp(-z)


def matern32_matrix(XA, XB, params: KernelParams = KernelParams()) -> np.ndarray:
    XA = np.atleast_2d(np.asarray(XA, dtype=float))
    XB = np.atleast_2d(np.asarray(XB, dtype=float))
    return matern32(cdist(XA, XB), params)


def factorize_kernel(K: np.ndarray, base_jitter: float):
    """Cholesky of K + jitter*I, escalating jitter tenfold on failure.

    Returns (lower factor, jitter actually used). Escalation starts from the
    configured jitter (1e-6 if that is zero) and gives up beyond ``MAX_JITTER``
    because by then the matrix is not usably positive definite.
    """
    n = K.shape[0]
    jitter = base_jitter
    while True:
        try:
            c, low = cho_factor(K + jitter * np.eye(n), lower=True)
            return np.tril(c), jitter
        except np.linalg.LinAlgError:
            jitter = 1e-6 if jitter == 0.0 else jitter * 10.0
            if jitter > MAX_JITTER:
                raise np.linalg.LinAlgError("kernel matrix not SPD") from None


class GaussianProcess:
    """Zero-mean GP regressor with a Matern-3/2 kernel and fixed noise level.

    ``predict`` reports the total predictive variance: the posterior variance
    of the latent function plus the observation noise variance, which is what
    expected-loss scoring needs.
    """

    def __init__(self, params: KernelParams = KernelParams(), noise_variance: float = 0.0):
        if noise_variance < 0.0:
            raise ValueError("noise_variance must be nonnegative")
        self.params = params
        self.noise_variance = noise_variance
        self._x = None
        self._chol = None
        self._alpha = None

    def spawn(self) -> "GaussianProcess":
        """Fresh unfitted model with the same hyperparameters."""
        return GaussianProcess(self.params, self.noise_variance)

    def fit(self, X, y, rng: np.random.Generator | None = None) -> "GaussianProcess":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float)
        if X.shape[0] == 0:
            raise ValueError("need at least one training point")
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y differ in length")
        K = matern32_matrix(X, X, self.params) + self.noise_variance * np.eye(X.shape[0])
        chol, _ = factorize_kernel(K, self.params.jitter)
        self._x = X
        self._chol = chol
        self._alpha = cho_solve((chol, True), y)
        return self

    @property
    def is_fitted(self) -> bool:
        return self._chol is not None

    def predict(self, X) -> RegressionPrediction:
        if not self.is_fitted:
            raise RuntimeError("predict called before fit")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        kx = matern32_matrix(self._x, X, self.params)
        mean = kx.T @ self._alpha
        v = solve_triangular(self._chol, kx, lower=True)
        posterior = self.params.output_variance - np.sum(v * v, axis=0)
        posterior = np.maximum(posterior, 0.0)
        return RegressionPrediction(mean, posterior + self.noise_variance)


class LinearModel:
    """Ordinary least squares with an intercept.

    The reported predictive variance is the training residual mean square,
    constant in x; it only matters when the model serves as a surrogate, and
    any fixed nonnegative convention works there.
    """

    def __init__(self):
        self._beta = None
        self._residual_ms = None

    def spawn(self) -> "LinearModel":
        return LinearModel()

    def fit(self, X, y, rng: np.random.Generator | None = None) -> "LinearModel":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float)
        n, d = X.shape
        if n < d + 1:
            raise ValueError(f"need at least {d + 1} points for an affine fit in {d}-d")
        design = np.hstack([np.ones((n, 1)), X])
        beta, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
        if rank < d + 1:
            raise ValueError("rank-deficient design")
        resid = y - design @ beta
        self._beta = beta
        self._residual_ms = float(np.mean(resid**2))
        return self

    @property
    def is_fitted(self) -> bool:
        return self._beta is not None

    def predict(self, X) -> RegressionPrediction:
        if not self.is_fitted:
            raise RuntimeError("predict called before fit")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        mean = self._beta[0] + X @ self._beta[1:]
        return RegressionPrediction(mean, np.full(X.shape[0], self._residual_ms))


class SplitCriterion(str, Enum):
    ENTROPY = "entropy"
    GINI = "gini"


class MaxFeatures(str, Enum):
    SQRT = "sqrt"
    ALL = "all"


class RandomForest:
    """Bootstrap-aggregated decision trees with deterministic construction.

    Trees grow to purity (no depth cap, one sample per leaf minimum), split at
    midpoints of sorted unique feature values, and break equal-gain ties by
    lowest feature index then lowest threshold. Predicted probabilities are
    vote fractions, hence exact multiples of 1/n_trees. The whole structure is
    a pure function of (data, seed).
    """

    def __init__(
        self,
        n_trees: int = 100,
        criterion: SplitCriterion = SplitCriterion.ENTROPY,
        max_features: MaxFeatures = MaxFeatures.SQRT,
        n_classes: int | None = None,
    ):
        if n_trees < 1:
            raise ValueError("n_trees must be positive")
        self.n_trees = n_trees
        self.criterion = SplitCriterion(criterion)
        self.max_features = MaxFeatures(max_features)
        self.n_classes = n_classes
        self._nodes = None

    def spawn(self) -> "RandomForest":
        return RandomForest(self.n_trees, self.criterion, self.max_features, self.n_classes)

    def fit(self, X, y, rng: np.random.Generator | None = None, seed: int | None = None):
        X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
        y = np.asarray(y)
        if X.shape[0] == 0:
            raise ValueError("empty training set")
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y differ in length")
        labels = y.astype(np.int32)
        if np.any(labels < 0):
            raise ValueError("class labels must be nonnegative integers")
        n_classes = self.n_classes
        if n_classes is None:
            n_classes = int(labels.max()) + 1
        if seed is None:
            if rng is None:
                raise ValueError("provide rng or seed for a deterministic fit")
            seed = int(rng.integers(0, np.iinfo(np.uint64).max, dtype=np.uint64))
        d = X.shape[1]
        if self.max_features is MaxFeatures.SQRT:
            mf = max(1, int(np.sqrt(d)))
        else:
            mf = d
        order = np.empty((d, X.shape[0]), dtype=np.int32)
        for f in range(d):
            order[f] = np.argsort(X[:, f], kind="stable").astype(np.int32)
        self._nodes = _fn.fit_forest(
            X,
            labels,
            n_classes,
            order,
            self.n_trees,
            mf,
            self.criterion is SplitCriterion.ENTROPY,
            np.uint64(seed),
        )
        self._fitted_classes = n_classes
        self._seed = int(seed)
        return self

    @property
    def is_fitted(self) -> bool:
        return self._nodes is not None

    def node_arrays(self):
        """Raw (feature, threshold, left, right, vote, n_nodes) arrays."""
        if not self.is_fitted:
            raise RuntimeError("node_arrays called before fit")
        return self._nodes

    def predict_probs(self, X) -> np.ndarray:
        if not self.is_fitted:
            raise RuntimeError("predict called before fit")
        X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
        feature, threshold, left, right, vote, _ = self._nodes
        counts = _fn.forest_votes(
            feature, threshold, left, right, vote, X, self._fitted_classes
        )
        return counts / self.n_trees

    def predict_member_probs(self, X) -> np.ndarray:
        """One-hot probabilities per tree, shape (n_trees, n, C)."""
        if not self.is_fitted:
            raise RuntimeError("predict called before fit")
        X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
        feature, threshold, left, right, vote, _ = self._nodes
        votes = _fn.forest_member_votes(feature, threshold, left, right, vote, X)
        out = np.zeros((self.n_trees, X.shape[0], self._fitted_classes))
        rows = np.arange(X.shape[0])
        for t in range(self.n_trees):
            out[t, rows, votes[t]] = 1.0
        return out


class Ensemble:
    """A bag of models of one role, combined by :func:`ensemble_predict`."""

    def __init__(self, members: Sequence):
        if len(members) == 0:
            raise ValueError("ensemble needs at least one member")
        self.members = list(members)

    def spawn(self) -> "Ensemble":
        return Ensemble([m.spawn() for m in self.members])

    def fit(self, X, y, rng: np.random.Generator | None = None) -> "Ensemble":
        for m in self.members:
            m.fit(X, y, rng=rng)
        return self

    @property
    def is_fitted(self) -> bool:
        return all(getattr(m, "is_fitted", False) for m in self.members)

    def predict(self, X) -> RegressionPrediction:
        return ensemble_predict([m.predict(X) for m in self.members])

    def predict_probs(self, X) -> np.ndarray:
        return ensemble_predict(
            [ClassPrediction(m.predict_probs(X)) for m in self.members]
        ).probs

    def predict_member_probs(self, X) -> np.ndarray:
        return np.stack([m.predict_probs(X) for m in self.members])


def ensemble_predict(members: Sequence):
    """Combine aligned member predictions into one.

    Classification: entrywise mean of the probability rows. Regression: mean
    of means; the variance is the mean member variance plus the variance of
    the member means (law of total variance), so ensemble spread counts as
    epistemic uncertainty.
    """
    if len(members) == 0:
        raise ValueError("ensemble needs at least one member")
    first = members[0]
    if isinstance(first, ClassPrediction):
        probs = np.stack([m.probs for m in members])
        if any(m.probs.shape != first.probs.shape for m in members):
            raise ValueError("member prediction shapes differ")
        return ClassPrediction(probs.mean(axis=0))
    if isinstance(first, RegressionPrediction):
        means = np.stack([m.mean for m in members])
        variances = np.stack([m.variance for m in members])
        if any(m.mean.shape != first.mean.shape for m in members):
            raise ValueError("member prediction shapes differ")
        mean = means.mean(axis=0)
        total = variances.mean(axis=0) + means.var(axis=0)
        return RegressionPrediction(mean, total)
    raise TypeError(f"cannot combine predictions of type {type(first).__name__}")


# ---------------------------------------------------------------------------
# Surrogate retraining schedule
# ---------------------------------------------------------------------------

class ScheduleMode(str, Enum):
    EVERY_STEP = "every_step"
    FIXED_STEPS = "fixed_steps"
    TRAIN_ONCE = "train_once"


@dataclass(frozen=True)
class SurrogateSchedule:
    """When the surrogate is refit on train plus observed-test data.

    Step 0 is the initial fit before any acquisition; step m >= 1 means a
    refit right after the m-th label arrives. Fits scheduled at or beyond the
    final acquisition are skipped because nothing is scored afterwards.
    """

    mode: ScheduleMode
    retrain_steps: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        mode = ScheduleMode(self.mode)
        object.__setattr__(self, "mode", mode)
        steps = frozenset(int(s) for s in self.retrain_steps)
        if any(s < 0 for s in steps):
            raise ValueError("retrain steps must be nonnegative")
        if mode is ScheduleMode.FIXED_STEPS and not steps:
            raise ValueError("fixed_steps schedule needs at least one step")
        object.__setattr__(self, "retrain_steps", steps)

    def fires_at(self, step: int) -> bool:
        if self.mode is ScheduleMode.EVERY_STEP:
            return True
        if self.mode is ScheduleMode.TRAIN_ONCE:
            return step == 0
        return step in self.retrain_steps


def apply_schedule(schedule: SurrogateSchedule, step: int, refit, current):
    """Return (surrogate, refit happened) for one step of the loop."""
    if schedule.fires_at(step):
        return refit(), True
    return current, False
