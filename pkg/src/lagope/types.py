"""Domain types: logged samples, datasets, fold assignments, estimate reports.

All containers are immutable after construction (arrays are marked read-only),
so they can be shared freely across parallel workers.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .validation import check_actions, check_matrix, check_vector


@dataclass(frozen=True)
class LaggedSample:
    """One logged interaction: current context, lag contexts, action, reward.

    Parameters
    ----------
    x : ndarray of shape (d,)
        Current context.
    x_lags : tuple of ndarray, each of shape (d,)
        Lagged contexts, one per configured lag.
    a : int
        Logged action index.
    r : float
        Observed reward.
    logged_propensity : float or None
        Logging probability of the observed action when known (synthetic mode);
        must lie in (0, 1].
    """

    x: np.ndarray
    x_lags: tuple[np.ndarray, ...]
    a: int
    r: float
    logged_propensity: float | None = None

    def __post_init__(self):
        d = self.x.shape[0]
        for k, lag in enumerate(self.x_lags):
            if lag.shape[0] != d:
                raise InvalidInputError(
                    f"lag {k} has length {lag.shape[0]}, expected {d}"
                )
        if self.logged_propensity is not None and not (
            0.0 < self.logged_propensity <= 1.0
        ):
            raise InvalidInputError(
                f"logged_propensity must be in (0, 1], got {self.logged_propensity}"
            )


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class LaggedDataset:
    """Logged bandit data with lagged contexts, stored column-wise.

    Parameters
    ----------
    x : ndarray of shape (n, d)
        Current contexts.
    x_lags : ndarray of shape (n, K, d)
        Lagged contexts; ``K`` may be zero for lag-free data.
    a : ndarray of shape (n,)
        Logged action indices in ``[0, num_actions)``.
    r : ndarray of shape (n,)
        Observed rewards.
    num_actions : int
        Size of the action space.
    lag_labels : tuple of str
        One identifier per lag (e.g. hours).
    logged_propensity : ndarray of shape (n,) or None
        Logging probabilities of the observed actions, when known.
    """

    x: np.ndarray
    x_lags: np.ndarray
    a: np.ndarray
    r: np.ndarray
    num_actions: int
    lag_labels: tuple[str, ...] = ()
    logged_propensity: np.ndarray | None = None

    def __post_init__(self):
        x = check_matrix(self.x, "x")
        n, d = x.shape
        if n == 0:
            raise InvalidInputError("dataset must be nonempty")
        x_lags = np.asarray(self.x_lags, dtype=float)
        if x_lags.ndim != 3 or x_lags.shape[0] != n or x_lags.shape[2] != d:
            raise InvalidInputError(
                f"x_lags must have shape (n, K, d)=({n}, K, {d}), got {x_lags.shape}"
            )
        if len(self.lag_labels) != x_lags.shape[1]:
            raise InvalidInputError(
                f"{len(self.lag_labels)} lag labels for {x_lags.shape[1]} lags"
            )
        a = check_actions(self.a, "a", self.num_actions)
        if a.shape[0] != n:
            raise InvalidInputError("a must have one entry per sample")
        r = check_vector(self.r, "r", length=n)
        prop = self.logged_propensity
        if prop is not None:
            prop = check_vector(prop, "logged_propensity", length=n)
            if (prop <= 0).any() or (prop > 1).any():
                raise InvalidInputError("logged_propensity must lie in (0, 1]")
            prop = _freeze(prop)
        object.__setattr__(self, "x", _freeze(x))
        object.__setattr__(self, "x_lags", _freeze(x_lags))
        object.__setattr__(self, "a", _freeze(a))
        object.__setattr__(self, "r", _freeze(r))
        object.__setattr__(self, "lag_labels", tuple(str(s) for s in self.lag_labels))
        object.__setattr__(self, "logged_propensity", prop)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def num_lags(self) -> int:
        return self.x_lags.shape[1]

    def lag(self, k: int) -> np.ndarray:
        """Lag-``k`` contexts as an (n, d) array (``k`` is 0-based)."""
        if not 0 <= k < self.num_lags:
            raise InvalidInputError(
                f"lag index {k} out of range for {self.num_lags} lags"
            )
        return self.x_lags[:, k, :]

    def sample(self, i: int) -> LaggedSample:
        """Row ``i`` as a :class:`LaggedSample`."""
        prop = None if self.logged_propensity is None else float(self.logged_propensity[i])
        return LaggedSample(
            x=self.x[i].copy(),
            x_lags=tuple(self.x_lags[i, k].copy() for k in range(self.num_lags)),
            a=int(self.a[i]),
            r=float(self.r[i]),
            logged_propensity=prop,
        )

    @property
    def samples(self) -> list[LaggedSample]:
        return [self.sample(i) for i in range(self.n)]

    @classmethod
    def from_samples(
        cls,
        samples: list[LaggedSample],
        num_actions: int,
        lag_labels: tuple[str, ...] = (),
    ) -> "LaggedDataset":
        if not samples:
            raise InvalidInputError("dataset must be nonempty")
        k = len(samples[0].x_lags)
        d = samples[0].x.shape[0]
        props = [s.logged_propensity for s in samples]
        has_prop = all(p is not None for p in props)
        if any(p is not None for p in props) and not has_prop:
            raise InvalidInputError(
                "logged_propensity must be present for all samples or none"
            )
        if not lag_labels:
            lag_labels = tuple(str(i + 1) for i in range(k))
        return cls(
            x=np.array([s.x for s in samples], dtype=float),
            x_lags=np.array(
                [[lag for lag in s.x_lags] for s in samples], dtype=float
            ).reshape(len(samples), k, d),
            a=np.array([s.a for s in samples], dtype=np.int64),
            r=np.array([s.r for s in samples], dtype=float),
            num_actions=num_actions,
            lag_labels=lag_labels,
            logged_propensity=np.array(props, dtype=float) if has_prop else None,
        )


@dataclass(frozen=True)
class FoldAssignment:
    """Partition of sample indices into cross-fitting folds.

    Invariants: every fold is nonempty and fold sizes differ by at most one.
    """

    fold_of: np.ndarray
    n_folds: int

    def __post_init__(self):
        fold_of = np.asarray(self.fold_of, dtype=np.int64)
        sizes = np.bincount(fold_of, minlength=self.n_folds)
        if len(sizes) != self.n_folds or (sizes == 0).any():
            raise InvalidInputError("every fold must be nonempty")
        if sizes.max() - sizes.min() > 1:
            raise InvalidInputError("fold sizes may differ by at most 1")
        object.__setattr__(self, "fold_of", _freeze(fold_of))

    @property
    def n(self) -> int:
        return self.fold_of.shape[0]

    def test_indices(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == j)

    def train_indices(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != j)


@dataclass(frozen=True)
class EstimateReport:
    """A point estimate with Wald inference and weight diagnostics.

    Attributes
    ----------
    value : float
        Point estimate of the policy value.
    se : float
        Influence-function standard error.
    ci_low, ci_high : float
        Wald confidence interval endpoints.
    ess : float
        Effective sample size of the importance weights (``n`` for
        non-importance-weighted estimators).
    per_lag_values : tuple of float
        Per-lag point estimates (empty for single-formula estimators).
    lag_weights_alpha : tuple of float
        Softmin lag weights used for aggregation (empty when not applicable).
    estimator_name : str
        Tag identifying the estimator.
    influence : ndarray of shape (n,)
        Centered per-sample influence contributions (mean zero by construction);
        not serialized.
    """

    value: float
    se: float
    ci_low: float
    ci_high: float
    ess: float
    estimator_name: str
    per_lag_values: tuple[float, ...] = ()
    lag_weights_alpha: tuple[float, ...] = ()
    influence: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.se < 0:
            raise InvalidInputError(f"se must be >= 0, got {self.se}")
        if not (self.ci_low <= self.value <= self.ci_high):
            raise InvalidInputError(
                f"CI [{self.ci_low}, {self.ci_high}] must contain value {self.value}"
            )
        if self.lag_weights_alpha:
            total = float(np.sum(self.lag_weights_alpha))
            if abs(total - 1.0) > 1e-9:
                raise InvalidInputError(f"lag weights must sum to 1, got {total}")

    def csv_row(self) -> list[str]:
        """Serialize to one results row: estimator, value, se, CI, ESS, alphas."""
        row = [
            self.estimator_name,
            repr(self.value),
            repr(self.se),
            repr(self.ci_low),
            repr(self.ci_high),
            repr(self.ess),
        ]
        row.extend(repr(a) for a in self.lag_weights_alpha)
        return row

    @staticmethod
    def csv_header(num_lags: int = 0) -> list[str]:
        head = ["estimator", "value", "se", "ci_low", "ci_high", "ess"]
        head.extend(f"alpha_{k + 1}" for k in range(num_lags))
        return head
