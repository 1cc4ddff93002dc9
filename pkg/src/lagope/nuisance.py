"""Cross-fitted nuisance estimation.

For each fold and lag this module fits the lag propensity (action
probabilities given the lag context), the lag target marginal (target policy
probabilities regressed onto the lag context), and a reward model over the
concatenated (current, lag) features - either a plain per-action ridge or the
moment-targeted variant that additionally penalizes residual variation
detectable by a dictionary of centered critics. The residual-invariance score
of each lag and the clipped lag importance weights are derived from those
fits. Every cached prediction is out-of-fold: the models evaluated at sample
``i`` were trained without ``i``'s fold.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidConfigError, InvalidInputError
from .linear import MultinomialLogit, RidgeRegressor
from .policies import Policy
from .types import FoldAssignment, LaggedDataset
from .validation import floor_simplex


@dataclass(frozen=True)
class NuisanceConfig:
    """Hyperparameters for the cross-fitted nuisance stack.

    Defaults: 5 folds, ridge penalty 0.1, probability floor 1e-3, weight clip
    20, softmin temperature 0.05, moment penalty 0.1 with Gram ridge 1e-6,
    indicator reward features with threshold-augmented marginal features.
    Fewer folds or raw-linear features are configurable but noticeably
    degrade finite-sample inference on piecewise-constant reward families.
    """

    k_cf: int = 5
    reg: float = 0.1
    p_min: float = 1e-3
    clip: float = 20.0
    tau: float = 0.05
    mtri_penalty: float = 0.1
    gram_ridge: float = 1e-6
    reward_variant: str = "mtri"
    reward_features: str = "indicator"
    marginal_features: str = "threshold"
    seed: int = 0

    def __post_init__(self):
        if self.k_cf < 2:
            raise InvalidConfigError(f"k_cf must be >= 2, got {self.k_cf}")
        if self.reg <= 0 or self.p_min <= 0 or self.clip <= 0:
            raise InvalidConfigError("reg, p_min and clip must be positive")
        if self.tau <= 0:
            raise InvalidConfigError(f"tau must be > 0, got {self.tau}")
        if self.reward_variant not in ("plain", "mtri"):
            raise InvalidConfigError(
                f"reward_variant must be 'plain' or 'mtri', got {self.reward_variant!r}"
            )

    def feature_map(self) -> "RewardFeatureMap":
        return RewardFeatureMap(kind=self.reward_features)

    def marginal_feature_map(self) -> "RewardFeatureMap":
        return RewardFeatureMap(kind=self.marginal_features)


def kfold_split(n: int, k_cf: int, seed: int) -> FoldAssignment:
    """Random partition of ``[n]`` into ``k_cf`` folds with sizes differing by <= 1."""
    if k_cf < 2:
        raise InvalidConfigError(f"k_cf must be >= 2, got {k_cf}")
    if n < 2 * k_cf:
        raise InvalidConfigError(f"need n >= 2*k_cf, got n={n}, k_cf={k_cf}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0x666F6C64])))
    perm = rng.permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    for j, chunk in enumerate(np.array_split(perm, k_cf)):
        fold_of[chunk] = j
    return FoldAssignment(fold_of=fold_of, n_folds=k_cf)


def fit_ridge(features: np.ndarray, targets: np.ndarray, reg: float) -> RidgeRegressor:
    """Closed-form ridge fit (intercept unpenalized); see :class:`RidgeRegressor`."""
    return RidgeRegressor(reg=reg).fit(features, targets)


@dataclass(frozen=True)
class RewardFeatureMap:
    """Feature map for reward models, additive in the current and lag contexts.

    ``kind='linear'`` uses (intercept, x, x_lag). ``kind='threshold'`` (the
    default) additionally includes per-coordinate indicators ``1{x_j > t}``
    and ``1{x_lag_j > t}``: a raw-linear model cannot represent
    piecewise-constant reward families, leaving a current-context residual
    that defeats the bias cancellation, while the indicator basis keeps the
    model additive so residual invariance stays attainable.
    """

    kind: str = "threshold"
    threshold: float = 0.5

    def __post_init__(self):
        if self.kind not in ("linear", "threshold", "indicator"):
            raise InvalidConfigError(f"unknown feature map kind {self.kind!r}")

    def _expand(self, z: np.ndarray) -> np.ndarray:
        if self.kind == "linear":
            return z
        indicators = (z > self.threshold).astype(float)
        if self.kind == "indicator":
            return indicators
        return np.hstack([z, indicators])

    def __call__(self, x: np.ndarray, x_lag: np.ndarray) -> np.ndarray:
        """Full model features: intercept, expanded current, expanded lag."""
        return np.hstack(
            [np.ones((x.shape[0], 1)), self._expand(x), self._expand(x_lag)]
        )

    def full_features(self, x: np.ndarray, x_lag: np.ndarray) -> np.ndarray:
        """Expanded (current, lag) features without intercept (for residual fits)."""
        return np.hstack([self._expand(x), self._expand(x_lag)])

    def lag_features(self, x_lag: np.ndarray) -> np.ndarray:
        """Expanded lag features without intercept."""
        return self._expand(x_lag)


@dataclass(frozen=True)
class SimplexRidgeModel:
    """Per-action ridge whose predictions are projected to a floored simplex."""

    ridge: RidgeRegressor
    p_min: float

    def predict_proba(self, x_lag: np.ndarray) -> np.ndarray:
        return floor_simplex(self.ridge.predict(x_lag), self.p_min)


@dataclass(frozen=True)
class RewardModel:
    """Per-action linear reward model over additive (current, lag) features.

    ``moments_`` holds the centered-critic moment vector at the fitted
    coefficients (moment-targeted variant only, training-set value).
    """

    coef: np.ndarray
    variant: str
    feature_map: RewardFeatureMap = RewardFeatureMap()
    fallback_actions: tuple[int, ...] = ()
    moments_: np.ndarray | None = field(default=None, repr=False, compare=False)

    def predict_all(self, x: np.ndarray, x_lag: np.ndarray) -> np.ndarray:
        """Predictions for every action, shape (n, num_actions)."""
        return self.feature_map(x, x_lag) @ self.coef.T

    def predict(self, x: np.ndarray, x_lag: np.ndarray, a: np.ndarray) -> np.ndarray:
        return self.predict_all(x, x_lag)[np.arange(x.shape[0]), a]


class CriticDictionary:
    """Basis functions probing residual variation in the current context.

    The default dictionary holds, per feature ``j``: ``x_j``, ``x_j**2`` and
    ``x_j * x_lag_j``; each base function is crossed with every action
    indicator during fitting, so the critic count is ``3 d * num_actions``.
    """

    def __init__(self, base_fn: Callable[[np.ndarray, np.ndarray], np.ndarray], n_base: int):
        self.base_fn = base_fn
        self.n_base = n_base

    def base_matrix(self, x: np.ndarray, x_lag: np.ndarray) -> np.ndarray:
        basis = np.asarray(self.base_fn(x, x_lag), dtype=float)
        if basis.shape != (x.shape[0], self.n_base):
            raise InvalidInputError(
                f"critic basis returned shape {basis.shape}, expected "
                f"{(x.shape[0], self.n_base)}"
            )
        return basis


def default_critics(d: int) -> CriticDictionary:
    """The standard dictionary: linear, quadratic and cross terms per feature."""

    def base(x: np.ndarray, x_lag: np.ndarray) -> np.ndarray:
        return np.hstack([x, x**2, x * x_lag])

    return CriticDictionary(base, 3 * d)


def x_only_critics(d: int) -> CriticDictionary:
    """Linear current-context critics only (used in diagnostics and tests)."""
    return CriticDictionary(lambda x, x_lag: x.copy(), d)


MIN_COLUMN_SUPPORT = 8


def _screen_columns(features: np.ndarray, min_support: int = MIN_COLUMN_SUPPORT) -> np.ndarray:
    """Zero out columns that are near-constant in a training subsample.

    A column whose values differ from its modal value on fewer than
    ``min_support`` rows cannot be estimated stably, yet at prediction time it
    can take the off-modal value everywhere (this is exactly how indicator
    features behave around a hard logging rule), so its coefficient is pinned
    to zero by zeroing the training column. The intercept column is exempt.
    """
    if features.shape[0] <= min_support:
        return features
    screened = features.copy()
    for j in range(1, features.shape[1]):
        col = features[:, j]
        values, counts = np.unique(col, return_counts=True)
        if len(values) == 1 or (features.shape[0] - counts.max()) < min_support:
            screened[:, j] = 0.0
    return screened


def _per_action_ridge(
    features: np.ndarray,
    targets: np.ndarray,
    actions: np.ndarray,
    num_actions: int,
    reg: float,
) -> tuple[np.ndarray, tuple[int, ...]]:
    """Per-action ridge with explicit intercept column in ``features``.

    Solves ``(Psi_a^T Psi_a + reg D) beta_a = Psi_a^T y_a`` with the intercept
    coordinate unpenalized and under-supported columns screened out. Actions
    absent from the training rows fall back to the global target mean
    (flagged).
    """
    p = features.shape[1]
    penalty = reg * np.eye(p)
    penalty[0, 0] = 0.0
    coef = np.zeros((num_actions, p))
    fallback = []
    global_mean = float(targets.mean())
    for a in range(num_actions):
        rows = actions == a
        if not rows.any():
            coef[a, 0] = global_mean
            fallback.append(a)
            continue
        Psi = _screen_columns(features[rows])
        y = targets[rows]
        coef[a] = np.linalg.solve(Psi.T @ Psi + penalty, Psi.T @ y)
    return coef, tuple(fallback)


def fit_reward_model_plain(
    data: LaggedDataset,
    lag: int,
    folds: FoldAssignment,
    reg: float,
    feature_map: RewardFeatureMap | None = None,
) -> list[RewardModel]:
    """Per-fold, per-action ridge of the reward on the additive feature map."""
    if feature_map is None:
        feature_map = RewardFeatureMap()
    x_lag = data.lag(lag)
    models = []
    for j in range(folds.n_folds):
        train = folds.train_indices(j)
        feats = feature_map(data.x[train], x_lag[train])
        coef, fallback = _per_action_ridge(
            feats, data.r[train], data.a[train], data.num_actions, reg
        )
        models.append(
            RewardModel(
                coef=coef,
                variant="plain",
                feature_map=feature_map,
                fallback_actions=fallback,
            )
        )
    return models


def _centering_features(x_lag: np.ndarray) -> np.ndarray:
    """Lag features for critic centering: raw, squared, and threshold terms.

    The centering regression must be able to represent the conditional means
    of the critic bases given the lag context (products and squares of the
    current context have conditional means quadratic in the lag context), or
    the "centered" critics retain lag-measurable structure and the moment
    penalty corrupts the lag block of the reward model.
    """
    return np.hstack([x_lag, x_lag**2, (x_lag > 0.5).astype(float)])


def _centered_critics(
    basis: np.ndarray,
    x_lag: np.ndarray,
    actions: np.ndarray,
    num_actions: int,
    reg: float,
    seed: int,
) -> np.ndarray:
    """Centered critic matrix of shape (n, n_base * num_actions).

    Critic (b, a') equals ``1{A=a'} * (basis_b - E[basis_b | x_lag, A=a'])``;
    the conditional expectation is replaced by a per-action ridge fit with a
    nested two-way split so centered values on every row are out-of-fold.
    """
    n, n_base = basis.shape
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0x63656E74])))
    half = rng.permutation(n) % 2
    centered = np.zeros((n, n_base * num_actions))
    global_means = basis.mean(axis=0)
    lag_feats = _centering_features(x_lag)
    for a in range(num_actions):
        in_action = actions == a
        lo, hi = a * n_base, (a + 1) * n_base
        for h in (0, 1):
            predict_rows = in_action & (half == h)
            fit_rows = in_action & (half != h)
            if not predict_rows.any():
                continue
            if fit_rows.sum() >= 2:
                ridge = RidgeRegressor(reg=reg).fit(
                    _screen_columns(lag_feats[fit_rows]), basis[fit_rows]
                )
                expected = ridge.predict(lag_feats[predict_rows])
            else:
                expected = np.broadcast_to(
                    global_means, (int(predict_rows.sum()), n_base)
                )
            centered[predict_rows, lo:hi] = basis[predict_rows] - expected
    return centered


def fit_reward_model_mtri(
    data: LaggedDataset,
    lag: int,
    folds: FoldAssignment,
    critics: CriticDictionary | None = None,
    mtri_penalty: float = 0.1,
    reg: float = 0.1,
    gram_ridge: float = 1e-6,
    seed: int = 0,
    feature_map: RewardFeatureMap | None = None,
) -> list[RewardModel]:
    """Reward model that penalizes residual correlation with centered critics.

    Minimizes, per training fold,
    ``(1/n) ||y - Psi beta||^2 + (reg/n) ||beta_noint||^2
    + mtri_penalty * m(beta)^T (G + eps I)^{-1} m(beta)``
    where ``m_j(beta)`` is the training mean of the residual times centered
    critic ``j`` and ``G`` is the mean-scaled critic Gram matrix. The
    objective is quadratic in ``beta`` and solved as one linear system; with
    ``mtri_penalty=0`` the solution coincides with the plain fit.
    """
    if critics is None:
        critics = default_critics(data.d)
    if feature_map is None:
        feature_map = RewardFeatureMap()
    x_lag = data.lag(lag)
    n_act = data.num_actions
    models = []
    for j in range(folds.n_folds):
        train = folds.train_indices(j)
        x_tr, xl_tr = data.x[train], x_lag[train]
        a_tr, y_tr = data.a[train], data.r[train]
        n_tr = len(train)
        psi = feature_map(x_tr, xl_tr)
        p = psi.shape[1]
        basis = critics.base_matrix(x_tr, xl_tr)
        phi = _centered_critics(basis, xl_tr, a_tr, n_act, reg, seed + j)
        n_critics = phi.shape[1]
        gram = phi.T @ phi / n_tr
        eps = gram_ridge
        for _ in range(8):
            try:
                gram_inv = np.linalg.inv(gram + eps * np.eye(n_critics))
                break
            except np.linalg.LinAlgError:
                eps *= 10.0
                warnings.warn(f"critic Gram ill-conditioned; raising ridge to {eps:g}")
        # Blocked design: row i contributes psi_i to its action's block.
        dim = n_act * p
        normal = np.zeros((dim, dim))
        rhs = np.zeros(dim)
        cross = np.zeros((dim, n_critics))  # Psi_blocked^T Phi
        fallback = []
        for a in range(n_act):
            rows = a_tr == a
            blk = slice(a * p, (a + 1) * p)
            if not rows.any():
                fallback.append(a)
                normal[blk, blk] = np.eye(p)
                rhs[a * p] = float(y_tr.mean())
                continue
            Psi_a = _screen_columns(psi[rows])
            normal[blk, blk] = Psi_a.T @ Psi_a
            rhs[blk.start : blk.stop] = Psi_a.T @ y_tr[rows]
            cross[blk.start : blk.stop, :] = Psi_a.T @ phi[rows]
        penalty = reg * np.ones(dim)
        penalty[::p] = 0.0  # intercept coordinates
        for a in fallback:
            penalty[a * p : (a + 1) * p] = 0.0
        scale = mtri_penalty / n_tr
        system = normal + scale * cross @ gram_inv @ cross.T + np.diag(penalty)
        target = rhs + scale * cross @ (gram_inv @ (phi.T @ y_tr))
        beta = np.linalg.solve(system, target)
        coef = beta.reshape(n_act, p)
        resid = y_tr - np.einsum("np,np->n", psi, coef[a_tr])
        moments = phi.T @ resid / n_tr
        models.append(
            RewardModel(
                coef=coef,
                variant="mtri",
                feature_map=feature_map,
                fallback_actions=tuple(fallback),
                moments_=moments,
            )
        )
    return models


def oof_reward_predictions(
    data: LaggedDataset, lag: int, folds: FoldAssignment, models: list[RewardModel]
) -> np.ndarray:
    """Out-of-fold all-action reward predictions, shape (n, num_actions)."""
    x_lag = data.lag(lag)
    out = np.zeros((data.n, data.num_actions))
    for j, model in enumerate(models):
        test = folds.test_indices(j)
        out[test] = model.predict_all(data.x[test], x_lag[test])
    return out


def fit_lag_propensity(
    data: LaggedDataset,
    lag: int,
    folds: FoldAssignment,
    reg: float = 1e-2,
    p_min: float = 1e-3,
    lag_feature_map: RewardFeatureMap | None = None,
) -> tuple[list[MultinomialLogit], np.ndarray]:
    """Per-fold multinomial logit for ``P(A | x_lag)`` plus out-of-fold predictions."""
    x_lag = data.lag(lag)
    feats = (
        lag_feature_map.lag_features(x_lag) if lag_feature_map is not None else x_lag
    )
    models, oof = [], np.zeros((data.n, data.num_actions))
    for j in range(folds.n_folds):
        train = folds.train_indices(j)
        model = MultinomialLogit(reg=reg, p_min=p_min).fit(
            feats[train], data.a[train], n_classes=data.num_actions
        )
        test = folds.test_indices(j)
        oof[test] = model.predict_proba(feats[test])
        models.append(model)
    return models, oof


def fit_lag_target_marginal(
    data: LaggedDataset,
    policy: Policy,
    lag: int,
    folds: FoldAssignment,
    reg: float = 1e-2,
    p_min: float = 1e-3,
    lag_feature_map: RewardFeatureMap | None = None,
) -> tuple[list[SimplexRidgeModel], np.ndarray]:
    """Per-fold ridge of the target probabilities onto the lag context.

    The pseudo-outcome for action ``a`` is ``pi(a | X_i)``; predictions are
    projected onto the floored simplex.
    """
    x_lag = data.lag(lag)
    feats = (
        lag_feature_map.lag_features(x_lag) if lag_feature_map is not None else x_lag
    )
    pi = policy.prob_matrix(data.x)
    models, oof = [], np.zeros((data.n, data.num_actions))
    for j in range(folds.n_folds):
        train = folds.train_indices(j)
        ridge = RidgeRegressor(reg=reg).fit(feats[train], pi[train])
        model = SimplexRidgeModel(ridge=ridge, p_min=p_min)
        test = folds.test_indices(j)
        oof[test] = model.predict_proba(feats[test])
        models.append(model)
    return models, oof


def lag_weight(
    nuisances: "NuisanceSet",
    lag: int,
    fold: int,
    x_lag: np.ndarray,
    a: int,
    clip: float | None = None,
) -> float:
    """Clipped lag weight ``min(bar_pi_theta / bar_pi_0, clip)`` at one point."""
    ln = nuisances.lags[lag]
    x_lag = np.asarray(x_lag, dtype=float).reshape(1, -1)
    feats = ln.marginal_map.lag_features(x_lag)
    bar_theta = ln.target_marginal_models[fold].predict_proba(feats)[0, a]
    bar_zero = ln.propensity_models[fold].predict_proba(feats)[0, a]
    d = nuisances.config.clip if clip is None else clip
    return float(min(bar_theta / bar_zero, d))


def estimate_alc(
    data: LaggedDataset,
    lag: int,
    folds: FoldAssignment,
    reward_models: list[RewardModel],
    reg: float = 1e-2,
) -> float:
    """Plug-in residual-invariance score.

    Fits (out-of-fold) two per-action ridge regressions of the reward-model
    residual: one on the full ``(x, x_lag)`` features and one on the lag
    features alone; the score is the mean squared gap between their
    predictions, which vanishes when the residual depends only on the lag
    context and action. The detector basis (raw, squared and threshold terms)
    is deliberately independent of the reward model's own feature map: a
    detector confined to the model's span cannot see residual structure the
    model failed to remove.
    """
    x_lag = data.lag(lag)
    resid = data.r - oof_reward_predictions(data, lag, folds, reward_models)[
        np.arange(data.n), data.a
    ]

    def detector(z: np.ndarray) -> np.ndarray:
        raw = np.hstack([z, (z > 0.5).astype(float)])
        scale = raw.std(axis=0)
        return raw / np.where(scale > 0, scale, 1.0)

    full_feats = np.hstack([detector(data.x), detector(x_lag)])
    lag_feats = detector(x_lag)
    detector_reg = max(reg, 1.0)
    m1 = np.zeros(data.n)
    m0 = np.zeros(data.n)
    for j in range(folds.n_folds):
        train = folds.train_indices(j)
        test = folds.test_indices(j)
        for a in range(data.num_actions):
            tr = train[data.a[train] == a]
            te = test[data.a[test] == a]
            if te.size == 0:
                continue
            if tr.size >= 2:
                m1[te] = (
                    RidgeRegressor(reg=detector_reg)
                    .fit(full_feats[tr], resid[tr])
                    .predict(full_feats[te])
                )
                m0[te] = (
                    RidgeRegressor(reg=detector_reg)
                    .fit(lag_feats[tr], resid[tr])
                    .predict(lag_feats[te])
                )
            else:
                fallback = float(resid[train].mean())
                m1[te] = fallback
                m0[te] = fallback
    return max(float(np.mean((m1 - m0) ** 2)), 0.0)


@dataclass(frozen=True)
class LagNuisance:
    """Fitted nuisances and cached out-of-fold predictions for one lag."""

    lag_index: int
    propensity_models: tuple[MultinomialLogit, ...]
    target_marginal_models: tuple[SimplexRidgeModel, ...]
    reward_models: tuple[RewardModel, ...]
    bar_pi0_oof: np.ndarray
    bar_theta_oof: np.ndarray
    qhat_oof: np.ndarray
    alc: float
    clip: float
    marginal_map: RewardFeatureMap = RewardFeatureMap(kind="linear")

    def weights_unclipped(self, actions: np.ndarray) -> np.ndarray:
        idx = np.arange(actions.shape[0])
        return self.bar_theta_oof[idx, actions] / self.bar_pi0_oof[idx, actions]

    def weights_logged(self, actions: np.ndarray) -> np.ndarray:
        return np.minimum(self.weights_unclipped(actions), self.clip)

    @property
    def fallback_actions(self) -> tuple[int, ...]:
        out: set[int] = set()
        for m in self.reward_models:
            out.update(m.fallback_actions)
        return tuple(sorted(out))


@dataclass(frozen=True)
class NuisanceSet:
    """All cross-fitted nuisances for a dataset/policy pair (Algorithm-1 output)."""

    folds: FoldAssignment
    lags: tuple[LagNuisance, ...]
    config: NuisanceConfig

    @property
    def num_lags(self) -> int:
        return len(self.lags)

    @property
    def alcs(self) -> np.ndarray:
        return np.array([ln.alc for ln in self.lags])


def fit_nuisances(
    data: LaggedDataset,
    policy: Policy,
    config: NuisanceConfig | None = None,
    critics: CriticDictionary | None = None,
) -> NuisanceSet:
    """Fit the full cross-fitted nuisance stack for every lag in the data."""
    if config is None:
        config = NuisanceConfig()
    if data.num_lags == 0:
        raise InvalidInputError("dataset has no lag contexts; lag nuisances undefined")
    folds = kfold_split(data.n, config.k_cf, config.seed)
    feature_map = config.feature_map()
    marginal_map = config.marginal_feature_map()
    lags = []
    for k in range(data.num_lags):
        prop_models, bar_pi0 = fit_lag_propensity(
            data, k, folds, reg=config.reg, p_min=config.p_min,
            lag_feature_map=marginal_map,
        )
        marg_models, bar_theta = fit_lag_target_marginal(
            data, policy, k, folds, reg=config.reg, p_min=config.p_min,
            lag_feature_map=marginal_map,
        )
        if config.reward_variant == "mtri":
            reward_models = fit_reward_model_mtri(
                data,
                k,
                folds,
                critics=critics,
                mtri_penalty=config.mtri_penalty,
                reg=config.reg,
                gram_ridge=config.gram_ridge,
                seed=config.seed,
                feature_map=feature_map,
            )
        else:
            reward_models = fit_reward_model_plain(
                data, k, folds, reg=config.reg, feature_map=feature_map
            )
        qhat = oof_reward_predictions(data, k, folds, reward_models)
        alc = estimate_alc(data, k, folds, reward_models, reg=config.reg)
        lags.append(
            LagNuisance(
                lag_index=k,
                propensity_models=tuple(prop_models),
                target_marginal_models=tuple(marg_models),
                reward_models=tuple(reward_models),
                bar_pi0_oof=bar_pi0,
                bar_theta_oof=bar_theta,
                qhat_oof=qhat,
                alc=alc,
                clip=config.clip,
                marginal_map=marginal_map,
            )
        )
    return NuisanceSet(folds=folds, lags=tuple(lags), config=config)


def fit_current_reward_model(
    data: LaggedDataset, folds: FoldAssignment, reg: float = 1e-2
) -> np.ndarray:
    """Cross-fitted per-action ridge of the reward on the current context.

    Returns out-of-fold all-action predictions ``q_hat(x, a)`` of shape
    (n, num_actions), the reward model used by the direct-method and doubly
    robust baselines.
    """
    feats = np.hstack([np.ones((data.n, 1)), data.x])
    out = np.zeros((data.n, data.num_actions))
    for j in range(folds.n_folds):
        train = folds.train_indices(j)
        coef, _ = _per_action_ridge(
            feats[train], data.r[train], data.a[train], data.num_actions, reg
        )
        test = folds.test_indices(j)
        out[test] = feats[test] @ coef.T
    return out


def behavior_propensities(
    data: LaggedDataset,
    folds: FoldAssignment | None = None,
    reg: float = 1e-2,
    p_min: float = 1e-3,
) -> np.ndarray:
    """Propensities of the logged actions: logged values when present, else a
    cross-fitted multinomial logit on the current context (floored)."""
    if data.logged_propensity is not None:
        return np.asarray(data.logged_propensity)
    if folds is None:
        raise InvalidInputError("fold assignment required to fit propensities")
    oof = np.zeros((data.n, data.num_actions))
    for j in range(folds.n_folds):
        train = folds.train_indices(j)
        model = MultinomialLogit(reg=reg, p_min=p_min).fit(
            data.x[train], data.a[train], n_classes=data.num_actions
        )
        test = folds.test_indices(j)
        oof[test] = model.predict_proba(data.x[test])
    return oof[np.arange(data.n), data.a]
