"""Gradient-based off-policy learning with importance-weighted, doubly robust
and lag-weighted policy gradients.

The lag-weighted gradient replaces the per-sample score with a lag-marginal
score (a regression of ``pi_theta * score`` onto the lag context divided by
the regressed marginal probability) and reweights residuals by the clipped
lag-marginal ratio. Policy-dependent regressions are refit on a per-step
schedule using cached fold-wise solvers; policy-independent nuisances (lag
propensity, reward models) are fit once per run.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError, InvalidInputError, NumericError
from .estimators import LagComponents, _check_propensities, softmin_weights
from .linear import RidgeSolver
from .nuisance import (
    NuisanceConfig,
    NuisanceSet,
    fit_current_reward_model,
    fit_nuisances,
)
from .policies import LinearSoftmaxPolicy, Policy
from .synthgen import SynthConfig, SynthEnv, oracle_best_value, policy_value_on_test_set
from .types import LaggedDataset
from .validation import floor_simplex


@dataclass(frozen=True)
class TrainConfig:
    """Gradient-ascent settings for policy training."""

    steps: int = 200
    step_size: float = 0.05
    exploration_floor: float = 0.05
    init_seed: int = 0
    estimator: str = "dolce"
    refit_every: int = 1

    def __post_init__(self):
        if self.steps < 1:
            raise InvalidConfigError("steps must be >= 1")
        if self.step_size < 0:
            raise InvalidConfigError("step_size must be >= 0")
        if not 0.0 <= self.exploration_floor < 1.0:
            raise InvalidConfigError("exploration_floor must be in [0, 1)")
        if self.estimator not in ("ips", "dr", "dolce"):
            raise InvalidConfigError(f"unknown gradient estimator {self.estimator!r}")
        if self.refit_every < 1:
            raise InvalidConfigError("refit_every must be >= 1")


def initial_theta(init_seed: int, num_actions: int, d: int) -> np.ndarray:
    """Deterministic policy initialization shared across gradient estimators."""
    rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence([init_seed, 0x696E6974]))
    )
    return 0.1 * rng.standard_normal((num_actions, d + 1))


def grad_ips(
    data: LaggedDataset, policy: LinearSoftmaxPolicy, propensities: np.ndarray
) -> np.ndarray:
    """Importance-weighted policy gradient ``mean(w R s(A|X))``."""
    prop = _check_propensities(propensities, data)
    pi = policy.prob_matrix(data.x)
    w = pi[np.arange(data.n), data.a] / prop
    scores = policy.score_logged(data.x, data.a)
    return ((w * data.r)[:, None] * scores).mean(axis=0)


def grad_dr(
    data: LaggedDataset,
    policy: LinearSoftmaxPolicy,
    qhat: np.ndarray,
    propensities: np.ndarray,
) -> np.ndarray:
    """Doubly robust policy gradient: weighted residual score plus model term."""
    prop = _check_propensities(propensities, data)
    pi = policy.prob_matrix(data.x)
    idx = np.arange(data.n)
    w = pi[idx, data.a] / prop
    scores = policy.score_logged(data.x, data.a)
    residual_term = (w * (data.r - qhat[idx, data.a]))[:, None] * scores
    model_term = policy.weighted_score_sum(data.x, pi * qhat)
    return (residual_term + model_term).mean(axis=0)


class LagScoreModels:
    """Fold-wise cached regressions of policy-dependent targets on lag features.

    For a given policy, produces the out-of-fold lag target marginal
    ``bar_pi_theta`` (floored simplex) and the lag-marginal score of the
    logged actions (component-wise regression of ``pi * score`` divided by the
    marginal). The fold design matrices are factorized once, so refitting for
    a new policy costs one matrix product per fold.
    """

    def __init__(self, data: LaggedDataset, lag: int, folds, reg: float, p_min: float):
        self.lag = lag
        self.folds = folds
        self.p_min = p_min
        self.x_lag = data.lag(lag)
        self.solvers = tuple(
            RidgeSolver(self.x_lag[folds.train_indices(j)], reg)
            for j in range(folds.n_folds)
        )

    def marginal_and_score(
        self, data: LaggedDataset, policy: LinearSoftmaxPolicy
    ) -> tuple[np.ndarray, np.ndarray]:
        """Out-of-fold ``bar_pi_theta`` (n, A) and logged-action lag scores (n, m)."""
        n, n_act = data.n, data.num_actions
        pi = policy.prob_matrix(data.x)
        xt = np.hstack([data.x, np.ones((n, 1))])
        # pi_a * s_a stacked over actions: C[i] = diag(pi_i) - pi_i pi_i^T.
        cmat = -pi[:, :, None] * pi[:, None, :]
        cmat[:, np.arange(n_act), np.arange(n_act)] += pi
        score_targets = np.einsum("nab,nj->nabj", cmat, xt).reshape(n, -1)
        bar_theta = np.zeros((n, n_act))
        m_hat = np.zeros((n, score_targets.shape[1]))
        for j, solver in enumerate(self.solvers):
            train = self.folds.train_indices(j)
            test = self.folds.test_indices(j)
            x_test = self.x_lag[test]
            w_pi, b_pi = solver.solve(pi[train])
            bar_theta[test] = x_test @ w_pi + b_pi
            w_m, b_m = solver.solve(score_targets[train])
            m_hat[test] = x_test @ w_m + b_m
        bar_theta = floor_simplex(bar_theta, self.p_min)
        m_logged = m_hat.reshape(n, n_act, -1)[np.arange(n), data.a]
        bar_scores = m_logged / bar_theta[np.arange(n), data.a][:, None]
        return bar_theta, bar_scores


def fit_lag_score_marginal(
    data: LaggedDataset,
    policy: LinearSoftmaxPolicy,
    lag: int,
    folds,
    reg: float = 1e-2,
    p_min: float = 1e-3,
) -> tuple[LagScoreModels, np.ndarray, np.ndarray]:
    """Fit the lag-score regressions once and evaluate them for ``policy``.

    Returns the reusable fold-wise models plus the out-of-fold marginal and
    logged-action lag scores for the supplied policy.
    """
    if not isinstance(policy, LinearSoftmaxPolicy):
        raise InvalidInputError("lag-marginal scores require a LinearSoftmaxPolicy")
    models = LagScoreModels(data, lag, folds, reg, p_min)
    bar_theta, bar_scores = models.marginal_and_score(data, policy)
    return models, bar_theta, bar_scores


def grad_dolce(
    data: LaggedDataset,
    policy: LinearSoftmaxPolicy,
    nuisances,
    score_models: LagScoreModels | None = None,
    lag: int = 0,
    clip: float | None = None,
) -> np.ndarray:
    """Lag-weighted policy gradient for one lag.

    With a fitted :class:`~lagope.nuisance.NuisanceSet`, the policy marginal
    and lag scores are recomputed for the current policy via ``score_models``
    while the lag propensity and reward model stay fixed. Precomputed
    :class:`~lagope.estimators.LagComponents` (oracle adapters) must carry
    ``bar_scores``.
    """
    idx = np.arange(data.n)
    pi = policy.prob_matrix(data.x)
    if isinstance(nuisances, NuisanceSet):
        if score_models is None:
            raise InvalidInputError("score_models required with fitted nuisances")
        ln = nuisances.lags[lag]
        bar_theta, bar_scores = score_models.marginal_and_score(data, policy)
        d = nuisances.config.clip if clip is None else clip
        weights = np.minimum(
            bar_theta[idx, data.a] / ln.bar_pi0_oof[idx, data.a], d
        )
        qhat = ln.qhat_oof
    else:
        comp = nuisances[lag]
        if comp.bar_scores is None:
            raise InvalidInputError("LagComponents must carry bar_scores for gradients")
        weights, qhat, bar_scores = comp.weights, comp.qhat, comp.bar_scores
    residual_term = (weights * (data.r - qhat[idx, data.a]))[:, None] * bar_scores
    model_term = policy.weighted_score_sum(data.x, pi * qhat)
    return (residual_term + model_term).mean(axis=0)


@dataclass(frozen=True)
class TrainResult:
    policy: LinearSoftmaxPolicy
    thetas: np.ndarray  # (steps + 1, num_actions, d + 1)
    grad_norms: np.ndarray
    first_gradient: np.ndarray


def train_policy(
    data: LaggedDataset,
    train_config: TrainConfig,
    nuisance_config: NuisanceConfig | None = None,
    theta0: np.ndarray | None = None,
) -> TrainResult:
    """Gradient-ascent training of a linear-softmax policy.

    ``theta_{t+1} = theta_t + step_size * g(theta_t)``. Policy-independent
    nuisances are fit once; policy-dependent regressions are refit every
    ``refit_every`` steps. Aborts on non-finite gradients.
    """
    if nuisance_config is None:
        nuisance_config = NuisanceConfig(reward_variant="plain")
    if theta0 is None:
        theta0 = initial_theta(train_config.init_seed, data.num_actions, data.d)
    theta = np.asarray(theta0, dtype=float).copy()
    policy = LinearSoftmaxPolicy(theta)
    estimator = train_config.estimator

    propensities = None
    qhat_current = None
    nuisances = None
    score_models: list[LagScoreModels] = []
    alphas = None
    if estimator in ("ips", "dr"):
        from .nuisance import behavior_propensities, kfold_split

        folds = kfold_split(data.n, nuisance_config.k_cf, nuisance_config.seed)
        propensities = behavior_propensities(
            data, folds, reg=nuisance_config.reg, p_min=nuisance_config.p_min
        )
        if estimator == "dr":
            qhat_current = fit_current_reward_model(data, folds, reg=nuisance_config.reg)
    else:
        nuisances = fit_nuisances(data, policy, nuisance_config)
        score_models = [
            LagScoreModels(
                data, k, nuisances.folds, nuisance_config.reg, nuisance_config.p_min
            )
            for k in range(nuisances.num_lags)
        ]
        alphas = softmin_weights(nuisances.alcs, nuisance_config.tau)

    def gradient(pol: LinearSoftmaxPolicy) -> np.ndarray:
        if estimator == "ips":
            return grad_ips(data, pol, propensities)
        if estimator == "dr":
            return grad_dr(data, pol, qhat_current, propensities)
        grads = [
            grad_dolce(data, pol, nuisances, score_models[k], lag=k)
            for k in range(nuisances.num_lags)
        ]
        return np.einsum("k,km->m", alphas, np.stack(grads))

    thetas = [theta.copy()]
    grad_norms = []
    first_gradient = None
    cached_grad = None
    for step in range(train_config.steps):
        if step % train_config.refit_every == 0 or cached_grad is None:
            grad = gradient(policy)
        else:
            grad = cached_grad
        cached_grad = grad
        if not np.all(np.isfinite(grad)):
            raise NumericError(
                f"non-finite gradient at step {step} (estimator {estimator})"
            )
        if first_gradient is None:
            first_gradient = grad.copy()
        grad_norms.append(float(np.linalg.norm(grad)))
        theta = theta + train_config.step_size * grad.reshape(theta.shape)
        policy = LinearSoftmaxPolicy(theta)
        thetas.append(theta.copy())
    return TrainResult(
        policy=policy,
        thetas=np.array(thetas),
        grad_norms=np.array(grad_norms),
        first_gradient=first_gradient,
    )


@dataclass(frozen=True)
class OplMetrics:
    """Test-set learning metrics computed with the exact reward function."""

    ni: float
    osi: float
    regret: float


def opl_metrics(
    learned_policy: Policy,
    logging_policy: Policy,
    test_set: LaggedDataset,
    env: SynthEnv,
    config: SynthConfig,
    theta0: np.ndarray,
    first_gradient: np.ndarray,
    step_size: float,
) -> OplMetrics:
    """Normalized improvement, one-step improvement, and regret.

    ``NI = (V(learned) - V(logging)) / (V* - V(logging))`` (NaN when the
    denominator vanishes); ``OSI`` is the exact value gain of one gradient
    step from the shared initialization; ``regret = V* - V(learned)``.
    """
    v_hat = policy_value_on_test_set(learned_policy, test_set, env, config)
    v_log = policy_value_on_test_set(logging_policy, test_set, env, config)
    v_star = oracle_best_value(config, env, test_set)
    ni = float("nan") if v_star == v_log else (v_hat - v_log) / (v_star - v_log)
    pol0 = LinearSoftmaxPolicy(theta0)
    stepped = LinearSoftmaxPolicy(
        theta0 + step_size * first_gradient.reshape(theta0.shape)
    )
    osi = policy_value_on_test_set(stepped, test_set, env, config) - policy_value_on_test_set(
        pol0, test_set, env, config
    )
    return OplMetrics(ni=float(ni), osi=float(osi), regret=float(v_star - v_hat))
