"""Synthetic lagged contextual-bandit benchmark with controllable support violations.

One lag context is drawn, the current context is a noisy copy of it, and the
first current coordinate is overwritten independently so that forcing the
logging policy to a single action on the top-``r`` fraction of that coordinate
creates current-context support violations while every action keeps positive
probability conditional on the lag context (for ``r < 1``).

Rewards mix a current-context component ``g``, a lag component ``h`` and an
optional interaction ``u`` that breaks the additive structure:
``q = mix_lambda * g + (1 - mix_lambda) * h + interaction_eta * u``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidConfigError, InvalidInputError
from .policies import EpsGreedyScorePolicy, Policy, softmax
from .types import LaggedDataset
from .validation import check_matrix, check_scalar_range

# Fixed tags mixed into seed sequences so independent streams never collide.
_ENV_STREAM = 0x656E76
_DATA_STREAM = 0x64617461
_TRUTH_STREAM = 0x7472757468

CURRENT_NOISE_SCALE = 3.0
REWARD_NOISE_SCALE = 1.0
THRESHOLD = 0.5
BASELINE_CONTRAST = 0.2


def _rng(*entropy: int) -> np.random.Generator:
    """Counter-based generator keyed by a fixed hash of the entropy tuple."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(entropy))))


def replication_seed(data_seed: int, replication: int) -> int:
    """Derive a per-replication seed by hashing (data_seed, replication)."""
    return int(np.random.SeedSequence([data_seed, replication]).generate_state(1)[0])


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings; defaults match the benchmark's standard configuration."""

    n: int = 1000
    d: int = 10
    num_actions: int = 5
    violation_ratio: float = 0.5
    mix_lambda: float = 0.5
    interaction_eta: float = 0.0
    logging_beta: float = 0.3
    lag_rho: float = 1.0
    target_epsilon: float = 0.1
    env_seed: int = 0
    data_seed: int = 1

    def __post_init__(self):
        if self.n < 1:
            raise InvalidConfigError("n must be >= 1")
        if self.d < 2:
            raise InvalidConfigError("d must be >= 2")
        if self.num_actions < 1:
            raise InvalidConfigError("num_actions must be >= 1")
        check_scalar_range(self.violation_ratio, "violation_ratio", 0.0, 1.0, high_inclusive=False)
        check_scalar_range(self.mix_lambda, "mix_lambda", 0.0, 1.0)
        check_scalar_range(self.interaction_eta, "interaction_eta", 0.0)
        check_scalar_range(self.lag_rho, "lag_rho", 0.0)
        check_scalar_range(self.target_epsilon, "target_epsilon", 0.0, 1.0)


@dataclass(frozen=True)
class SynthEnv:
    """Environment coefficients, fixed across replications for a given env_seed.

    ``g_coef``/``h_coef`` hold per-(action, feature) threshold contrasts of
    shape (num_actions, d - 1); action 0 carries the fixed -0.2 baseline
    contrast. ``u_coef`` holds the three interaction coefficients per action.
    The count-effect magnitudes are explicit so degenerate environments can be
    constructed in tests.
    """

    g_coef: np.ndarray
    h_coef: np.ndarray
    u_coef: np.ndarray
    count_penalty_a0: float = -0.3
    count_bonus: float = 0.15

    @property
    def num_actions(self) -> int:
        return self.g_coef.shape[0]

    @property
    def d(self) -> int:
        return self.g_coef.shape[1] + 1


def make_env(config: SynthConfig) -> SynthEnv:
    """Draw environment coefficients deterministically from ``env_seed``.

    Action-0 threshold contrasts are the fixed -0.2 baseline; contrasts for
    the remaining actions and the interaction coefficients are i.i.d.
    Uniform(-0.5, 0.5).
    """
    rng = _rng(config.env_seed, _ENV_STREAM)
    n_act, d = config.num_actions, config.d
    g = rng.uniform(-0.5, 0.5, size=(n_act, d - 1))
    h = rng.uniform(-0.5, 0.5, size=(n_act, d - 1))
    u = rng.uniform(-0.5, 0.5, size=(n_act, 3))
    g[0, :] = -BASELINE_CONTRAST
    h[0, :] = -BASELINE_CONTRAST
    return SynthEnv(g_coef=g, h_coef=h, u_coef=u)


def _threshold_component(coef: np.ndarray, contexts: np.ndarray, env: SynthEnv) -> np.ndarray:
    """Piecewise-constant reward component: per-feature contrasts plus count effect.

    Feature ``j`` (columns 1..d-1; the violation coordinate never enters)
    contributes ``+c`` when above the threshold and ``-c`` below. When at least
    two of the count features (columns 1..d-2) exceed the threshold, action 0
    is penalized and every other action receives a bonus.
    """
    signs = np.where(contexts[:, 1:] > THRESHOLD, 1.0, -1.0)
    values = signs @ coef.T
    counts = (contexts[:, 1:-1] > THRESHOLD).sum(axis=1)
    mask = counts >= 2
    if mask.any():
        values = values.copy()
        values[mask, 0] += env.count_penalty_a0
        if coef.shape[0] > 1:
            values[mask, 1:] += env.count_bonus
    return values


def g_matrix(env: SynthEnv, x: np.ndarray) -> np.ndarray:
    """Current-context reward component for every action, shape (n, num_actions)."""
    x = check_matrix(x, "x", n_cols=env.d)
    return _threshold_component(env.g_coef, x, env)


def h_matrix(env: SynthEnv, x_lag: np.ndarray) -> np.ndarray:
    """Lag-context reward component for every action, shape (n, num_actions)."""
    x_lag = check_matrix(x_lag, "x_lag", n_cols=env.d)
    return _threshold_component(env.h_coef, x_lag, env)


def u_matrix(env: SynthEnv, x: np.ndarray, x_lag: np.ndarray) -> np.ndarray:
    """Interaction component (feature products and a sinusoid), shape (n, num_actions)."""
    if env.d < 4:
        raise InvalidInputError("interaction term requires d >= 4")
    basis = np.column_stack(
        [
            x[:, 1] * x_lag[:, 1],
            x[:, 2] * x_lag[:, 2],
            np.sin(x[:, 3] + x_lag[:, 3]),
        ]
    )
    return basis @ env.u_coef.T


def mean_reward_matrix(
    env: SynthEnv,
    x: np.ndarray,
    x_lag: np.ndarray,
    mix_lambda: float,
    interaction_eta: float,
) -> np.ndarray:
    """Mean reward ``q`` for every action, shape (n, num_actions)."""
    q = mix_lambda * g_matrix(env, x) + (1.0 - mix_lambda) * h_matrix(env, x_lag)
    if interaction_eta != 0.0:
        q = q + interaction_eta * u_matrix(env, x, x_lag)
    return q


def mean_reward(
    env: SynthEnv,
    x: np.ndarray,
    x_lag: np.ndarray,
    a: int,
    mix_lambda: float,
    interaction_eta: float,
) -> float:
    """Mean reward for a single (context, lag context, action) triple."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    x_lag = np.asarray(x_lag, dtype=float).reshape(1, -1)
    return float(mean_reward_matrix(env, x, x_lag, mix_lambda, interaction_eta)[0, a])


def violation_cutoff(x_first: np.ndarray, violation_ratio: float) -> float:
    """The (1 - r)-quantile of the first current coordinate; +inf when r = 0."""
    if violation_ratio == 0.0:
        return float("inf")
    return float(np.quantile(np.asarray(x_first, dtype=float), 1.0 - violation_ratio))


def logging_policy_probs(
    env: SynthEnv,
    x: np.ndarray,
    beta: float,
    cutoff: float,
    exploration_floor: float = 0.0,
) -> np.ndarray:
    """Logging probabilities: softmax over ``beta * g`` with a hard violation region.

    Rows whose first coordinate exceeds ``cutoff`` are one-hot on action 0
    (the support-violation region); elsewhere the softmax is optionally mixed
    with the uniform policy by ``exploration_floor``.
    """
    x = check_matrix(x, "x", n_cols=env.d)
    probs = softmax(beta * g_matrix(env, x))
    if exploration_floor > 0.0:
        probs = (1.0 - exploration_floor) * probs + exploration_floor / env.num_actions
    violated = x[:, 0] > cutoff
    if violated.any():
        probs[violated] = 0.0
        probs[violated, 0] = 1.0
    return probs


class SynthLoggingPolicy(Policy):
    """The generator's logging policy as a reusable policy object."""

    def __init__(self, env: SynthEnv, beta: float, cutoff: float, exploration_floor: float = 0.0):
        self.env = env
        self.beta = beta
        self.cutoff = cutoff
        self.exploration_floor = exploration_floor
        self.num_actions = env.num_actions

    def prob_matrix(self, x: np.ndarray) -> np.ndarray:
        return logging_policy_probs(
            self.env, x, self.beta, self.cutoff, self.exploration_floor
        )


def target_policy(env: SynthEnv, epsilon: float = 0.1) -> EpsGreedyScorePolicy:
    """Epsilon-greedy target policy over the current-context component ``g``."""
    return EpsGreedyScorePolicy(
        score_fn=lambda x: g_matrix(env, x),
        num_actions=env.num_actions,
        epsilon=epsilon,
    )


def _draw_contexts(
    config: SynthConfig, rng: np.random.Generator, n: int
) -> tuple[np.ndarray, np.ndarray]:
    """Draw (current, lag) context pairs; the first current coordinate is
    overwritten independently of the lag context."""
    x_lag = rng.standard_normal((n, config.d))
    x = config.lag_rho * x_lag + CURRENT_NOISE_SCALE * rng.standard_normal((n, config.d))
    x[:, 0] = CURRENT_NOISE_SCALE * rng.standard_normal(n)
    return x, x_lag


def generate(
    config: SynthConfig,
    env: SynthEnv,
    exploration_floor: float = 0.0,
) -> LaggedDataset:
    """Generate one logged dataset under the configured logging policy.

    The violation cutoff is the empirical (1 - r)-quantile of the realized
    first coordinates; actions in the violation region are forced to 0 with
    logged propensity 1.
    """
    rng = _rng(config.data_seed, _DATA_STREAM)
    x, x_lag = _draw_contexts(config, rng, config.n)
    cutoff = violation_cutoff(x[:, 0], config.violation_ratio)
    probs = logging_policy_probs(env, x, config.logging_beta, cutoff, exploration_floor)
    u = rng.random(config.n)
    actions = (u[:, None] > np.cumsum(probs, axis=1)).sum(axis=1).astype(np.int64)
    propensity = probs[np.arange(config.n), actions]
    q = mean_reward_matrix(env, x, x_lag, config.mix_lambda, config.interaction_eta)
    rewards = q[np.arange(config.n), actions] + REWARD_NOISE_SCALE * rng.standard_normal(
        config.n
    )
    return LaggedDataset(
        x=x,
        x_lags=x_lag[:, None, :],
        a=actions,
        r=rewards,
        num_actions=config.num_actions,
        lag_labels=("1",),
        logged_propensity=propensity,
    )


def true_value_mc(
    config: SynthConfig,
    env: SynthEnv,
    policy: Policy,
    m_samples: int = 200_000,
    return_se: bool = False,
):
    """Monte Carlo ground-truth policy value ``E[sum_a pi(a|X) q(X, X_lag, a)]``.

    The context stream is keyed by ``env_seed`` only, so the value is exactly
    identical across violation ratios and data seeds (the violation ratio
    affects only the logging policy).
    """
    if m_samples < 1:
        raise InvalidConfigError("m_samples must be >= 1")
    rng = _rng(config.env_seed, _TRUTH_STREAM)
    x, x_lag = _draw_contexts(config, rng, m_samples)
    q = mean_reward_matrix(env, x, x_lag, config.mix_lambda, config.interaction_eta)
    per_draw = (policy.prob_matrix(x) * q).sum(axis=1)
    value = float(per_draw.mean())
    if return_se:
        se = float(per_draw.std(ddof=1) / np.sqrt(m_samples)) if m_samples > 1 else 0.0
        return value, se
    return value


def oracle_best_value(config: SynthConfig, env: SynthEnv, test_set: LaggedDataset) -> float:
    """Best-in-class value on a test set: mean of the per-sample max of ``q``."""
    q = mean_reward_matrix(
        env, test_set.x, test_set.lag(0), config.mix_lambda, config.interaction_eta
    )
    return float(q.max(axis=1).mean())


def policy_value_on_test_set(
    policy: Policy, test_set: LaggedDataset, env: SynthEnv, config: SynthConfig
) -> float:
    """Exact-q policy value on a held-out test set."""
    q = mean_reward_matrix(
        env, test_set.x, test_set.lag(0), config.mix_lambda, config.interaction_eta
    )
    return float((policy.prob_matrix(test_set.x) * q).sum(axis=1).mean())


def dump_env(env: SynthEnv, path: str | Path) -> None:
    """Write environment coefficients to a JSON file for audit."""
    payload = {
        "g_coef": env.g_coef.tolist(),
        "h_coef": env.h_coef.tolist(),
        "u_coef": env.u_coef.tolist(),
        "count_penalty_a0": env.count_penalty_a0,
        "count_bonus": env.count_bonus,
    }
    Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")


def load_env(path: str | Path) -> SynthEnv:
    """Read environment coefficients written by :func:`dump_env`."""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return SynthEnv(
        g_coef=np.asarray(payload["g_coef"], dtype=float),
        h_coef=np.asarray(payload["h_coef"], dtype=float),
        u_coef=np.asarray(payload["u_coef"], dtype=float),
        count_penalty_a0=float(payload["count_penalty_a0"]),
        count_bonus=float(payload["count_bonus"]),
    )
