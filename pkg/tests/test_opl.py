import numpy as np
import pytest

from lagope.errors import InvalidConfigError, NumericError
from lagope.estimators import LagComponents
from lagope.nuisance import NuisanceConfig, kfold_split
from lagope.opl import (
    LagScoreModels,
    TrainConfig,
    fit_lag_score_marginal,
    grad_dolce,
    grad_dr,
    grad_ips,
    initial_theta,
    opl_metrics,
    train_policy,
)
from lagope.oracle import (
    exact_gradient,
    exact_grad_dolce_expectation,
    exact_grad_ips_expectation,
    exact_lag_score_tables,
    lag_shift_q_tilde,
    oracle_lag_weights,
    random_env,
    sample,
    to_lagged_dataset,
)
from lagope.policies import LinearSoftmaxPolicy
from lagope.synthgen import (
    SynthConfig,
    SynthLoggingPolicy,
    generate,
    make_env,
    violation_cutoff,
)
from lagope.types import LaggedDataset


def feature_env(seed=13, full_support=False):
    return random_env(
        seed,
        n_lag=2,
        n_cur=3,
        num_actions=3,
        with_features=True,
        support_violation=not full_support,
        noise_scale=0.2,
    )


def env_dataset(env, n, seed):
    rng = np.random.default_rng(seed)
    x0, x, a, r = sample(env, n, rng)
    feats = env.x_features[x]
    # lag column: the lag index broadcast to the feature width (the gradient
    # ops read precomputed lag components, not these columns)
    lag = np.repeat(x0.astype(float)[:, None], feats.shape[1], axis=1)
    return (
        LaggedDataset(
            x=feats,
            x_lags=lag[:, None, :],
            a=a,
            r=r,
            num_actions=env.num_actions,
            lag_labels=("1",),
            logged_propensity=env.pi0[x, a],
        ),
        x0,
        x,
    )


def test_grad_ips_zero_rewards():
    env = feature_env()
    data, _, _ = env_dataset(env, 200, 0)
    zeroed = LaggedDataset(
        x=data.x, x_lags=data.x_lags, a=data.a, r=np.zeros(data.n),
        num_actions=3, lag_labels=("1",), logged_propensity=data.logged_propensity,
    )
    policy = LinearSoftmaxPolicy(np.zeros((3, 3)))
    grad = grad_ips(zeroed, policy, zeroed.logged_propensity)
    assert np.array_equal(grad, np.zeros(9))


def test_grad_ips_uniform_composition():
    # theta = 0 and a uniform logging policy: weights are one, so the gradient
    # is the average of reward-weighted scores of the logged actions
    rng = np.random.default_rng(1)
    n = 50
    data = LaggedDataset(
        x=rng.standard_normal((n, 2)),
        x_lags=rng.standard_normal((n, 1, 2)),
        a=rng.integers(0, 2, n),
        r=rng.standard_normal(n),
        num_actions=2,
        lag_labels=("1",),
        logged_propensity=np.full(n, 0.5),
    )
    policy = LinearSoftmaxPolicy(np.zeros((2, 3)))
    grad = grad_ips(data, policy, data.logged_propensity)
    manual = np.mean(
        [data.r[i] * policy.score(data.x[i], int(data.a[i])) for i in range(n)],
        axis=0,
    )
    assert np.allclose(grad, manual, atol=1e-12)


def test_grad_dr_zero_model_is_ips_bitwise():
    env = feature_env()
    data, _, _ = env_dataset(env, 300, 2)
    rng = np.random.default_rng(3)
    policy = LinearSoftmaxPolicy(rng.standard_normal((3, 3)))
    gi = grad_ips(data, policy, data.logged_propensity)
    gd = grad_dr(data, policy, np.zeros((data.n, 3)), data.logged_propensity)
    assert np.array_equal(gi, gd)


def test_grad_dr_constant_model_score_zero_sum():
    env = feature_env()
    data, _, _ = env_dataset(env, 300, 4)
    rng = np.random.default_rng(5)
    policy = LinearSoftmaxPolicy(rng.standard_normal((3, 3)))
    c = 1.2
    qhat = np.full((data.n, 3), c)
    gd = grad_dr(data, policy, qhat, data.logged_propensity)
    # the model term vanishes (sum_a pi s = 0), leaving IPS on residuals
    shifted = LaggedDataset(
        x=data.x, x_lags=data.x_lags, a=data.a, r=data.r - c,
        num_actions=3, lag_labels=("1",), logged_propensity=data.logged_propensity,
    )
    gi = grad_ips(shifted, policy, data.logged_propensity)
    assert np.allclose(gd, gi, atol=1e-12)


def test_grad_ips_mc_matches_exact_gradient_full_support():
    env = feature_env(seed=21, full_support=True)
    rng = np.random.default_rng(6)
    policy = LinearSoftmaxPolicy(0.5 * rng.standard_normal((3, 3)))
    exact = exact_gradient(env, policy)
    grads = []
    for rep in range(60):
        data, _, _ = env_dataset(env, 2000, (21, rep))
        grads.append(grad_ips(data, policy, data.logged_propensity))
    grads = np.array(grads)
    se = grads.std(axis=0, ddof=1) / np.sqrt(len(grads))
    assert np.all(np.abs(grads.mean(axis=0) - exact) < 3 * se + 1e-12)


def test_lag_score_marginal_at_zero_theta():
    # at theta=0 the intercept block of the score target is the constant
    # (1/|A|)(1{a=a'} - 1/|A|), and the feature blocks are linear in the lag
    # context: (1/|A|)(1{a=a'} - 1/|A|) * rho * x_lag_j; the ridge recovers
    # both, and dividing by the marginal (1/|A|) rescales them
    config = SynthConfig(n=4000, data_seed=9)
    env = make_env(config)
    data = generate(config, env)
    policy = LinearSoftmaxPolicy(np.zeros((5, 11)))
    folds = kfold_split(data.n, 2, 0)
    _, bar_theta, bar_scores = fit_lag_score_marginal(data, policy, 0, folds, reg=0.1)
    assert np.abs(bar_theta - 0.2).max() < 1e-3
    x_lag = data.lag(0)
    got_blocks, exp_blocks = [], []
    for i in range(data.n):
        a = int(data.a[i])
        indicator = np.array([1.0 if ap == a else 0.0 for ap in range(5)]) - 0.2
        got = bar_scores[i].reshape(5, 11)
        assert np.abs(got[:, -1] - indicator).max() < 1e-2
        got_blocks.append(got[:, 1:-1].ravel())
        exp_blocks.append(np.outer(indicator, config.lag_rho * x_lag[i])[:, 1:].ravel())
    got_flat = np.concatenate(got_blocks)
    exp_flat = np.concatenate(exp_blocks)
    # feature blocks follow the linear conditional mean up to ridge shrinkage
    corr = np.corrcoef(got_flat, exp_flat)[0, 1]
    slope = float(got_flat @ exp_flat / (exp_flat @ exp_flat))
    assert corr > 0.95
    assert 0.7 < slope < 1.1


def test_lag_score_marginal_matches_enumeration():
    env = feature_env(seed=33, full_support=True)
    rng = np.random.default_rng(8)
    policy = LinearSoftmaxPolicy(0.4 * rng.standard_normal((3, 3)))
    data, x0_idx, _ = env_dataset(env, 100_000, 12)
    # regress on one-hot lag features so the tabular structure is learnable
    onehot = np.zeros((data.n, 2))
    onehot[np.arange(data.n), x0_idx] = 1.0
    relabeled = LaggedDataset(
        x=data.x, x_lags=onehot[:, None, :], a=data.a, r=data.r,
        num_actions=3, lag_labels=("1",), logged_propensity=data.logged_propensity,
    )
    folds = kfold_split(relabeled.n, 2, 0)
    _, bar_theta, bar_scores = fit_lag_score_marginal(
        relabeled, policy, 0, folds, reg=1e-4
    )
    _, exact_bar_s = exact_lag_score_tables(env, policy)
    expected = exact_bar_s[x0_idx, data.a]
    assert np.abs(bar_scores - expected).max() < 0.05


def test_grad_dolce_reductions():
    env = feature_env(seed=41)
    data, x0, x = env_dataset(env, 400, 13)
    rng = np.random.default_rng(14)
    policy = LinearSoftmaxPolicy(0.3 * rng.standard_normal((3, 3)))
    qhat = rng.standard_normal((data.n, 3))
    bar_scores = rng.standard_normal((data.n, 9))
    # zero weights: only the model term remains
    comp = LagComponents(
        weights=np.zeros(data.n), qhat=qhat, alc=0.0, bar_scores=bar_scores
    )
    grad = grad_dolce(data, policy, [comp], lag=0)
    pi = policy.prob_matrix(data.x)
    expected = policy.weighted_score_sum(data.x, pi * qhat).mean(axis=0)
    assert np.allclose(grad, expected, atol=1e-12)
    # unit weights, zero model: reward-weighted lag scores
    comp = LagComponents(
        weights=np.ones(data.n),
        qhat=np.zeros((data.n, 3)),
        alc=0.0,
        bar_scores=bar_scores,
    )
    grad = grad_dolce(data, policy, [comp], lag=0)
    expected = (data.r[:, None] * bar_scores).mean(axis=0)
    assert np.allclose(grad, expected, atol=1e-12)


def test_grad_dolce_oracle_unbiased_under_violation():
    # criterion: the lag-weighted oracle gradient is unbiased while the
    # importance-weighted gradient is biased by many SEs
    env = feature_env(seed=55)
    rng = np.random.default_rng(15)
    policy = LinearSoftmaxPolicy(0.4 * rng.standard_normal((3, 3)))
    exact = exact_gradient(env, policy)
    q_tilde = lag_shift_q_tilde(env, 55)
    assert np.abs(exact_grad_ips_expectation(env, policy) - exact).max() > 1e-3
    assert np.abs(
        exact_grad_dolce_expectation(env, policy, q_tilde) - exact
    ).max() < 1e-12
    w_table = oracle_lag_weights(env, policy)
    _, bar_s_table = exact_lag_score_tables(env, policy)
    dol, ips = [], []
    reps = 80
    for rep in range(reps):
        data, x0, x = env_dataset(env, 2500, (55, rep))
        comp = LagComponents(
            weights=w_table[x0, data.a],
            qhat=q_tilde[x, x0, :],
            alc=0.0,
            bar_scores=bar_s_table[x0, data.a],
        )
        dol.append(grad_dolce(data, policy, [comp], lag=0))
        ips.append(grad_ips(data, policy, data.logged_propensity))
    dol, ips = np.array(dol), np.array(ips)
    dol_se = dol.std(axis=0, ddof=1) / np.sqrt(reps)
    ips_se = ips.std(axis=0, ddof=1) / np.sqrt(reps)
    assert np.all(np.abs(dol.mean(axis=0) - exact) < 3 * dol_se + 1e-12)
    assert np.abs((ips.mean(axis=0) - exact) / np.maximum(ips_se, 1e-12)).max() > 10


def test_osi_linearization_on_discrete_env():
    from lagope.oracle import exact_value

    env = feature_env(seed=60, full_support=True)
    rng = np.random.default_rng(16)
    theta = 0.3 * rng.standard_normal((3, 3))
    policy = LinearSoftmaxPolicy(theta)
    g = exact_gradient(env, policy)
    base = exact_value(env, policy)
    ratios = []
    for alpha in (1e-3, 1e-4):
        stepped = LinearSoftmaxPolicy(theta + alpha * g.reshape(theta.shape))
        osi = exact_value(env, stepped) - base
        ratios.append(osi / alpha)
    gg = float(g @ g)
    assert gg >= 0
    assert abs(ratios[1] - gg) < abs(ratios[0] - gg) + 1e-12
    assert ratios[1] == pytest.approx(gg, rel=1e-2)


def test_train_policy_single_step_update():
    config = SynthConfig(n=300, data_seed=11)
    env = make_env(config)
    data = generate(config, env, exploration_floor=0.05)
    theta0 = initial_theta(7, config.num_actions, config.d)
    tc = TrainConfig(steps=1, step_size=0.2, estimator="ips", init_seed=7)
    result = train_policy(data, tc, theta0=theta0)
    g0 = grad_ips(data, LinearSoftmaxPolicy(theta0), data.logged_propensity)
    assert np.allclose(
        result.policy.theta, theta0 + 0.2 * g0.reshape(theta0.shape), atol=1e-12
    )
    assert result.thetas.shape == (2, config.num_actions, config.d + 1)
    assert np.array_equal(result.first_gradient, g0)


def test_train_policy_zero_step_size_keeps_theta():
    config = SynthConfig(n=300, data_seed=12)
    env = make_env(config)
    data = generate(config, env, exploration_floor=0.05)
    theta0 = initial_theta(8, config.num_actions, config.d)
    result = train_policy(
        data, TrainConfig(steps=3, step_size=0.0, estimator="ips"), theta0=theta0
    )
    assert np.array_equal(result.policy.theta, theta0)


def test_train_config_validation():
    with pytest.raises(InvalidConfigError):
        TrainConfig(steps=0)
    with pytest.raises(InvalidConfigError):
        TrainConfig(step_size=-0.1)
    with pytest.raises(InvalidConfigError):
        TrainConfig(estimator="gru")


def test_train_policy_aborts_on_nonfinite_gradient():
    config = SynthConfig(n=300, data_seed=13)
    env = make_env(config)
    data = generate(config, env, exploration_floor=0.05)
    poisoned = LaggedDataset(
        x=data.x,
        x_lags=data.x_lags,
        a=data.a,
        r=np.where(np.arange(data.n) == 0, np.inf, data.r),
        num_actions=5,
        lag_labels=("1",),
        logged_propensity=data.logged_propensity,
    )
    with pytest.raises(NumericError):
        train_policy(poisoned, TrainConfig(steps=1, estimator="ips"))


def test_train_policy_dolce_runs_and_refits():
    config = SynthConfig(n=400, data_seed=14, violation_ratio=0.5)
    env = make_env(config)
    data = generate(config, env, exploration_floor=0.05)
    result = train_policy(
        data,
        TrainConfig(steps=3, estimator="dolce", init_seed=1),
        nuisance_config=NuisanceConfig(reward_variant="plain", seed=3),
    )
    assert result.grad_norms.shape == (3,)
    assert np.all(np.isfinite(result.grad_norms))


def test_opl_metrics_identities():
    config = SynthConfig(n=400, data_seed=15, mix_lambda=1.0)
    env = make_env(config)
    test_set = generate(config, env)
    cutoff = violation_cutoff(test_set.x[:, 0], config.violation_ratio)
    logging_policy = SynthLoggingPolicy(env, config.logging_beta, cutoff, 0.05)
    theta0 = initial_theta(2, config.num_actions, config.d)
    zero_grad = np.zeros(config.num_actions * (config.d + 1))
    # learned policy equal to the logging policy: NI = 0
    metrics = opl_metrics(
        logging_policy, logging_policy, test_set, env, config, theta0, zero_grad, 0.05
    )
    assert metrics.ni == pytest.approx(0.0, abs=1e-12)
    assert metrics.osi == pytest.approx(0.0, abs=1e-12)
    # with mix_lambda = 1 the reward ignores the lag, so greedy-on-current
    # scores attains the best-in-class value: NI = 1, regret = 0
    from lagope.synthgen import target_policy

    greedy = target_policy(env, epsilon=0.0)
    metrics = opl_metrics(
        greedy, logging_policy, test_set, env, config, theta0, zero_grad, 0.05
    )
    assert metrics.ni == pytest.approx(1.0, abs=1e-12)
    assert metrics.regret == pytest.approx(0.0, abs=1e-12)


def test_opl_metrics_missing_ni_when_gap_vanishes():
    config = SynthConfig(n=200, data_seed=16, num_actions=1)
    env = make_env(config)
    test_set = generate(config, env)
    from lagope.policies import UniformPolicy

    only = UniformPolicy(1)
    theta0 = np.zeros((1, config.d + 1))
    metrics = opl_metrics(
        only, only, test_set, env, config, theta0, np.zeros(config.d + 1), 0.05
    )
    assert np.isnan(metrics.ni)
    assert metrics.regret == pytest.approx(0.0, abs=1e-12)
