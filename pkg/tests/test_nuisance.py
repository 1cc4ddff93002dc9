import numpy as np
import pytest

from lagope.errors import InvalidConfigError
from lagope.linear import RidgeRegressor
from lagope.nuisance import (
    CriticDictionary,
    NuisanceConfig,
    RewardFeatureMap,
    behavior_propensities,
    default_critics,
    estimate_alc,
    fit_lag_propensity,
    fit_lag_target_marginal,
    fit_nuisances,
    fit_reward_model_mtri,
    fit_reward_model_plain,
    fit_ridge,
    kfold_split,
    lag_weight,
    oof_reward_predictions,
    x_only_critics,
)
from lagope.oracle import exact_lag_marginals, random_env, random_target_table, sample, to_lagged_dataset
from lagope.policies import TabularPolicy, UniformPolicy
from lagope.synthgen import SynthConfig, generate, make_env, target_policy
from lagope.types import LaggedDataset


def synthetic_data(n=400, seed=3, **kwargs):
    config = SynthConfig(n=n, data_seed=seed, **kwargs)
    env = make_env(config)
    data = generate(config, env)
    policy = target_policy(env, config.target_epsilon)
    return config, env, data, policy


def test_kfold_even_and_odd_splits():
    folds = kfold_split(10, 2, seed=0)
    sizes = np.bincount(folds.fold_of)
    assert sorted(sizes) == [5, 5]
    folds = kfold_split(11, 2, seed=0)
    assert sorted(np.bincount(folds.fold_of)) == [5, 6]


def test_kfold_deterministic_and_validated():
    a = kfold_split(20, 4, seed=7)
    b = kfold_split(20, 4, seed=7)
    assert np.array_equal(a.fold_of, b.fold_of)
    with pytest.raises(InvalidConfigError):
        kfold_split(10, 1, seed=0)
    with pytest.raises(InvalidConfigError):
        kfold_split(3, 2, seed=0)


def test_fit_ridge_is_closed_form():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((50, 2))
    y = x @ np.array([1.0, -2.0]) + 0.5
    model = fit_ridge(x, y, reg=1e-8)
    assert np.allclose(model.weights_, [1.0, -2.0], atol=1e-6)


def test_lag_propensity_no_signal_matches_frequencies():
    rng = np.random.default_rng(1)
    n = 10_000
    data = LaggedDataset(
        x=rng.standard_normal((n, 2)),
        x_lags=rng.standard_normal((n, 1, 2)),
        a=rng.integers(0, 3, n),
        r=rng.standard_normal(n),
        num_actions=3,
        lag_labels=("1",),
    )
    folds = kfold_split(n, 2, 0)
    _, oof = fit_lag_propensity(data, 0, folds)
    freq = np.bincount(data.a, minlength=3) / n
    assert np.abs(oof.mean(axis=0) - freq).max() < 0.02


def test_lag_propensity_supported_despite_violation():
    # predictions conditional on the lag context stay at or above the floor
    # even though the logging policy is degenerate in the violation region
    config, env, data, policy = synthetic_data(n=1000, violation_ratio=0.5)
    folds = kfold_split(data.n, 2, 0)
    _, oof = fit_lag_propensity(data, 0, folds, p_min=1e-3)
    assert oof.min() >= 1e-3
    assert np.allclose(oof.sum(axis=1), 1.0, atol=1e-10)


def test_lag_nuisances_approach_exact_marginals_on_discrete_env():
    env = random_env(11, n_lag=3, n_cur=3, num_actions=3, noise_scale=0.1)
    rng = np.random.default_rng(2)
    x0, x, a, r = sample(env, 100_000, rng)
    data = to_lagged_dataset(env, x0, x, a, r, encoding="onehot")
    pi_table = random_target_table(env, 11, with_zeros=False)
    policy = TabularPolicy(pi_table)
    folds = kfold_split(data.n, 2, 0)
    _, bar0 = fit_lag_propensity(data, 0, folds, reg=1e-4)
    _, bart = fit_lag_target_marginal(data, policy, 0, folds, reg=1e-4)
    exact_t, exact_0 = exact_lag_marginals(env, pi_table)
    # compare per-sample predictions to the exact tables at the sampled lag contexts
    assert np.abs(bar0 - exact_0[x0]).max() < 0.02
    assert np.abs(bart - exact_t[x0]).max() < 0.02


def test_lag_target_marginal_uniform_policy():
    config, env, data, _ = synthetic_data(n=800)
    folds = kfold_split(data.n, 2, 0)
    _, oof = fit_lag_target_marginal(data, UniformPolicy(5), 0, folds)
    assert np.abs(oof - 0.2).max() < 0.01


def test_lag_weight_clip_and_identity():
    config, env, data, policy = synthetic_data(n=600)
    nuis = fit_nuisances(data, policy, NuisanceConfig(seed=1))
    ln = nuis.lags[0]
    w_unc = ln.weights_unclipped(data.a)
    w = ln.weights_logged(data.a)
    assert np.all(w <= nuis.config.clip + 1e-12)
    assert np.allclose(np.minimum(w_unc, nuis.config.clip), w)
    # point-wise model evaluation agrees with the cached ratio for its fold
    i = 17
    j = int(nuis.folds.fold_of[i])
    point = lag_weight(nuis, 0, j, data.lag(0)[i], int(data.a[i]))
    assert point == pytest.approx(w[i], rel=1e-10)
    assert lag_weight(nuis, 0, j, data.lag(0)[i], int(data.a[i]), clip=np.inf) == (
        pytest.approx(w_unc[i], rel=1e-10)
    )


def test_reward_model_constant_target():
    rng = np.random.default_rng(4)
    n = 300
    data = LaggedDataset(
        x=rng.standard_normal((n, 3)),
        x_lags=rng.standard_normal((n, 1, 3)),
        a=rng.integers(0, 2, n),
        r=np.full(n, 2.5),
        num_actions=2,
        lag_labels=("1",),
    )
    folds = kfold_split(n, 2, 0)
    models = fit_reward_model_plain(data, 0, folds, reg=1e-6)
    preds = oof_reward_predictions(data, 0, folds, models)
    assert np.abs(preds - 2.5).max() < 1e-6


def test_reward_model_recovers_linear_truth():
    rng = np.random.default_rng(5)
    n = 10_000
    x = rng.standard_normal((n, 2))
    xl = rng.standard_normal((n, 2))
    a = rng.integers(0, 2, n)
    coef = np.array([[1.0, -1.0, 0.5, 0.0, 0.2], [0.0, 2.0, 0.0, -0.5, 1.0]])
    psi = np.hstack([np.ones((n, 1)), x, xl])
    r = np.einsum("np,np->n", psi, coef[a])
    data = LaggedDataset(
        x=x, x_lags=xl[:, None, :], a=a, r=r, num_actions=2, lag_labels=("1",)
    )
    folds = kfold_split(n, 2, 0)
    fmap = RewardFeatureMap(kind="linear")
    models = fit_reward_model_plain(data, 0, folds, reg=1e-6, feature_map=fmap)
    preds = oof_reward_predictions(data, 0, folds, models)
    truth = psi @ coef.T
    assert np.abs(preds - truth[np.arange(n)][:, :]).max() < 1e-3


def test_reward_model_fallback_for_absent_action():
    rng = np.random.default_rng(6)
    n = 200
    data = LaggedDataset(
        x=rng.standard_normal((n, 2)),
        x_lags=rng.standard_normal((n, 1, 2)),
        a=np.zeros(n, dtype=int),
        r=rng.standard_normal(n),
        num_actions=3,
        lag_labels=("1",),
    )
    folds = kfold_split(n, 2, 0)
    models = fit_reward_model_plain(data, 0, folds, reg=0.1)
    assert models[0].fallback_actions == (1, 2)


def test_mtri_zero_penalty_matches_plain():
    config, env, data, policy = synthetic_data(n=500)
    folds = kfold_split(data.n, 2, 0)
    plain = fit_reward_model_plain(data, 0, folds, reg=0.1)
    mtri = fit_reward_model_mtri(data, 0, folds, mtri_penalty=0.0, reg=0.1, seed=0)
    for mp, mm in zip(plain, mtri):
        assert np.abs(mp.coef - mm.coef).max() < 1e-10


def test_mtri_moments_vanish_when_orthogonality_achievable():
    # residual-invariant truth, critics spanned by the model: large penalties
    # drive the training moments to zero
    rng = np.random.default_rng(7)
    n = 2000
    x0 = rng.standard_normal((n, 1))
    x = x0 + rng.standard_normal((n, 1))
    a = rng.integers(0, 2, n)
    delta = np.where(a == 0, 0.8, -0.4) * (x0[:, 0] > 0)
    r = delta + 0.05 * rng.standard_normal(n)
    data = LaggedDataset(
        x=x, x_lags=x0[:, None, :], a=a, r=r, num_actions=2, lag_labels=("1",)
    )
    folds = kfold_split(n, 2, 0)
    models = fit_reward_model_mtri(
        data,
        0,
        folds,
        critics=x_only_critics(1),
        mtri_penalty=1e8,
        reg=1e-6,
        feature_map=RewardFeatureMap(kind="linear"),
        seed=0,
    )
    for model in models:
        assert np.linalg.norm(model.moments_) < 1e-6


def test_alc_near_zero_for_exact_model():
    # exact reward model and noiseless m-fits: the residual is pure reward
    # noise, entirely removed here so the plug-in hits (numerical) zero
    config, env, data, policy = synthetic_data(n=10_000, seed=8)
    from lagope.synthgen import mean_reward_matrix

    class ExactModel:
        variant = "exact"
        fallback_actions = ()

        def predict_all(self, x, x_lag):
            return mean_reward_matrix(
                env, x, x_lag, config.mix_lambda, config.interaction_eta
            )

    q_logged = mean_reward_matrix(
        env, data.x, data.lag(0), config.mix_lambda, config.interaction_eta
    )[np.arange(data.n), data.a]
    noiseless = LaggedDataset(
        x=data.x, x_lags=data.x_lags, a=data.a, r=q_logged,
        num_actions=5, lag_labels=data.lag_labels,
    )
    folds = kfold_split(data.n, 2, 0)
    alc = estimate_alc(noiseless, 0, folds, [ExactModel(), ExactModel()], reg=0.1)
    assert 0.0 <= alc < 0.01


def test_alc_decreases_with_sample_size_for_exact_model():
    from lagope.synthgen import mean_reward_matrix

    scores = []
    for n in (500, 2000, 8000):
        config, env, data, _ = synthetic_data(n=n, seed=8)

        class ExactModel:
            variant = "exact"
            fallback_actions = ()

            def predict_all(self, x, x_lag):
                return mean_reward_matrix(
                    env, x, x_lag, config.mix_lambda, config.interaction_eta
                )

        folds = kfold_split(data.n, 2, 0)
        scores.append(estimate_alc(data, 0, folds, [ExactModel(), ExactModel()], reg=0.1))
    assert scores[0] > scores[1] > scores[2]


def test_alc_orders_invariant_vs_current_structured_residuals():
    # a residual that is a pure lag function scores lower than a residual
    # carrying the same variance in the current context
    rng = np.random.default_rng(9)
    n = 4000
    x0 = rng.standard_normal((n, 1))
    x = x0 + rng.standard_normal((n, 1))
    a = rng.integers(0, 2, n)
    noise = 0.1 * rng.standard_normal(n)
    folds_seed = 0

    class ZeroModel:
        variant = "zero"
        fallback_actions = ()

        def predict_all(self, xx, xl):
            return np.zeros((xx.shape[0], 2))

    folds = kfold_split(n, 2, folds_seed)
    lag_resid = LaggedDataset(
        x=x, x_lags=x0[:, None, :], a=a, r=1.5 * x0[:, 0] + noise,
        num_actions=2, lag_labels=("1",),
    )
    cur_resid = LaggedDataset(
        x=x, x_lags=x0[:, None, :], a=a, r=1.5 * (x[:, 0] - x0[:, 0]) + noise,
        num_actions=2, lag_labels=("1",),
    )
    alc_lag = estimate_alc(lag_resid, 0, folds, [ZeroModel(), ZeroModel()], reg=0.1)
    alc_cur = estimate_alc(cur_resid, 0, folds, [ZeroModel(), ZeroModel()], reg=0.1)
    assert alc_lag < alc_cur
    assert alc_lag >= 0.0


def test_nuisance_set_out_of_fold_bookkeeping():
    config, env, data, policy = synthetic_data(n=500)
    nuis = fit_nuisances(data, policy, NuisanceConfig(seed=2))
    assert nuis.num_lags == 1
    ln = nuis.lags[0]
    # the cached prediction for sample i must equal the evaluation of the
    # model belonging to i's fold (trained without i)
    for i in (0, 13, 77):
        j = int(nuis.folds.fold_of[i])
        assert i not in set(nuis.folds.train_indices(j))
        feats = ln.marginal_map.lag_features(data.lag(0)[i][None, :])
        pred = ln.propensity_models[j].predict_proba(feats)[0]
        assert np.allclose(pred, ln.bar_pi0_oof[i], atol=1e-12)
        qpred = ln.reward_models[j].predict_all(
            data.x[i][None, :], data.lag(0)[i][None, :]
        )[0]
        assert np.allclose(qpred, ln.qhat_oof[i], atol=1e-12)


def test_nuisance_predictions_are_floored_simplexes():
    config, env, data, policy = synthetic_data(n=500)
    nuis = fit_nuisances(data, policy, NuisanceConfig(seed=3))
    ln = nuis.lags[0]
    for mat in (ln.bar_pi0_oof, ln.bar_theta_oof):
        assert mat.min() >= nuis.config.p_min - 1e-15
        assert np.allclose(mat.sum(axis=1), 1.0, atol=1e-9)


def test_behavior_propensities_prefers_logged():
    config, env, data, policy = synthetic_data(n=300)
    folds = kfold_split(data.n, 2, 0)
    prop = behavior_propensities(data, folds)
    assert np.array_equal(prop, data.logged_propensity)
    stripped = LaggedDataset(
        x=data.x, x_lags=data.x_lags, a=data.a, r=data.r,
        num_actions=5, lag_labels=data.lag_labels,
    )
    fitted = behavior_propensities(stripped, folds)
    assert fitted.min() > 0
    assert fitted.shape == (data.n,)


def test_invalid_config_rejected():
    with pytest.raises(InvalidConfigError):
        NuisanceConfig(k_cf=1)
    with pytest.raises(InvalidConfigError):
        NuisanceConfig(tau=0.0)
    with pytest.raises(InvalidConfigError):
        NuisanceConfig(reward_variant="boost")
    with pytest.raises(InvalidConfigError):
        RewardFeatureMap(kind="spline")


def test_critic_dictionary_shapes():
    critics = default_critics(4)
    rng = np.random.default_rng(10)
    basis = critics.base_matrix(rng.standard_normal((7, 4)), rng.standard_normal((7, 4)))
    assert basis.shape == (7, 12)
    with pytest.raises(Exception):
        CriticDictionary(lambda x, xl: x, 99).base_matrix(
            rng.standard_normal((7, 4)), rng.standard_normal((7, 4))
        )
