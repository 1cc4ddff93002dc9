import numpy as np
import pytest

from lagope.errors import ConvergenceError, InvalidConfigError
from lagope.linear import MultinomialLogit, RidgeRegressor, RidgeSolver


def test_exact_line_recovered():
    x = np.linspace(-2, 2, 40).reshape(-1, 1)
    y = 2.0 * x[:, 0] + 1.0
    model = RidgeRegressor(reg=1e-8).fit(x, y)
    assert model.weights_[0] == pytest.approx(2.0, abs=1e-6)
    assert model.intercept_ == pytest.approx(1.0, abs=1e-6)


def test_heavy_ridge_collapses_to_mean():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((30, 2))
    y = rng.standard_normal(30)
    model = RidgeRegressor(reg=1e9).fit(x, y)
    assert np.abs(model.weights_).max() < 1e-6
    assert model.intercept_ == pytest.approx(y.mean(), abs=1e-6)


def test_matches_hand_solved_normal_equations():
    # 3x2 system solved by hand: center, then (Xc'Xc + reg I) w = Xc'yc.
    x = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    y = np.array([1.0, 2.0, 2.5])
    reg = 0.3
    x_mean = x.mean(axis=0)
    xc = x - x_mean
    yc = y - y.mean()
    w_hand = np.linalg.solve(xc.T @ xc + reg * np.eye(2), xc.T @ yc)
    b_hand = y.mean() - x_mean @ w_hand
    model = RidgeRegressor(reg=reg).fit(x, y)
    assert np.allclose(model.weights_, w_hand, atol=1e-12)
    assert model.intercept_ == pytest.approx(b_hand, abs=1e-12)


def test_multi_target_matches_per_target():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((25, 3))
    ys = rng.standard_normal((25, 4))
    multi = RidgeRegressor(reg=0.5).fit(x, ys)
    for t in range(4):
        single = RidgeRegressor(reg=0.5).fit(x, ys[:, t])
        assert np.allclose(multi.weights_[:, t], single.weights_, atol=1e-12)
        assert np.allclose(multi.predict(x)[:, t], single.predict(x), atol=1e-12)


def test_ridge_solver_matches_regressor():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((30, 4))
    y = rng.standard_normal((30, 2))
    solver = RidgeSolver(x, reg=0.7)
    w, b = solver.solve(y)
    model = RidgeRegressor(reg=0.7).fit(x, y)
    assert np.allclose(w, model.weights_, atol=1e-12)
    assert np.allclose(b, model.intercept_, atol=1e-12)


def test_reg_must_be_positive():
    with pytest.raises(InvalidConfigError):
        RidgeRegressor(reg=0.0).fit(np.ones((3, 1)), np.ones(3))


def test_logit_no_signal_matches_frequencies():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((8000, 3))
    y = rng.integers(0, 3, 8000)  # actions independent of features
    model = MultinomialLogit(reg=1e-2).fit(x, y, n_classes=3)
    probs = model.predict_proba(x)
    freq = np.bincount(y, minlength=3) / len(y)
    assert np.abs(probs.mean(axis=0) - freq).max() < 0.02


def test_logit_recovers_separable_signal():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((4000, 1))
    probs_true = 1.0 / (1.0 + np.exp(-3.0 * x[:, 0]))
    y = (rng.random(4000) < probs_true).astype(int)
    model = MultinomialLogit(reg=1e-2).fit(x, y, n_classes=2)
    pred = model.predict_proba(np.array([[2.0]]))[0]
    assert pred[1] > 0.95


def test_logit_floor_and_simplex():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((500, 2)) * 5
    y = (x[:, 0] > 0).astype(int)
    model = MultinomialLogit(reg=1e-4, p_min=1e-3).fit(x, y, n_classes=2)
    probs = model.predict_proba(x)
    assert probs.min() >= 1e-3
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)


def test_logit_convergence_error_carries_gradient_norm():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((200, 2))
    y = rng.integers(0, 2, 200)
    with pytest.raises(ConvergenceError) as exc:
        MultinomialLogit(reg=1e-2, max_iter=1, tol=1e-300).fit(x, y)
    assert exc.value.gradient_norm > 0


def test_logit_handles_absent_class():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((100, 2))
    y = rng.integers(0, 2, 100)  # class 2 absent
    model = MultinomialLogit(reg=1e-2).fit(x, y, n_classes=3)
    probs = model.predict_proba(x)
    assert probs.shape == (100, 3)
    assert probs[:, 2].max() < 0.2
