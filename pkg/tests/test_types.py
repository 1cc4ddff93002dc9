import numpy as np
import pytest

from lagope.errors import InvalidInputError
from lagope.types import EstimateReport, FoldAssignment, LaggedDataset, LaggedSample


def make_dataset(n=6, d=3, k=2, with_prop=True):
    rng = np.random.default_rng(0)
    return LaggedDataset(
        x=rng.standard_normal((n, d)),
        x_lags=rng.standard_normal((n, k, d)),
        a=rng.integers(0, 4, n),
        r=rng.standard_normal(n),
        num_actions=4,
        lag_labels=tuple(str(i + 1) for i in range(k)),
        logged_propensity=rng.uniform(0.1, 1.0, n) if with_prop else None,
    )


def test_dataset_dimensions():
    data = make_dataset()
    assert (data.n, data.d, data.num_lags) == (6, 3, 2)
    assert data.lag(1).shape == (6, 3)


def test_dataset_arrays_are_read_only():
    data = make_dataset()
    with pytest.raises(ValueError):
        data.x[0, 0] = 1.0


def test_sample_round_trip():
    data = make_dataset()
    rebuilt = LaggedDataset.from_samples(
        data.samples, num_actions=4, lag_labels=data.lag_labels
    )
    assert np.allclose(rebuilt.x, data.x)
    assert np.allclose(rebuilt.x_lags, data.x_lags)
    assert np.array_equal(rebuilt.a, data.a)
    assert np.allclose(rebuilt.logged_propensity, data.logged_propensity)


def test_lag_length_mismatch_rejected():
    with pytest.raises(InvalidInputError):
        LaggedSample(
            x=np.zeros(3), x_lags=(np.zeros(2),), a=0, r=0.0, logged_propensity=0.5
        )


def test_propensity_range_enforced():
    with pytest.raises(InvalidInputError):
        LaggedSample(x=np.zeros(2), x_lags=(), a=0, r=0.0, logged_propensity=1.5)
    data = make_dataset(with_prop=True)
    with pytest.raises(InvalidInputError):
        LaggedDataset(
            x=data.x,
            x_lags=data.x_lags,
            a=data.a,
            r=data.r,
            num_actions=4,
            lag_labels=data.lag_labels,
            logged_propensity=np.zeros(data.n),
        )


def test_action_out_of_range_rejected():
    data = make_dataset()
    with pytest.raises(InvalidInputError):
        LaggedDataset(
            x=data.x,
            x_lags=data.x_lags,
            a=np.full(data.n, 9),
            r=data.r,
            num_actions=4,
            lag_labels=data.lag_labels,
        )


def test_empty_dataset_rejected():
    with pytest.raises(InvalidInputError):
        LaggedDataset(
            x=np.zeros((0, 2)),
            x_lags=np.zeros((0, 1, 2)),
            a=np.zeros(0, dtype=int),
            r=np.zeros(0),
            num_actions=2,
            lag_labels=("1",),
        )


def test_fold_assignment_invariants():
    fold_of = np.array([0, 1, 0, 1, 0])
    folds = FoldAssignment(fold_of=fold_of, n_folds=2)
    assert set(folds.test_indices(0)) == {0, 2, 4}
    assert set(folds.train_indices(0)) == {1, 3}
    with pytest.raises(InvalidInputError):
        FoldAssignment(fold_of=np.array([0, 0, 0, 1]), n_folds=2)
    with pytest.raises(InvalidInputError):
        FoldAssignment(fold_of=np.array([0, 0, 0]), n_folds=2)


def test_report_invariants():
    with pytest.raises(InvalidInputError):
        EstimateReport(
            value=1.0, se=0.1, ci_low=1.1, ci_high=1.2, ess=3.0, estimator_name="x"
        )
    with pytest.raises(InvalidInputError):
        EstimateReport(
            value=1.0,
            se=0.1,
            ci_low=0.9,
            ci_high=1.1,
            ess=3.0,
            estimator_name="x",
            lag_weights_alpha=(0.5, 0.4),
        )
    report = EstimateReport(
        value=1.0,
        se=0.1,
        ci_low=0.9,
        ci_high=1.1,
        ess=3.0,
        estimator_name="x",
        lag_weights_alpha=(0.6, 0.4),
    )
    row = report.csv_row()
    assert row[0] == "x"
    assert len(row) == len(EstimateReport.csv_header(num_lags=2))
