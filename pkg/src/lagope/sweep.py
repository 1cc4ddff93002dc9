"""Monte Carlo sweep harness: evaluation and learning curves over a grid.

Replications fan out over a process pool with per-replication seeds derived by
a fixed hash, and results are merged in replication order, so output is
byte-identical for any parallelism degree.
"""
from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import InvalidConfigError, InvalidInputError
from .estimators import dm_estimate, dolce_estimate, dr_estimate, ips_estimate
from .nuisance import (
    NuisanceConfig,
    behavior_propensities,
    fit_current_reward_model,
    fit_nuisances,
    kfold_split,
)
from .opl import TrainConfig, initial_theta, opl_metrics, train_policy
from .policies import Policy
from .synthgen import (
    SynthConfig,
    SynthLoggingPolicy,
    generate,
    make_env,
    replication_seed,
    target_policy,
    true_value_mc,
    violation_cutoff,
)
from .types import EstimateReport, LaggedDataset

SWEEP_VARIABLES = {
    "r": "violation_ratio",
    "mix_lambda": "mix_lambda",
    "num_actions": "num_actions",
    "n": "n",
    "interaction_eta": "interaction_eta",
}
OPE_ESTIMATORS = ("dm", "ips", "dr", "dolce")
OPL_ESTIMATORS = ("ips", "dr", "dolce")
_TEST_STREAM = 0x74657374


@dataclass(frozen=True)
class SweepConfig:
    """One sweep: a base configuration, the variable to vary, and a grid."""

    base: SynthConfig
    nuisance: NuisanceConfig
    variable: str
    grid: tuple[float, ...]
    replications: int
    estimators: tuple[str, ...]
    truth_samples: int = 200_000
    level: float = 0.95

    def __post_init__(self):
        if self.variable not in SWEEP_VARIABLES:
            raise InvalidConfigError(
                f"sweep variable must be one of {sorted(SWEEP_VARIABLES)}, "
                f"got {self.variable!r}"
            )
        if not self.grid:
            raise InvalidConfigError("sweep grid must be nonempty")
        if self.replications < 1:
            raise InvalidConfigError("replications must be >= 1")
        unknown = set(self.estimators) - set(OPE_ESTIMATORS)
        if unknown:
            raise InvalidConfigError(f"unknown estimators {sorted(unknown)}")


def apply_grid_value(base: SynthConfig, variable: str, value: float) -> SynthConfig:
    field = SWEEP_VARIABLES[variable]
    if field in ("n", "num_actions"):
        return replace(base, **{field: int(value)})
    return replace(base, **{field: float(value)})


def _map_ordered(fn, tasks, jobs: int):
    if jobs <= 1:
        return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (jobs * 4))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks, chunksize=chunk))


# ---------------------------------------------------------------------------
# Evaluation sweep
# ---------------------------------------------------------------------------


def run_estimators(
    data: LaggedDataset,
    policy: Policy,
    nuisance_config: NuisanceConfig,
    estimators: tuple[str, ...],
    level: float = 0.95,
) -> tuple[dict[str, EstimateReport], dict[str, str], dict]:
    """Run the requested estimators on one dataset.

    Returns the reports, a map of skipped estimators to the reason, and a
    diagnostics dictionary (per-lag residual-invariance scores, weight
    quantiles, reward-model fallbacks).
    """
    reports: dict[str, EstimateReport] = {}
    skipped: dict[str, str] = {}
    diagnostics: dict = {}
    folds = kfold_split(data.n, nuisance_config.k_cf, nuisance_config.seed)
    needs_baseline = any(e in estimators for e in ("dm", "ips", "dr"))
    if needs_baseline:
        propensities = behavior_propensities(
            data, folds, reg=nuisance_config.reg, p_min=nuisance_config.p_min
        )
        qhat_current = fit_current_reward_model(data, folds, reg=nuisance_config.reg)
        if "dm" in estimators:
            reports["dm"] = dm_estimate(data, qhat_current, policy, level=level)
        if "ips" in estimators:
            reports["ips"] = ips_estimate(data, policy, propensities, level=level)
        if "dr" in estimators:
            reports["dr"] = dr_estimate(
                data, policy, qhat_current, propensities, level=level
            )
    if "dolce" in estimators:
        if data.num_lags == 0:
            skipped["dolce"] = (
                "dataset has no lag columns; add lag{label}_j columns to the CSV "
                "to enable the lag-weighted estimator"
            )
        else:
            nuisances = fit_nuisances(data, policy, nuisance_config)
            reports["dolce"] = dolce_estimate(data, policy, nuisances, level=level)
            quantiles = (0.0, 0.25, 0.5, 0.75, 0.9, 0.99, 1.0)
            diagnostics["lags"] = [
                {
                    "lag": ln.lag_index + 1,
                    "alc": ln.alc,
                    "weight_quantiles": {
                        str(q): float(np.quantile(ln.weights_logged(data.a), q))
                        for q in quantiles
                    },
                    "fallback_actions": list(ln.fallback_actions),
                }
                for ln in nuisances.lags
            ]
    diagnostics["ess"] = {name: rep.ess for name, rep in reports.items()}
    return reports, skipped, diagnostics


def _ope_replication(task) -> dict[str, tuple[float, float, float, float, float]]:
    config, nuisance_config, estimators, level, rep = task
    rep_config = replace(
        config, data_seed=replication_seed(config.data_seed, rep)
    )
    env = make_env(config)
    data = generate(rep_config, env)
    policy = target_policy(env, config.target_epsilon)
    reports, _, _ = run_estimators(
        data,
        policy,
        replace(nuisance_config, seed=rep_config.data_seed),
        estimators,
        level=level,
    )
    return {
        name: (rep_.value, rep_.se, rep_.ci_low, rep_.ci_high, rep_.ess)
        for name, rep_ in reports.items()
    }


def run_ope_sweep(sweep: SweepConfig, jobs: int = 1) -> list[dict]:
    """Bias/variance/MSE/coverage per (grid value, estimator) against MC truth."""
    rows = []
    for value in sweep.grid:
        config = apply_grid_value(sweep.base, sweep.variable, value)
        env = make_env(config)
        policy = target_policy(env, config.target_epsilon)
        truth = true_value_mc(config, env, policy, sweep.truth_samples)
        tasks = [
            (config, sweep.nuisance, sweep.estimators, sweep.level, rep)
            for rep in range(sweep.replications)
        ]
        results = _map_ordered(_ope_replication, tasks, jobs)
        for name in sweep.estimators:
            per_rep = np.array([res[name] for res in results])
            values = per_rep[:, 0]
            bias = float(values.mean() - truth)
            variance = float(((values - values.mean()) ** 2).mean())
            mse = float(((values - truth) ** 2).mean())
            covered = (per_rep[:, 2] <= truth) & (truth <= per_rep[:, 3])
            rows.append(
                {
                    "sweep_var": sweep.variable,
                    "value": value,
                    "estimator": name,
                    "bias": bias,
                    "variance": variance,
                    "mse": mse,
                    "coverage": float(covered.mean()),
                    "mean_ess": float(per_rep[:, 4].mean()),
                    "replications": sweep.replications,
                    "truth": truth,
                }
            )
    return rows


# ---------------------------------------------------------------------------
# Learning sweep
# ---------------------------------------------------------------------------


def _opl_replication(task) -> dict[str, tuple[tuple[float, float, float], list[float]]]:
    config, nuisance_config, train_base, estimators, test_n, rep = task
    rep_seed = replication_seed(config.data_seed, rep)
    rep_config = replace(config, data_seed=rep_seed)
    env = make_env(config)
    data = generate(rep_config, env, exploration_floor=train_base.exploration_floor)
    test_config = replace(
        config, n=test_n, data_seed=replication_seed(config.data_seed, _TEST_STREAM)
    )
    test_set = generate(test_config, env, exploration_floor=train_base.exploration_floor)
    cutoff_test = violation_cutoff(test_set.x[:, 0], config.violation_ratio)
    logging_policy = SynthLoggingPolicy(
        env, config.logging_beta, cutoff_test, train_base.exploration_floor
    )
    theta0 = initial_theta(rep_seed, config.num_actions, config.d)
    out = {}
    for name in estimators:
        train_config = replace(train_base, estimator=name, init_seed=rep_seed)
        result = train_policy(
            data,
            train_config,
            nuisance_config=replace(nuisance_config, seed=rep_seed),
            theta0=theta0,
        )
        metrics = opl_metrics(
            result.policy,
            logging_policy,
            test_set,
            env,
            config,
            theta0,
            result.first_gradient,
            train_config.step_size,
        )
        out[name] = (
            (metrics.ni, metrics.osi, metrics.regret),
            [float(g) for g in result.grad_norms],
        )
    return out


def run_opl_sweep(
    sweep: SweepConfig,
    train_config: TrainConfig | None = None,
    test_n: int = 10_000,
    jobs: int = 1,
    detail: dict | None = None,
) -> list[dict]:
    """Mean and SE of NI/OSI/regret per (grid value, estimator).

    Every gradient estimator shares the same per-replication dataset and
    policy initialization. When a ``detail`` dict is supplied it is filled
    with ``replications`` (one row per replication and estimator) and
    ``trajectories`` (per-step gradient norms).
    """
    if train_config is None:
        train_config = TrainConfig()
    estimators = tuple(e for e in sweep.estimators if e in OPL_ESTIMATORS)
    if not estimators:
        raise InvalidConfigError(
            f"learning sweep needs estimators among {OPL_ESTIMATORS}"
        )
    rows = []
    rep_rows: list[dict] = []
    trajectory_rows: list[dict] = []
    for value in sweep.grid:
        config = apply_grid_value(sweep.base, sweep.variable, value)
        tasks = [
            (config, sweep.nuisance, train_config, estimators, test_n, rep)
            for rep in range(sweep.replications)
        ]
        results = _map_ordered(_opl_replication, tasks, jobs)
        if detail is not None:
            for rep, res in enumerate(results):
                for name in estimators:
                    (ni, osi, regret), norms = res[name]
                    rep_rows.append(
                        {
                            "sweep_var": sweep.variable,
                            "value": value,
                            "replication": rep,
                            "estimator": name,
                            "ni": ni,
                            "osi": osi,
                            "regret": regret,
                        }
                    )
                    trajectory_rows.extend(
                        {
                            "sweep_var": sweep.variable,
                            "value": value,
                            "replication": rep,
                            "estimator": name,
                            "step": step,
                            "grad_norm": norm,
                        }
                        for step, norm in enumerate(norms)
                    )
        for name in estimators:
            metrics = np.array([res[name][0] for res in results])
            row = {
                "sweep_var": sweep.variable,
                "value": value,
                "estimator": name,
                "replications": sweep.replications,
            }
            for i, metric in enumerate(("ni", "osi", "regret")):
                col = metrics[:, i]
                row[f"mean_{metric}"] = float(np.nanmean(col))
                row[f"se_{metric}"] = (
                    float(np.nanstd(col, ddof=1) / np.sqrt(len(col)))
                    if len(col) > 1
                    else 0.0
                )
            rows.append(row)
    if detail is not None:
        detail["replications"] = rep_rows
        detail["trajectories"] = trajectory_rows
    return rows


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------


def _format_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_rows_csv(
    rows: list[dict], path: str | Path, provenance: dict | None = None
) -> None:
    """Write result rows with a fixed column order; floats use shortest
    round-trip formatting so identical results yield identical bytes."""
    if not rows:
        raise InvalidInputError("no rows to write")
    columns = list(rows[0].keys())
    prov_cols = sorted(provenance.keys()) if provenance else []
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns + prov_cols)
        for row in rows:
            cells = [_format_cell(row[c]) for c in columns]
            cells.extend(_format_cell(provenance[c]) for c in prov_cols)
            writer.writerow(cells)
