"""Command-line interface: synthetic sweeps, external-data estimation, identity checks.

Configuration is a flat INI file with one section per concern (``[synth]``,
``[nuisance]``, ``[sweep]``, ``[train]``), overridable per key via
``--set section.key=value``. Every results file carries the resolved config
hash and seeds so any row can be regenerated.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InvalidConfigError
from .io import load_csv, load_policy_spec
from .nuisance import NuisanceConfig
from .opl import TrainConfig
from .oracle import from_json, identity_suite
from .sweep import (
    OPE_ESTIMATORS,
    SweepConfig,
    run_estimators,
    run_ope_sweep,
    run_opl_sweep,
    write_rows_csv,
)
from .synthgen import SynthConfig
from .types import EstimateReport

DEFAULT_CONFIG: dict[str, dict[str, str]] = {
    "synth": {
        "n": "1000",
        "d": "10",
        "num_actions": "5",
        "violation_ratio": "0.5",
        "mix_lambda": "0.5",
        "interaction_eta": "0.0",
        "logging_beta": "0.3",
        "lag_rho": "1.0",
        "target_epsilon": "0.1",
        "env_seed": "0",
        "data_seed": "1",
    },
    "nuisance": {
        "k_cf": "5",
        "reg": "0.1",
        "p_min": "0.001",
        "clip": "20.0",
        "tau": "0.05",
        "mtri_penalty": "0.1",
        "gram_ridge": "1e-06",
        "reward_variant": "mtri",
        "reward_features": "indicator",
        "marginal_features": "threshold",
        "seed": "0",
    },
    "sweep": {
        "variable": "r",
        "grid": "0.0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9",
        "replications": "100",
        "estimators": "dm,ips,dr,dolce",
        "truth_samples": "200000",
        "level": "0.95",
    },
    "train": {
        "steps": "200",
        "step_size": "0.05",
        "exploration_floor": "0.05",
        "refit_every": "1",
        "test_n": "10000",
        "reward_variant": "plain",
    },
}


def load_config(path: str | None, overrides: list[str], seed: int | None) -> dict:
    """Resolve defaults, optional config file, --set overrides, and --seed."""
    config = {section: dict(values) for section, values in DEFAULT_CONFIG.items()}
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise InvalidConfigError(f"config file {path!r} not found")
        for section in parser.sections():
            if section not in config:
                raise InvalidConfigError(f"unknown config section [{section}]")
            for key, value in parser.items(section):
                if key not in config[section]:
                    raise InvalidConfigError(f"unknown config key {section}.{key}")
                config[section][key] = value
    bad = []
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            bad.append(item)
            continue
        dotted, value = item.split("=", 1)
        section, key = dotted.split(".", 1)
        if section not in config or key not in config[section]:
            bad.append(item)
            continue
        config[section][key] = value
    if bad:
        raise InvalidConfigError(f"invalid --set overrides: {bad}")
    if seed is not None:
        config["synth"]["data_seed"] = str(seed)
    return config


def config_hash(config: dict) -> str:
    lines = sorted(
        f"{section}.{key}={value}"
        for section, values in config.items()
        for key, value in values.items()
    )
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:16]


def build_synth_config(config: dict) -> SynthConfig:
    s = config["synth"]
    return SynthConfig(
        n=int(s["n"]),
        d=int(s["d"]),
        num_actions=int(s["num_actions"]),
        violation_ratio=float(s["violation_ratio"]),
        mix_lambda=float(s["mix_lambda"]),
        interaction_eta=float(s["interaction_eta"]),
        logging_beta=float(s["logging_beta"]),
        lag_rho=float(s["lag_rho"]),
        target_epsilon=float(s["target_epsilon"]),
        env_seed=int(s["env_seed"]),
        data_seed=int(s["data_seed"]),
    )


def build_nuisance_config(config: dict, reward_variant: str | None = None) -> NuisanceConfig:
    n = config["nuisance"]
    return NuisanceConfig(
        k_cf=int(n["k_cf"]),
        reg=float(n["reg"]),
        p_min=float(n["p_min"]),
        clip=float(n["clip"]),
        tau=float(n["tau"]),
        mtri_penalty=float(n["mtri_penalty"]),
        gram_ridge=float(n["gram_ridge"]),
        reward_variant=reward_variant or n["reward_variant"],
        reward_features=n["reward_features"],
        marginal_features=n["marginal_features"],
        seed=int(n["seed"]),
    )


def build_sweep_config(config: dict, nuisance: NuisanceConfig) -> SweepConfig:
    s = config["sweep"]
    return SweepConfig(
        base=build_synth_config(config),
        nuisance=nuisance,
        variable=s["variable"],
        grid=tuple(float(v) for v in s["grid"].split(",") if v.strip()),
        replications=int(s["replications"]),
        estimators=tuple(e.strip() for e in s["estimators"].split(",") if e.strip()),
        truth_samples=int(s["truth_samples"]),
        level=float(s["level"]),
    )


def build_train_config(config: dict) -> TrainConfig:
    t = config["train"]
    return TrainConfig(
        steps=int(t["steps"]),
        step_size=float(t["step_size"]),
        exploration_floor=float(t["exploration_floor"]),
        refit_every=int(t["refit_every"]),
    )


def write_manifest(out_dir: Path, command: str, config: dict, outputs: list[str]) -> None:
    manifest = {
        "command": command,
        "package_version": __version__,
        "config": config,
        "config_hash": config_hash(config),
        "outputs": outputs,
    }
    (out_dir / "run_manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8"
    )


def _provenance(config: dict) -> dict:
    return {
        "config_hash": config_hash(config),
        "env_seed": int(config["synth"]["env_seed"]),
        "data_seed": int(config["synth"]["data_seed"]),
    }


def cmd_synth_ope(args: argparse.Namespace) -> int:
    config = load_config(args.config, args.set, args.seed)
    sweep = build_sweep_config(config, build_nuisance_config(config))
    rows = run_ope_sweep(sweep, jobs=args.jobs)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / "ope_results.csv"
    write_rows_csv(rows, out_path, provenance=_provenance(config))
    write_manifest(out_dir, "synth-ope", config, [out_path.name])
    print(f"wrote {out_path} ({len(rows)} rows)")
    return 0


def cmd_synth_opl(args: argparse.Namespace) -> int:
    config = load_config(args.config, args.set, args.seed)
    nuisance = build_nuisance_config(
        config, reward_variant=config["train"]["reward_variant"]
    )
    sweep = build_sweep_config(config, nuisance)
    train = build_train_config(config)
    detail: dict = {}
    rows = run_opl_sweep(
        sweep,
        train_config=train,
        test_n=int(config["train"]["test_n"]),
        jobs=args.jobs,
        detail=detail,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / "opl_results.csv"
    provenance = _provenance(config)
    write_rows_csv(rows, out_path, provenance=provenance)
    rep_path = out_dir / "opl_replications.csv"
    write_rows_csv(detail["replications"], rep_path, provenance=provenance)
    traj_path = out_dir / "opl_trajectories.csv"
    write_rows_csv(detail["trajectories"], traj_path, provenance=provenance)
    write_manifest(
        out_dir, "synth-opl", config, [out_path.name, rep_path.name, traj_path.name]
    )
    print(f"wrote {out_path} ({len(rows)} rows)")
    return 0


def cmd_estimate(args: argparse.Namespace) -> int:
    config = load_config(args.config, args.set, args.seed)
    data = load_csv(args.data)
    policy = load_policy_spec(args.policy, data.d, data.num_actions)
    nuisance = build_nuisance_config(config)
    estimators = tuple(
        e.strip() for e in config["sweep"]["estimators"].split(",") if e.strip()
    )
    reports, skipped, diagnostics = run_estimators(
        data, policy, nuisance, estimators, level=float(config["sweep"]["level"])
    )
    for name, reason in skipped.items():
        print(f"skipping {name}: {reason}", file=sys.stderr)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / "estimates.csv"
    header = EstimateReport.csv_header(num_lags=data.num_lags)
    with out_path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for name in estimators:
            if name not in reports:
                continue
            row = reports[name].csv_row()
            row.extend([""] * (len(header) - len(row)))
            fh.write(",".join(row) + "\n")
    diag_path = out_dir / "diagnostics.json"
    diag_path.write_text(
        json.dumps(diagnostics, indent=2, sort_keys=True), encoding="utf-8"
    )
    write_manifest(out_dir, "estimate", config, [out_path.name, diag_path.name])
    for name in estimators:
        if name in reports:
            rep = reports[name]
            print(
                f"{name}: {rep.value:.6f} (se {rep.se:.6f}, "
                f"95% CI [{rep.ci_low:.6f}, {rep.ci_high:.6f}], ess {rep.ess:.1f})"
            )
    return 0


def cmd_oracle_check(args: argparse.Namespace) -> int:
    envs = None
    if args.fixtures:
        fixture_paths = sorted(Path(args.fixtures).glob("*.json"))
        if fixture_paths:
            envs = [from_json(p) for p in fixture_paths]
            print(f"loaded {len(envs)} fixture environments from {args.fixtures}")
    results = identity_suite(
        n_envs=args.envs, seed0=args.seed if args.seed is not None else 0, envs=envs
    )
    failed = 0
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(
            f"[{status}] {res.name}: max residual {res.max_residual:.3e} "
            f"(tolerance {res.tolerance:.0e}; {res.detail})"
        )
        failed += not res.passed
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="lagope",
        description=(
            "Lag-aware doubly robust off-policy evaluation and learning for "
            "contextual bandits under support violations."
        ),
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser):
        p.add_argument("--config", help="INI config file")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="SECTION.KEY=VALUE",
            help="override a config value",
        )
        p.add_argument("--out", default="results", help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers")
        p.add_argument("--seed", type=int, default=None, help="override the data seed")

    p_ope = sub.add_parser("synth-ope", help="evaluation sweep on synthetic data")
    common(p_ope)
    p_ope.set_defaults(func=cmd_synth_ope)

    p_opl = sub.add_parser("synth-opl", help="learning sweep on synthetic data")
    common(p_opl)
    p_opl.set_defaults(func=cmd_synth_opl)

    p_est = sub.add_parser("estimate", help="estimate a policy value from a CSV log")
    common(p_est)
    p_est.add_argument("--data", required=True, help="dataset CSV path")
    p_est.add_argument("--policy", required=True, help="policy spec JSON path")
    p_est.set_defaults(func=cmd_estimate)

    p_chk = sub.add_parser("oracle-check", help="run the exact identity suite")
    p_chk.add_argument("--fixtures", help="directory of environment fixtures (JSON)")
    p_chk.add_argument("--envs", type=int, default=100, help="random environments")
    p_chk.add_argument("--seed", type=int, default=None, help="base seed")
    p_chk.add_argument("--out", default=None, help=argparse.SUPPRESS)
    p_chk.set_defaults(func=cmd_oracle_check)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
