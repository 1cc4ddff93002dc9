"""CSV serialization of lagged datasets and policy specification files.

CSV schema (header required, UTF-8, comma separated, decimal point):
``x_0,...,x_{d-1}`` followed by ``lag{L}_0,...,lag{L}_{d-1}`` for each lag
label ``L`` in order, then ``action,reward`` and an optional ``propensity``
column. Floats are written with shortest round-trip representation, so a
save/load round trip is lossless.
"""
from __future__ import annotations

import csv
import json
import re
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, ParseError
from .policies import (
    EpsGreedyScorePolicy,
    LinearSoftmaxPolicy,
    Policy,
    TabularPolicy,
    UniformPolicy,
    append_intercept,
)
from .types import LaggedDataset

_LAG_COL = re.compile(r"^lag(?P<label>.+?)_(?P<idx>\d+)$")


def _dataset_header(dataset: LaggedDataset) -> list[str]:
    cols = [f"x_{j}" for j in range(dataset.d)]
    for label in dataset.lag_labels:
        cols.extend(f"lag{label}_{j}" for j in range(dataset.d))
    cols.extend(["action", "reward"])
    if dataset.logged_propensity is not None:
        cols.append("propensity")
    return cols


def save_csv(dataset: LaggedDataset, path: str | Path) -> None:
    """Write a dataset to ``path`` in the package CSV schema."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_dataset_header(dataset))
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.x[i]]
            for k in range(dataset.num_lags):
                row.extend(repr(float(v)) for v in dataset.x_lags[i, k])
            row.append(str(int(dataset.a[i])))
            row.append(repr(float(dataset.r[i])))
            if dataset.logged_propensity is not None:
                row.append(repr(float(dataset.logged_propensity[i])))
            writer.writerow(row)


def _parse_header(header: list[str]) -> tuple[int, list[str], bool]:
    """Validate the header and return (d, lag_labels, has_propensity)."""
    x_cols = [c for c in header if re.fullmatch(r"x_\d+", c)]
    d = len(x_cols)
    if d == 0:
        raise ParseError("no context columns `x_0..x_{d-1}` found in header")
    expected_x = [f"x_{j}" for j in range(d)]
    if header[:d] != expected_x:
        raise ParseError(f"context columns must be x_0..x_{d - 1} in order")
    labels: list[str] = []
    pos = d
    while pos < len(header):
        m = _LAG_COL.match(header[pos])
        if not m:
            break
        label = m.group("label")
        expected = [f"lag{label}_{j}" for j in range(d)]
        if header[pos : pos + d] != expected:
            raise ParseError(
                f"lag `{label}` must contribute columns lag{label}_0..lag{label}_{d - 1}"
            )
        labels.append(label)
        pos += d
    for required in ("action", "reward"):
        if pos >= len(header) or header[pos] != required:
            raise ParseError(f"missing required column `{required}`")
        pos += 1
    has_prop = False
    if pos < len(header):
        if header[pos] != "propensity":
            raise ParseError(f"unexpected trailing column `{header[pos]}`")
        has_prop = True
        pos += 1
    if pos != len(header):
        raise ParseError(f"unexpected trailing columns {header[pos:]}")
    return d, labels, has_prop


def load_csv(path: str | Path, num_actions: int | None = None) -> LaggedDataset:
    """Load a dataset written by :func:`save_csv`.

    ``num_actions`` defaults to ``max(action) + 1``. Malformed rows raise a
    parse error naming the offending row and column.
    """
    path = Path(path)
    with path.open("r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file") from None
        d, labels, has_prop = _parse_header([h.strip() for h in header])
        n_cols = d * (1 + len(labels)) + 2 + int(has_prop)
        xs, lags, actions, rewards, props = [], [], [], [], []
        for row_num, row in enumerate(reader, start=2):
            if len(row) != n_cols:
                raise ParseError(
                    f"expected {n_cols} cells, got {len(row)}", row=row_num
                )
            try:
                values = [float(c) for c in row[: d * (1 + len(labels))]]
            except ValueError as exc:
                raise ParseError(f"non-numeric cell ({exc})", row=row_num) from None
            xs.append(values[:d])
            lags.append(
                [values[d * (1 + k) : d * (2 + k)] for k in range(len(labels))]
            )
            pos = d * (1 + len(labels))
            try:
                a = int(float(row[pos]))
            except ValueError:
                raise ParseError(
                    f"non-numeric `action` cell {row[pos]!r}", row=row_num
                ) from None
            actions.append(a)
            try:
                rewards.append(float(row[pos + 1]))
            except ValueError:
                raise ParseError(
                    f"non-numeric `reward` cell {row[pos + 1]!r}", row=row_num
                ) from None
            if has_prop:
                try:
                    props.append(float(row[pos + 2]))
                except ValueError:
                    raise ParseError(
                        f"non-numeric `propensity` cell {row[pos + 2]!r}", row=row_num
                    ) from None
    if not xs:
        raise ParseError("file contains a header but no data rows")
    if num_actions is None:
        num_actions = max(actions) + 1
    return LaggedDataset(
        x=np.asarray(xs, dtype=float),
        x_lags=np.asarray(lags, dtype=float).reshape(len(xs), len(labels), d),
        a=np.asarray(actions, dtype=np.int64),
        r=np.asarray(rewards, dtype=float),
        num_actions=num_actions,
        lag_labels=tuple(labels),
        logged_propensity=np.asarray(props, dtype=float) if has_prop else None,
    )


def save_policy_spec(policy: Policy, path: str | Path) -> None:
    """Serialize a policy to a JSON spec file (linear score policies only)."""
    if isinstance(policy, UniformPolicy):
        spec = {"variant": "uniform", "num_actions": policy.num_actions}
    elif isinstance(policy, LinearSoftmaxPolicy):
        spec = {"variant": "linear_softmax", "theta": policy.theta.tolist()}
    elif isinstance(policy, TabularPolicy):
        spec = {"variant": "tabular", "table": policy.table.tolist()}
    elif isinstance(policy, EpsGreedyScorePolicy) and hasattr(policy, "_weights"):
        spec = {
            "variant": "eps_greedy_linear",
            "weights": policy._weights.tolist(),
            "epsilon": policy.epsilon,
        }
    else:
        raise InvalidInputError(f"cannot serialize policy {type(policy).__name__}")
    Path(path).write_text(json.dumps(spec, indent=2), encoding="utf-8")


def linear_eps_greedy_policy(
    weights: np.ndarray, epsilon: float
) -> EpsGreedyScorePolicy:
    """Epsilon-greedy policy over affine scores ``weights @ [x, 1]``."""
    weights = np.asarray(weights, dtype=float)
    policy = EpsGreedyScorePolicy(
        score_fn=lambda x: append_intercept(x) @ weights.T,
        num_actions=weights.shape[0],
        epsilon=epsilon,
    )
    policy._weights = weights
    return policy


def load_policy_spec(path: str | Path, d: int, num_actions: int) -> Policy:
    """Load a policy spec and validate it against the dataset dimensions."""
    try:
        spec = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid policy spec JSON: {exc}") from None
    variant = spec.get("variant")
    if variant == "uniform":
        n_act = int(spec.get("num_actions", num_actions))
        if n_act != num_actions:
            raise InvalidInputError(
                f"policy has {n_act} actions but data has {num_actions}"
            )
        return UniformPolicy(num_actions)
    if variant == "linear_softmax":
        theta = np.asarray(spec["theta"], dtype=float)
        if theta.shape != (num_actions, d + 1):
            raise InvalidInputError(
                f"theta shape {theta.shape} incompatible with data "
                f"(expected {(num_actions, d + 1)})"
            )
        return LinearSoftmaxPolicy(theta)
    if variant == "eps_greedy_linear":
        weights = np.asarray(spec["weights"], dtype=float)
        if weights.shape != (num_actions, d + 1):
            raise InvalidInputError(
                f"weights shape {weights.shape} incompatible with data "
                f"(expected {(num_actions, d + 1)})"
            )
        return linear_eps_greedy_policy(weights, float(spec.get("epsilon", 0.1)))
    if variant == "tabular":
        table = np.asarray(spec["table"], dtype=float)
        if table.shape[1] != num_actions:
            raise InvalidInputError(
                f"table has {table.shape[1]} actions but data has {num_actions}"
            )
        return TabularPolicy(table)
    raise ParseError(f"unknown policy variant {variant!r}")
