"""Lag-aware doubly robust off-policy evaluation and learning for contextual bandits."""

from .errors import (
    ConvergenceError,
    InvalidConfigError,
    InvalidInputError,
    InvalidPropensityError,
    NumericError,
    ParseError,
    UnsupportedPolicyError,
)
from .io import load_csv, load_policy_spec, save_csv, save_policy_spec
from .policies import (
    EpsGreedyScorePolicy,
    LinearSoftmaxPolicy,
    Policy,
    TabularPolicy,
    UniformPolicy,
    policy_prob,
    policy_score,
)
from .types import EstimateReport, FoldAssignment, LaggedDataset, LaggedSample

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError",
    "EpsGreedyScorePolicy",
    "EstimateReport",
    "FoldAssignment",
    "InvalidConfigError",
    "InvalidInputError",
    "InvalidPropensityError",
    "LaggedDataset",
    "LaggedSample",
    "LinearSoftmaxPolicy",
    "NumericError",
    "ParseError",
    "Policy",
    "TabularPolicy",
    "UniformPolicy",
    "UnsupportedPolicyError",
    "load_csv",
    "load_policy_spec",
    "policy_prob",
    "policy_score",
    "save_csv",
    "save_policy_spec",
    "__version__",
]
