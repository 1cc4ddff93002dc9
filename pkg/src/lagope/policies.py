"""Target/logging policy classes over a finite action space.

Every policy maps a context vector to a probability vector over dense action
indices ``0..num_actions-1``. Probabilities always form a simplex (sum one
within 1e-12, nonnegative) and evaluation is deterministic: identical inputs
produce bitwise-identical outputs.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import InvalidInputError, UnsupportedPolicyError
from .validation import check_matrix, check_simplex, check_vector


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-shift for numerical stability."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def append_intercept(x: np.ndarray) -> np.ndarray:
    """Append a constant-1 feature as the last column."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return np.concatenate([x, [1.0]])
    return np.hstack([x, np.ones((x.shape[0], 1))])


class Policy:
    """Base class: a conditional action distribution over a finite action set."""

    num_actions: int

    def prob_matrix(self, x: np.ndarray) -> np.ndarray:
        """Action probabilities for a batch of contexts, shape (n, num_actions)."""
        raise NotImplementedError

    def action_dist(self, x: np.ndarray) -> np.ndarray:
        """Action probabilities for one context, shape (num_actions,)."""
        x = np.asarray(x, dtype=float)
        return self.prob_matrix(x.reshape(1, -1))[0]

    def sample_actions(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Draw one action per context row using inverse-CDF sampling."""
        probs = self.prob_matrix(x)
        u = rng.random(probs.shape[0])
        cdf = np.cumsum(probs, axis=1)
        return (u[:, None] > cdf).sum(axis=1).astype(np.int64)


class UniformPolicy(Policy):
    """Uniform distribution over the action set."""

    def __init__(self, num_actions: int):
        if num_actions < 1:
            raise InvalidInputError("num_actions must be >= 1")
        self.num_actions = num_actions

    def prob_matrix(self, x: np.ndarray) -> np.ndarray:
        x = check_matrix(x, "x")
        return np.full((x.shape[0], self.num_actions), 1.0 / self.num_actions)


class EpsGreedyScorePolicy(Policy):
    """Epsilon-greedy over an external score function.

    With probability ``1 - epsilon`` plays the highest-scoring action (ties
    broken toward the lowest action index), otherwise explores uniformly, so
    the greedy action receives ``1 - epsilon + epsilon/num_actions``.

    Parameters
    ----------
    score_fn : callable
        Maps an (n, d) context matrix to an (n, num_actions) score matrix.
    num_actions : int
        Size of the action space.
    epsilon : float
        Exploration probability in [0, 1].
    """

    def __init__(self, score_fn: Callable[[np.ndarray], np.ndarray], num_actions: int, epsilon: float = 0.1):
        if not 0.0 <= epsilon <= 1.0:
            raise InvalidInputError(f"epsilon must be in [0, 1], got {epsilon}")
        self.score_fn = score_fn
        self.num_actions = num_actions
        self.epsilon = float(epsilon)

    def prob_matrix(self, x: np.ndarray) -> np.ndarray:
        x = check_matrix(x, "x")
        scores = np.asarray(self.score_fn(x), dtype=float)
        if scores.shape != (x.shape[0], self.num_actions):
            raise InvalidInputError(
                f"score_fn returned shape {scores.shape}, expected "
                f"{(x.shape[0], self.num_actions)}"
            )
        best = scores.argmax(axis=1)  # argmax returns the lowest maximal index
        probs = np.full(scores.shape, self.epsilon / self.num_actions)
        probs[np.arange(x.shape[0]), best] += 1.0 - self.epsilon
        return probs


class LinearSoftmaxPolicy(Policy):
    """Softmax over affine logits ``theta @ [x, 1]``.

    ``theta`` has shape (num_actions, d + 1); the intercept feature is appended
    internally as the last column. This is the differentiable policy class used
    for gradient-based learning.
    """

    def __init__(self, theta: np.ndarray):
        theta = check_matrix(theta, "theta")
        if theta.shape[1] < 1:
            raise InvalidInputError("theta must have at least the intercept column")
        self.theta = np.ascontiguousarray(theta)
        self.num_actions = theta.shape[0]
        self.d = theta.shape[1] - 1

    @property
    def n_params(self) -> int:
        return self.theta.size

    def _features(self, x: np.ndarray) -> np.ndarray:
        x = check_matrix(x, "x", n_cols=self.d)
        return append_intercept(x)

    def prob_matrix(self, x: np.ndarray) -> np.ndarray:
        return softmax(self._features(x) @ self.theta.T)

    def score(self, x: np.ndarray, a: int) -> np.ndarray:
        """Gradient of ``log pi(a | x)`` in theta, flattened row-major.

        The block for action row ``a'`` and feature ``j`` equals
        ``(1{a == a'} - pi(a' | x)) * [x, 1]_j``.
        """
        x = check_vector(x, "x", length=self.d)
        probs = self.action_dist(x)
        if not 0 <= a < self.num_actions:
            raise InvalidInputError(f"action {a} out of range")
        indicator = np.zeros(self.num_actions)
        indicator[a] = 1.0
        xt = append_intercept(x)
        return np.outer(indicator - probs, xt).ravel()

    def score_logged(self, x: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Scores of the logged actions for a batch, shape (n, n_params)."""
        xt = self._features(x)
        probs = softmax(xt @ self.theta.T)
        coeff = -probs
        coeff[np.arange(x.shape[0]), actions] += 1.0
        return np.einsum("na,nj->naj", coeff, xt).reshape(x.shape[0], -1)

    def weighted_score_sum(self, x: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """Per-sample ``sum_a weights[i, a] * score(a | x_i)``, shape (n, n_params).

        Uses the identity ``sum_a w_a (e_a - pi) (x,1)^T =
        (w - (sum_a w_a) pi) (x,1)^T`` to avoid materializing all-action scores.
        """
        xt = self._features(x)
        probs = softmax(xt @ self.theta.T)
        coeff = weights - weights.sum(axis=1, keepdims=True) * probs
        return np.einsum("na,nj->naj", coeff, xt).reshape(x.shape[0], -1)


class TabularPolicy(Policy):
    """Explicit probability table over a finite context set.

    Contexts are addressed by integer index: ``x`` is a length-1 vector whose
    single entry is the context index. Used by the exact-enumeration
    environments.
    """

    def __init__(self, table: np.ndarray):
        table = check_matrix(table, "table")
        check_simplex(table, "table")
        self.table = np.ascontiguousarray(table)
        self.num_actions = table.shape[1]
        self.n_contexts = table.shape[0]

    def prob_matrix(self, x: np.ndarray) -> np.ndarray:
        x = check_matrix(x, "x")
        if x.shape[1] == 1:
            idx = x[:, 0].astype(np.int64)
        elif x.shape[1] >= self.n_contexts:
            # One-hot (possibly zero-padded) encodings from discrete environments.
            idx = x[:, : self.n_contexts].argmax(axis=1)
        else:
            raise InvalidInputError(
                f"tabular policy expects index or one-hot contexts, got width {x.shape[1]}"
            )
        if (idx < 0).any() or (idx >= self.n_contexts).any():
            raise InvalidInputError("context index out of range for tabular policy")
        return self.table[idx]


def policy_prob(policy: Policy, x: np.ndarray) -> np.ndarray:
    """Action distribution ``pi(. | x)`` for a single context.

    Raises an invalid-input error on dimension mismatch; the result is a
    simplex vector (entries >= 0, sum one within 1e-12).
    """
    probs = policy.action_dist(np.asarray(x, dtype=float))
    return check_simplex(probs, "policy probabilities")


def policy_score(policy: Policy, x: np.ndarray, a: int) -> np.ndarray:
    """Score ``grad_theta log pi_theta(a | x)`` for differentiable policies."""
    if not isinstance(policy, LinearSoftmaxPolicy):
        raise UnsupportedPolicyError(
            f"{type(policy).__name__} has no parameter gradient; "
            "only LinearSoftmaxPolicy supports scores"
        )
    return policy.score(x, a)
