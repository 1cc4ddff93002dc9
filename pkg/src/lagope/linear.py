"""Closed-form ridge regression and Newton-fit multinomial logit.

Both models follow the sklearn estimator API (``fit``/``predict``,
``get_params``) so they compose with the wider ecosystem, but the numerics are
self-contained: ridge solves the normal equations in closed form with an
unpenalized intercept, and the logit runs damped Newton iterations on the
regularized multinomial likelihood.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .errors import ConvergenceError, InvalidConfigError, NumericError
from .policies import softmax
from .validation import check_matrix, floor_simplex


class RidgeRegressor(BaseEstimator):
    """Least squares with an L2 penalty on the weights (intercept unpenalized).

    Minimizes ``||y - X w - b||^2 + reg * ||w||^2``. Supports multi-target
    ``y`` of shape (n, t); the solve is shared across targets.

    Parameters
    ----------
    reg : float
        L2 penalty strength, must be positive.
    """

    def __init__(self, reg: float = 1e-2):
        self.reg = reg

    def fit(self, X: np.ndarray, y: np.ndarray) -> "RidgeRegressor":
        if self.reg <= 0:
            raise InvalidConfigError(f"reg must be > 0, got {self.reg}")
        X = check_matrix(X, "X")
        y = np.asarray(y, dtype=float)
        single = y.ndim == 1
        Y = y.reshape(-1, 1) if single else y
        x_mean = X.mean(axis=0)
        y_mean = Y.mean(axis=0)
        Xc = X - x_mean
        Yc = Y - y_mean
        gram = Xc.T @ Xc + self.reg * np.eye(X.shape[1])
        try:
            W = np.linalg.solve(gram, Xc.T @ Yc)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"ridge system is singular: {exc}") from None
        if not np.all(np.isfinite(W)):
            raise NumericError("ridge solution is not finite")
        self.weights_ = W[:, 0] if single else W
        self.intercept_ = (
            float(y_mean[0] - x_mean @ W[:, 0]) if single else y_mean - x_mean @ W
        )
        self._single = single
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = check_matrix(X, "X")
        return X @ self.weights_ + self.intercept_


class RidgeSolver:
    """Precomputed ridge solve for repeated fits on a fixed design matrix.

    Caches ``(Xc^T Xc + reg I)^{-1} Xc^T`` so new (multi-)targets cost one
    matrix product. Used by per-step refits during policy training.
    """

    def __init__(self, X: np.ndarray, reg: float):
        X = check_matrix(X, "X")
        self.x_mean = X.mean(axis=0)
        Xc = X - self.x_mean
        gram = Xc.T @ Xc + reg * np.eye(X.shape[1])
        try:
            self.projector = np.linalg.solve(gram, Xc.T)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"ridge system is singular: {exc}") from None

    def solve(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (weights, intercept) for targets ``y`` of shape (n,) or (n, t)."""
        Y = y.reshape(-1, 1) if y.ndim == 1 else y
        y_mean = Y.mean(axis=0)
        W = self.projector @ (Y - y_mean)
        b = y_mean - self.x_mean @ W
        return W, b


class MultinomialLogit(BaseEstimator):
    """Multinomial logistic regression fit by damped Newton iterations.

    Minimizes the negative multinomial log-likelihood plus
    ``reg/2 * ||theta_noint||^2`` (intercept column unpenalized). Predicted
    probability rows are floored at ``p_min`` and renormalized so every entry
    stays at or above the floor.

    Parameters
    ----------
    reg : float
        L2 penalty strength, must be positive.
    p_min : float
        Probability floor applied at prediction time.
    max_iter : int
        Newton iteration budget; exceeding it raises a convergence error
        carrying the final gradient norm.
    tol : float
        Per-sample gradient-norm convergence threshold (the stopping rule is
        ``||grad|| < tol * max(1, n)`` so the criterion does not tighten with
        the sample count).
    """

    def __init__(
        self,
        reg: float = 1e-2,
        p_min: float = 1e-3,
        max_iter: int = 100,
        tol: float = 1e-8,
    ):
        self.reg = reg
        self.p_min = p_min
        self.max_iter = max_iter
        self.tol = tol

    def fit(
        self, X: np.ndarray, y: np.ndarray, n_classes: int | None = None
    ) -> "MultinomialLogit":
        if self.reg <= 0:
            raise InvalidConfigError(f"reg must be > 0, got {self.reg}")
        X = check_matrix(X, "X")
        y = np.asarray(y, dtype=np.int64)
        n, d = X.shape
        if n_classes is None:
            n_classes = int(y.max()) + 1
        Xt = np.hstack([X, np.ones((n, 1))])
        p = d + 1
        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), y] = 1.0
        penalty_diag = np.tile(np.r_[np.ones(d), 0.0], n_classes)
        theta = np.zeros((n_classes, p))

        def objective(t):
            logits = Xt @ t.T
            log_norm = np.log(np.exp(logits - logits.max(axis=1, keepdims=True)).sum(axis=1))
            log_norm += logits.max(axis=1)
            nll = float(log_norm.sum() - (logits[np.arange(n), y]).sum())
            return nll + 0.5 * self.reg * float((t[:, :d] ** 2).sum())

        obj = objective(theta)
        grad_norm = np.inf
        tol_abs = self.tol * max(1.0, float(n))
        for _ in range(self.max_iter):
            probs = softmax(Xt @ theta.T)
            grad = (probs - onehot).T @ Xt + self.reg * theta * np.r_[
                np.ones(d), 0.0
            ]
            grad_flat = grad.ravel()
            grad_norm = float(np.linalg.norm(grad_flat))
            if grad_norm < tol_abs:
                break
            # Hessian of the multinomial NLL: sum_i (diag(p_i) - p_i p_i^T) (x)
            # x_i x_i^T, assembled blockwise over class pairs.
            H = np.zeros((n_classes * p, n_classes * p))
            for c in range(n_classes):
                for c2 in range(c, n_classes):
                    w = probs[:, c] * ((c == c2) - probs[:, c2])
                    block = (Xt * w[:, None]).T @ Xt
                    H[c * p : (c + 1) * p, c2 * p : (c2 + 1) * p] = block
                    if c2 != c:
                        H[c2 * p : (c2 + 1) * p, c * p : (c + 1) * p] = block
            H[np.diag_indices_from(H)] += self.reg * penalty_diag + 1e-10
            try:
                step = np.linalg.solve(H, grad_flat).reshape(n_classes, p)
            except np.linalg.LinAlgError as exc:
                raise NumericError(f"logit Hessian is singular: {exc}") from None
            # Halve the step until the objective decreases (NLL is convex, so
            # full Newton almost always succeeds on the first try).
            scale = 1.0
            stalled = False
            for _ in range(30):
                candidate = theta - scale * step
                cand_obj = objective(candidate)
                if cand_obj <= obj:
                    theta, obj = candidate, cand_obj
                    break
                scale *= 0.5
            else:
                stalled = True
            if stalled:
                # Rounding can swallow the last Newton improvements; a stall
                # with a tiny gradient is convergence, anything else is not.
                if grad_norm < 1e3 * tol_abs:
                    break
                raise ConvergenceError("logit line search stalled", grad_norm)
        else:
            raise ConvergenceError(
                f"logit did not converge in {self.max_iter} iterations", grad_norm
            )
        self.theta_ = theta
        self.n_classes_ = n_classes
        return self

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = check_matrix(X, "X")
        Xt = np.hstack([X, np.ones((X.shape[0], 1))])
        probs = softmax(Xt @ self.theta_.T)
        return floor_simplex(probs, self.p_min)
