"""Closed-form L2-regularized linear probe on pooled (E, C) features."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .checkpoint import load_tensors, save_tensors
from .errors import ValidationError

LAMBDA_EXPONENTS = tuple(range(-20, 11))


@dataclass
class RidgeSolution:
    weight: np.ndarray  # (C, S)
    bias: np.ndarray  # (S,), zeros when no intercept was fitted
    lam: float
    fit_intercept: bool = True
    val_top1: float | None = None
    history: list = field(default_factory=list)

    def scores(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.weight + self.bias


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def fit_ridge(X, Y, lam: float, fit_intercept: bool = True) -> RidgeSolution:
    """Solve ``(X^T X + lam I) W = X^T Y`` by Cholesky; the intercept column is
    appended and left unpenalized."""
    if lam < 0:
        raise ValidationError("lambda must be non-negative")
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or len(X) != len(Y):
        raise ValidationError(f"expected X (E, C) and Y (E, S), got {X.shape} and {Y.shape}")
    C = X.shape[1]
    A = np.column_stack([X, np.ones(len(X))]) if fit_intercept else X
    penalty = np.full(A.shape[1], float(lam))
    if fit_intercept:
        penalty[-1] = 0.0
    gram = A.T @ A + np.diag(penalty)
    rhs = A.T @ Y
    if lam == 0 and np.linalg.matrix_rank(gram) < gram.shape[0]:
        raise ValidationError("singular system: X^T X is not invertible at lambda = 0")
    try:
        W = linalg.cho_solve(linalg.cho_factor(gram, lower=True), rhs)
    except linalg.LinAlgError as exc:
        raise ValidationError(f"singular system at lambda = {lam}") from exc
    if fit_intercept:
        return RidgeSolution(W[:C], W[C], float(lam), True)
    return RidgeSolution(W, np.zeros(Y.shape[1]), float(lam), False)


def predict(solution: RidgeSolution, X) -> np.ndarray:
    """Argmax class; ties go to the smallest index."""
    X = np.asarray(X)
    if X.shape[-1] != solution.weight.shape[0]:
        raise ValidationError(
            f"channel mismatch: X has C={X.shape[-1]}, probe expects {solution.weight.shape[0]}"
        )
    return np.argmax(solution.scores(X), axis=-1)


def top1(solution: RidgeSolution, X, labels) -> float:
    return float(np.mean(predict(solution, X) == np.asarray(labels)))


def sweep_lambda(X_train, Y_train, X_val, labels_val, exponents=LAMBDA_EXPONENTS, fit_intercept=True):
    """Fit every ``lam = 2**e`` and keep the best validation top-1 (ties -> larger lam)."""
    if len(X_val) == 0:
        raise ValidationError("validation set is empty")
    best, history = None, []
    for e in sorted(exponents):
        sol = fit_ridge(X_train, Y_train, 2.0**e, fit_intercept)
        acc = top1(sol, X_val, labels_val)
        history.append((sol.lam, acc))
        if best is None or acc >= best.val_top1:
            sol.val_top1 = acc
            best = sol
    best.history = history
    return best


def save_solution(solution: RidgeSolution, path) -> None:
    save_tensors(
        path,
        {"weight": solution.weight, "bias": solution.bias},
        {"kind": "ridge", "lambda": solution.lam, "fit_intercept": solution.fit_intercept},
    )


def load_solution(path) -> RidgeSolution:
    tensors, meta = load_tensors(path)
    if meta.get("kind") != "ridge":
        raise ValidationError(f"{path} is not a ridge checkpoint")
    return RidgeSolution(
        tensors["weight"].astype(np.float64),
        tensors["bias"].astype(np.float64),
        float(meta["lambda"]),
        bool(meta["fit_intercept"]),
    )
