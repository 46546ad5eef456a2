"""Smooth loss testbeds with known smoothness constant and optimum."""

from __future__ import annotations

import math
from functools import cached_property
from pathlib import Path
from typing import Callable, Union

import numpy as np

from .linalg import as_vector


class Problem:
    """A smooth loss with exact gradient, smoothness constant and lower bound.

    ``optimum`` may be a number or a zero-argument callable; callables are
    evaluated on first access of :attr:`optimum_L_star` and cached.
    """

    def __init__(
        self,
        dim: int,
        loss: Callable[[np.ndarray], float],
        grad: Callable[[np.ndarray], np.ndarray],
        smoothness_L: float,
        optimum: Union[float, Callable[[], float]],
        description: str = "",
    ):
        if dim < 1:
            raise ValueError("dim must be positive")
        if not smoothness_L > 0:
            raise ValueError("smoothness constant must be positive")
        self.dim = int(dim)
        self.loss = loss
        self.grad = grad
        self.smoothness_L = float(smoothness_L)
        self._optimum = optimum
        self.description = description

    @cached_property
    def optimum_L_star(self) -> float:
        if callable(self._optimum):
            return float(self._optimum())
        return float(self._optimum)

    def __repr__(self) -> str:
        return f"Problem({self.description!r}, dim={self.dim}, L={self.smoothness_L:g})"


def quadratic_problem(eigenvalues) -> Problem:
    """Diagonal quadratic ``0.5 * sum_i lam_i w_i^2``."""
    lam = as_vector(eigenvalues, "eigenvalues")
    if np.any(lam <= 0):
        raise ValueError("quadratic eigenvalues must be positive")
    lam = lam.copy()
    lam.setflags(write=False)

    def loss(w):
        w = np.asarray(w, dtype=np.float64)
        return 0.5 * float(np.dot(lam * w, w))

    def grad(w):
        return lam * np.asarray(w, dtype=np.float64)

    return Problem(
        dim=lam.size,
        loss=loss,
        grad=grad,
        smoothness_L=float(lam.max()),
        optimum=0.0,
        description=f"quadratic d={lam.size} spectrum [{lam.min():g}, {lam.max():g}]",
    )


def linear_spectrum(dim: int, low: float, high: float) -> np.ndarray:
    if dim == 1:
        return np.array([high])
    return np.linspace(low, high, dim)


def _log1pexp(z: np.ndarray) -> np.ndarray:
    # log(1 + e^z) without overflow
    return np.logaddexp(0.0, z)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logistic_problem(
    features,
    labels,
    l2_reg: float = 0.0,
    solver_tol: float = 1e-10,
    solver_max_iter: int = 1_000_000,
) -> Problem:
    """L2-regularised mean logistic loss with labels in {-1, +1}.

    The optimum is found by plain gradient descent with step ``1/L`` from
    the origin, run until the gradient norm is at most ``solver_tol``.
    Without regularisation on separable data the infimum is not attained
    and asking for the optimum raises.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError(
            f"shape mismatch: features {X.shape} vs labels {y.shape}"
        )
    if X.shape[0] == 0:
        raise ValueError("need at least one example")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be -1 or +1")
    if np.any(~np.isfinite(X)) or np.any(np.all(X == 0.0, axis=1)):
        raise ValueError("feature rows must be finite and nonzero")
    if l2_reg < 0:
        raise ValueError("l2_reg must be non-negative")
    n, d = X.shape
    yX = y[:, None] * X
    yX.setflags(write=False)

    def loss(w):
        w = np.asarray(w, dtype=np.float64)
        return float(_log1pexp(-(yX @ w)).mean() + 0.5 * l2_reg * np.dot(w, w))

    def grad(w):
        w = np.asarray(w, dtype=np.float64)
        s = _sigmoid(-(yX @ w))
        return -(yX.T @ s) / n + l2_reg * w

    gram_top = float(np.linalg.eigvalsh(X.T @ X / n).max())
    L = 0.25 * gram_top + l2_reg

    def solve() -> float:
        w = np.zeros(d)
        step = 1.0 / L
        for _ in range(solver_max_iter):
            gw = grad(w)
            if math.sqrt(float(np.dot(gw, gw))) <= solver_tol:
                return loss(w)
            w = w - step * gw
        raise RuntimeError(
            "logistic optimum solver did not converge; the minimum may not be "
            "attained (use l2_reg > 0 on separable data)"
        )

    return Problem(
        dim=d,
        loss=loss,
        grad=grad,
        smoothness_L=L,
        optimum=solve,
        description=f"logistic n={n} d={d} l2_reg={l2_reg:g}",
    )


def make_logistic_data(n: int, dim: int, seed: int, label_noise: float = 0.1):
    """Gaussian features labelled by a random linear teacher with flips."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, dim))
    teacher = rng.standard_normal(dim)
    y = np.where(X @ teacher >= 0, 1.0, -1.0)
    flip = rng.random(n) < label_noise
    y[flip] = -y[flip]
    return X, y


def load_delimited(path: Union[str, Path], delimiter: str | None = None):
    """Read ``label, x1, x2, ...`` rows; blank lines and ``#`` comments skipped."""
    data = np.loadtxt(path, delimiter=delimiter, ndmin=2, comments="#")
    if data.shape[1] < 2:
        raise ValueError(f"{path}: need a label column and at least one feature")
    return data[:, 1:], data[:, 0]


def finite_diff_grad(p: Problem, w, h: float = 1e-6) -> np.ndarray:
    """Central differences, one coordinate at a time."""
    if not h > 0:
        raise ValueError("step h must be positive")
    w = as_vector(w, "w")
    out = np.empty_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = h
        out[i] = (p.loss(w + e) - p.loss(w - e)) / (2 * h)
    return out
