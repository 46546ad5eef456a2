"""Micro-batch sharding, clipping and aggregation.

Micro-batch gradients are passed around as a 2-d array with one row per
micro-batch.  All reductions over rows run in row order so results do not
depend on how the rows were produced.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np


class ClipMode(enum.Enum):
    ADAPTIVE = "adaptive"
    FIXED = "fixed"
    NORMALIZED = "normalized"


@dataclass(frozen=True)
class ClipSpec:
    mini_batch_B: int
    micro_batch_b: int
    mode: ClipMode = ClipMode.ADAPTIVE
    rho: Optional[float] = None

    def __post_init__(self):
        mode = ClipMode(self.mode)
        object.__setattr__(self, "mode", mode)
        if self.mini_batch_B < 1 or self.micro_batch_b < 1:
            raise ValueError("batch sizes must be positive")
        if self.mini_batch_B % self.micro_batch_b:
            raise ValueError(
                f"mini-batch not divisible by micro-batch: B={self.mini_batch_B}, "
                f"b={self.micro_batch_b}"
            )
        if mode is ClipMode.FIXED and not (self.rho is not None and self.rho > 0):
            raise ValueError("fixed clipping mode needs rho > 0")

    @property
    def n_micro(self) -> int:
        return self.mini_batch_B // self.micro_batch_b


def _rows(vectors) -> np.ndarray:
    m = np.asarray(vectors, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] == 0:
        raise ValueError("expected a non-empty sequence of equal-length vectors")
    return m


def shard(per_example_grads, b: int) -> list[np.ndarray]:
    """Split into contiguous micro-batches of ``b`` rows, order preserved."""
    m = _rows(per_example_grads)
    if b < 1 or m.shape[0] % b:
        raise ValueError(
            f"mini-batch not divisible by micro-batch: B={m.shape[0]}, b={b}"
        )
    return [m[j : j + b] for j in range(0, m.shape[0], b)]


def microbatch_mean(micro_batch) -> np.ndarray:
    m = _rows(micro_batch)
    return m.sum(axis=0) / m.shape[0]


def microbatch_means(per_example_grads: np.ndarray, b: int) -> np.ndarray:
    """Row ``j`` is the mean of examples ``j*b .. (j+1)*b - 1``.

    Same arithmetic as :func:`microbatch_mean` applied to each shard.
    """
    m = _rows(per_example_grads)
    n, d = m.shape
    if b < 1 or n % b:
        raise ValueError(f"mini-batch not divisible by micro-batch: B={n}, b={b}")
    return m.reshape(n // b, b, d).sum(axis=1) / b


def row_norms(micro_grads: np.ndarray) -> np.ndarray:
    m = _rows(micro_grads)
    return np.sqrt(np.einsum("ij,ij->i", m, m))


def adaptive_bound(micro_grads) -> float:
    """Smallest L2 norm among the micro-batch gradients."""
    return float(row_norms(micro_grads).min())


def clip(g_hat, rho: float) -> np.ndarray:
    """Rescale ``g_hat`` to norm exactly ``rho`` (up or down)."""
    g_hat = np.asarray(g_hat, dtype=np.float64)
    if rho < 0:
        raise ValueError("clip bound must be non-negative")
    n = float(np.sqrt(np.dot(g_hat, g_hat)))
    if rho == 0.0:
        return np.zeros_like(g_hat)
    if n == 0.0:
        raise ValueError("cannot rescale zero gradient to positive norm")
    return (rho / n) * g_hat


def clip_fixed(g_hat, rho: float) -> np.ndarray:
    """Standard clipping: shrink to norm ``rho`` if larger, never enlarge."""
    g_hat = np.asarray(g_hat, dtype=np.float64)
    if rho <= 0:
        raise ValueError("fixed clip bound must be positive")
    n = float(np.sqrt(np.dot(g_hat, g_hat)))
    if n <= rho:
        return g_hat.copy()
    return (rho / n) * g_hat


def aggregate_adaptive(micro_grads) -> tuple[np.ndarray, float]:
    """Clip every micro-batch gradient to the smallest norm and sum them.

    Returns ``(sum, rho)``.  If any micro-batch gradient is zero then
    ``rho == 0`` and the sum is the zero vector.
    """
    m = _rows(micro_grads)
    norms = row_norms(m)
    rho = float(norms.min())
    if rho == 0.0:
        return np.zeros(m.shape[1]), 0.0
    clipped = m * (rho / norms)[:, None]
    return clipped.sum(axis=0), rho


def aggregate_normalized(micro_grads, b: int, B: int) -> np.ndarray:
    """``(b/B) * sum_j g_j / ||g_j||`` -- unit-normalised mean direction."""
    m = _rows(micro_grads)
    norms = row_norms(m)
    if np.any(norms == 0.0):
        raise ValueError("normalized aggregation undefined for a zero micro-batch gradient")
    return (b / B) * (m / norms[:, None]).sum(axis=0)


def aggregate_fixed(micro_grads, rho: float) -> np.ndarray:
    """Mean of micro-batch gradients each clipped to at most ``rho``."""
    m = _rows(micro_grads)
    if rho <= 0:
        raise ValueError("fixed clip bound must be positive")
    norms = row_norms(m)
    scale = np.minimum(1.0, rho / np.where(norms == 0.0, np.inf, norms))
    return (m * scale[:, None]).sum(axis=0) / m.shape[0]


def aggregate(micro_grads: np.ndarray, spec: ClipSpec) -> tuple[np.ndarray, Optional[float]]:
    """Dispatch on ``spec.mode``; returns ``(update_direction, rho_or_None)``."""
    if spec.mode is ClipMode.ADAPTIVE:
        return aggregate_adaptive(micro_grads)
    if spec.mode is ClipMode.NORMALIZED:
        return aggregate_normalized(micro_grads, spec.micro_batch_b, spec.mini_batch_B), None
    return aggregate_fixed(micro_grads, spec.rho), spec.rho
