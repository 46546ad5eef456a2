"""Closed-form convergence rates and constants.

Notation: ``T`` iterations, smoothness ``L``, ``loss_gap = L_0 - L_*``,
benign noise scale ``sigma``, mini-batch ``B``, micro-batch ``b``, dragger
probability ``epsilon`` and dragger norm ratio band ``[c, C]``.

Every guard raises :class:`HypothesisError`; nothing is clamped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence, Union


class HypothesisError(ValueError):
    """Inputs violate a hypothesis the bound depends on."""


@dataclass(frozen=True)
class RateInputs:
    T: int
    L: float
    loss_gap: float
    sigma: float
    B: int
    b: int
    epsilon: float
    c: float
    C: float

    def __post_init__(self):
        if self.T < 1 or not self.L > 0:
            raise ValueError("need T >= 1 and L > 0")
        if self.loss_gap < 0 or self.sigma < 0:
            raise ValueError("loss_gap and sigma must be non-negative")
        if self.B < 1 or self.b < 1:
            raise ValueError("batch sizes must be positive")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if not 0 < self.c <= self.C:
            raise ValueError("need 0 < c <= C")


@dataclass(frozen=True)
class ClippedRate:
    bias: float
    decaying: float

    @property
    def total(self) -> float:
        return self.bias + self.decaying


def baseline_sgd_rate(T: int, L: float, loss_gap: float, sigma_b: float, B: int) -> float:
    """SGD without draggers: ``T^{-1/4} sqrt(2 L gap + sigma_b^2 / B)``."""
    if T < 1 or not L > 0:
        raise ValueError("need T >= 1 and L > 0")
    return T**-0.25 * math.sqrt(2 * L * loss_gap + sigma_b**2 / B)


def dragger_sgd_rate(
    T: int, L: float, loss_gap: float, sigma: float, B: int, epsilon: float
) -> float:
    """SGD with draggers:
    ``T^{-1/4} sqrt(4L/(1-eps)^2 * gap + 2 sigma^2 / ((1-eps) B))``."""
    if not 0.0 <= epsilon < 1.0:
        raise HypothesisError(f"need 0 <= epsilon < 1, got {epsilon}")
    if T < 1 or not L > 0:
        raise ValueError("need T >= 1 and L > 0")
    one = 1.0 - epsilon
    return T**-0.25 * math.sqrt(4 * L / one**2 * loss_gap + 2 * sigma**2 / (one * B))


def check_clipped_hypotheses(b: int, epsilon: float) -> None:
    """Require ``epsilon >= 1/(b+1)`` and both rate denominators positive."""
    if not 0.0 < epsilon < 1.0:
        raise HypothesisError(f"need 0 < epsilon < 1, got {epsilon}")
    if epsilon < 1.0 / (b + 1):
        raise HypothesisError(
            f"epsilon >= 1/(b+1) violated: epsilon={epsilon:g} < {1.0 / (b + 1):g} (b={b})"
        )
    if not math.sqrt(b) * epsilon - math.sqrt(epsilon * (1 - epsilon)) > 0:
        raise HypothesisError(
            f"sqrt(b)*epsilon > sqrt(epsilon*(1-epsilon)) violated (b={b}, epsilon={epsilon:g})"
        )
    if not math.sqrt(b * epsilon) - math.sqrt(1 - epsilon) > 0:
        raise HypothesisError(
            f"sqrt(b*epsilon) > sqrt(1-epsilon) violated (b={b}, epsilon={epsilon:g})"
        )


def clipped_bias(sigma: float, b: int, epsilon: float, c: float) -> float:
    """T-independent term ``sigma / ((sqrt(b) eps - sqrt(eps(1-eps))) (1 + c))``."""
    check_clipped_hypotheses(b, epsilon)
    return sigma / ((math.sqrt(b) * epsilon - math.sqrt(epsilon * (1 - epsilon))) * (1 + c))


def clipped_sgd_rate(inputs: RateInputs) -> ClippedRate:
    """Micro-batch clipped SGD rate, split into bias and ``1/sqrt(T)`` terms."""
    x = inputs
    check_clipped_hypotheses(x.b, x.epsilon)
    e = x.epsilon
    bias = clipped_bias(x.sigma, x.b, e, x.c)
    s = math.sqrt(x.b * e)
    decaying = (
        (1 / math.sqrt(x.T))
        * (s / (s - math.sqrt(1 - e)))
        * (2 * x.L * (1 + 2 * e * x.C) / (1 - e))
        * (x.loss_gap + 1 / (2 * x.L))
    )
    return ClippedRate(bias=bias, decaying=decaying)


def max_dragger_ratio(epsilon: float, eta: float, L: float) -> float:
    """Largest dragger ratio C for which the SGD descent argument goes
    through (with the factor-2 safety margin):
    ``sqrt((2(1-eps) eta - (1-eps^2) L eta^2) / (2 eps^2 L eta^2))``."""
    if not 0.0 < epsilon < 1.0:
        raise HypothesisError(f"need 0 < epsilon < 1, got {epsilon}")
    if not eta > 0 or not L > 0:
        raise ValueError("need eta > 0 and L > 0")
    radicand = (2 * (1 - epsilon) * eta - (1 - epsilon**2) * L * eta**2) / (
        2 * epsilon**2 * L * eta**2
    )
    if radicand <= 0:
        raise HypothesisError("step size too large for dragger bound")
    return math.sqrt(radicand)


def deviation_norm_bound(
    b: int, epsilon: float, sigma: float, g_norm: float, mu_norm: float
) -> float:
    """Upper bound on ``E||g_hat - E g_hat||`` for a micro-batch mean of size b."""
    if b < 1:
        raise ValueError("b must be >= 1")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    e = epsilon
    v = e * (1 - e) * g_norm**2 + e * (1 - e) * mu_norm**2 + (1 - e) * sigma**2
    return math.sqrt(v / b)


@dataclass(frozen=True)
class BiasSweep:
    rows: list[tuple[int, float]]
    argmin: int


CSchedule = Union[Callable[[int], float], Mapping[int, float]]


def bias_sweep(b_grid: Sequence[int], inputs: RateInputs, c_schedule: CSchedule) -> BiasSweep:
    """Bias term over a micro-batch grid with ``c`` taken from ``c_schedule``.

    Ties resolve to the smallest ``b``.
    """
    if len(b_grid) == 0:
        raise ValueError("empty micro-batch grid")
    lookup = c_schedule.__getitem__ if isinstance(c_schedule, Mapping) else c_schedule
    rows = []
    for b in sorted(b_grid):
        rows.append((b, clipped_bias(inputs.sigma, b, inputs.epsilon, float(lookup(b)))))
    best = min(rows, key=lambda r: (r[1], r[0]))
    return BiasSweep(rows=rows, argmin=best[0])
