"""Synthetic per-example gradients: benign noise around the true gradient
mixed with orthogonal "dragger" gradients.

A per-example gradient is benign with probability ``1 - epsilon`` and equals
``g + xi`` with ``xi ~ N(0, sigma^2/d I)`` (so ``E||xi||^2 = sigma^2`` exactly
and ``xi`` is centrally symmetric).  With probability ``epsilon`` it is a
dragger ``mu``: a vector orthogonal to ``g`` whose norm is ``r * ||g||`` with
``r`` uniform on ``[ratio_low, ratio_high]``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Optional

import numpy as np

from .linalg import REL_TOL, as_vector, l2_norm, project_orthogonal

# Below this true-gradient norm the dragger band c||g|| <= ||mu|| is vacuous.
STATIONARY_NORM = 1e-14

RatioSchedule = Callable[[int], float]


@dataclass(frozen=True)
class GradientModelParams:
    epsilon: float
    sigma: float
    dim: int

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if not self.sigma >= 0.0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim}")


@dataclass(frozen=True)
class DraggerSpec:
    base_direction: np.ndarray
    ratio_low: float
    ratio_high: float
    ratio_schedule: Optional[RatioSchedule] = None

    def __post_init__(self):
        base = as_vector(self.base_direction, "base_direction")
        if l2_norm(base) == 0.0:
            raise ValueError("base_direction must be nonzero")
        if not 0.0 < self.ratio_low <= self.ratio_high:
            raise ValueError(
                f"need 0 < ratio_low <= ratio_high, got {self.ratio_low}, {self.ratio_high}"
            )
        object.__setattr__(self, "base_direction", base)

    @property
    def fixed_ratio(self) -> bool:
        return self.ratio_low == self.ratio_high

    def ratio_for(self, b: int) -> float:
        """Lower ratio bound to use for micro-batch size ``b``."""
        if self.ratio_schedule is None:
            return self.ratio_low
        return float(self.ratio_schedule(b))


class GradientKind(enum.Enum):
    BENIGN = "benign"
    DRAGGER = "dragger"


@dataclass(frozen=True)
class LabeledGradient:
    value: np.ndarray
    kind: GradientKind


@dataclass(frozen=True)
class GradientBatch:
    """``n`` per-example gradients drawn at one point, row ``i`` is example ``i``."""

    values: np.ndarray
    is_dragger: np.ndarray
    mu_direction: Optional[np.ndarray]
    stationary: bool

    @property
    def dragger_count(self) -> int:
        return int(np.count_nonzero(self.is_dragger))


def dragger_direction(g: np.ndarray, base: np.ndarray) -> np.ndarray:
    """Unit vector along ``base`` with its ``g`` component removed."""
    if g.shape[0] < 2:
        raise ValueError("draggers need dim >= 2 (orthogonal complement is empty)")
    if g.shape != base.shape:
        raise ValueError(f"dimension mismatch: {g.shape[0]} vs {base.shape[0]}")
    perp = project_orthogonal(base, g)
    n = l2_norm(perp)
    if n <= REL_TOL * l2_norm(base):
        raise ValueError("degenerate dragger direction")
    return perp / n


def _ratios(spec: DraggerSpec, u: np.ndarray) -> np.ndarray:
    if spec.fixed_ratio:
        return np.full(u.shape, spec.ratio_low)
    return spec.ratio_low + (spec.ratio_high - spec.ratio_low) * u


def sample_benign(g, sigma: float, rng: np.random.Generator) -> np.ndarray:
    g = as_vector(g, "g")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return g.copy()
    return g + rng.standard_normal(g.shape[0]) * (sigma / math.sqrt(g.shape[0]))


def make_dragger(g, spec: DraggerSpec, rng: np.random.Generator) -> np.ndarray:
    g = as_vector(g, "g")
    gn = l2_norm(g)
    if gn == 0.0:
        raise ValueError("dragger undefined at a zero true gradient")
    direction = dragger_direction(g, spec.base_direction)
    r = _ratios(spec, rng.random(1))[0]
    return (r * gn) * direction


def sample_batch(
    g,
    params: GradientModelParams,
    spec: DraggerSpec,
    rng: np.random.Generator,
    n: int,
) -> GradientBatch:
    """Draw ``n`` labelled per-example gradients at true gradient ``g``.

    Draw layout is fixed per example (one uniform for the label, ``d``
    normals for the noise, one uniform for the ratio), so example ``i`` is a
    pure function of the stream and ``i``.
    """
    g = as_vector(g, "g")
    d = g.shape[0]
    if d != params.dim:
        raise ValueError(f"gradient has dim {d}, model expects {params.dim}")
    label_u = rng.random(n)
    noise = rng.standard_normal((n, d))
    ratio_u = rng.random(n)

    is_dragger = label_u < params.epsilon
    values = g + noise * (params.sigma / math.sqrt(d))

    gn = l2_norm(g)
    stationary = gn < STATIONARY_NORM
    direction = None
    if is_dragger.any():
        if stationary:
            values[is_dragger] = 0.0
        else:
            direction = dragger_direction(g, spec.base_direction)
            norms = _ratios(spec, ratio_u[is_dragger]) * gn
            values[is_dragger] = norms[:, None] * direction
    return GradientBatch(values, is_dragger, direction, stationary)


def sample_per_example(
    g, params: GradientModelParams, spec: DraggerSpec, rng: np.random.Generator
) -> LabeledGradient:
    batch = sample_batch(g, params, spec, rng, 1)
    kind = GradientKind.DRAGGER if batch.is_dragger[0] else GradientKind.BENIGN
    return LabeledGradient(batch.values[0], kind)


def per_example_variance(g_norm: float, mu_norm: float, epsilon: float, sigma: float) -> float:
    """Total variance of one per-example gradient under the mixture."""
    if min(g_norm, mu_norm, epsilon, sigma) < 0 or epsilon > 1:
        raise ValueError("inputs must be non-negative with epsilon <= 1")
    e = epsilon
    return e * (1 - e) * g_norm**2 + e * (1 - e) * mu_norm**2 + (1 - e) * sigma**2


# Measured benign/dragger norm ratios at three micro-batch sizes.  The
# dragger ratio bound is their reciprocal.
CALIBRATION_POINTS = ((1, 6.18), (4, 5.74), (512, 4.42))


def calibrated_ratio_schedule(
    points: tuple = CALIBRATION_POINTS,
) -> RatioSchedule:
    """c(b) = 1 / c_hat(b), linear in log b between calibration points.

    Illustrative only; values are held constant outside the calibrated range.
    """
    bs = np.log(np.array([p[0] for p in points], dtype=float))
    cs = 1.0 / np.array([p[1] for p in points], dtype=float)

    def schedule(b: int) -> float:
        if b < 1:
            raise ValueError("micro-batch size must be >= 1")
        return float(np.interp(math.log(b), bs, cs))

    return schedule


def power_schedule(scale: float, exponent: float) -> RatioSchedule:
    """c(b) = scale * b**(-exponent)."""
    if scale <= 0:
        raise ValueError("scale must be positive")

    def schedule(b: int) -> float:
        return scale * float(b) ** (-exponent)

    return schedule


def table_schedule(table: Mapping[int, float]) -> RatioSchedule:
    """Explicit lookup; missing sizes are an error."""
    lookup = {int(k): float(v) for k, v in table.items()}

    def schedule(b: int) -> float:
        try:
            return lookup[int(b)]
        except KeyError:
            raise ValueError(f"ratio schedule has no entry for b={b}") from None

    return schedule
