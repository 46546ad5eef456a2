"""Dense vector helpers shared by every other module.

Vectors are 1-d float64 numpy arrays.  The helpers validate shape and
finiteness at the boundary so that downstream code can assume clean input.
"""

from __future__ import annotations

import numpy as np

# Relative tolerance for orthogonality / normalisation checks.
REL_TOL = 1e-12


def as_vector(values, name: str = "vector") -> np.ndarray:
    """Return ``values`` as a finite, non-empty 1-d float64 array."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {v.shape}")
    if v.size == 0:
        raise ValueError(f"{name} must have positive dimension")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def _check_dims(u: np.ndarray, v: np.ndarray) -> None:
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape[0]} vs {v.shape[0]}")


def dot(u, v) -> float:
    u = as_vector(u, "u")
    v = as_vector(v, "v")
    _check_dims(u, v)
    return float(np.dot(u, v))


def l2_norm(v) -> float:
    v = as_vector(v)
    return float(np.sqrt(np.dot(v, v)))


def project_orthogonal(v, g) -> np.ndarray:
    """Remove the component of ``v`` along ``g``."""
    v = as_vector(v, "v")
    g = as_vector(g, "g")
    _check_dims(v, g)
    gg = float(np.dot(g, g))
    if gg == 0.0:
        raise ValueError("cannot project against zero direction")
    return v - (float(np.dot(v, g)) / gg) * g


def cosine_similarity(u, v) -> float:
    u = as_vector(u, "u")
    v = as_vector(v, "v")
    _check_dims(u, v)
    nu = l2_norm(u)
    nv = l2_norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity undefined for a zero vector")
    c = float(np.dot(u, v)) / (nu * nv)
    # rounding can push |c| a hair past 1
    return min(1.0, max(-1.0, c))
