"""Monte-Carlo checks of the deviation-norm bound, the half-space pairing
inequality and the per-example variance identity, plus the cosine and
norm-ratio experiments.

Each suite splits its samples into fixed-size chunks; chunk ``k`` draws from
substream ``(seed, k, suite_tag)`` and partial sums are reduced in chunk
order, so reports are reproducible for a given ``(n, seed, chunk_size)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .bounds import deviation_norm_bound
from .clipping import microbatch_means
from .gradient_model import (
    DraggerSpec,
    GradientModelParams,
    dragger_direction,
    per_example_variance,
    sample_batch,
)
from .linalg import as_vector, l2_norm
from .problems import Problem
from .streams import substream

DEFAULT_CHUNK = 1 << 18

# substream tags, one per suite
_HALFSPACE, _DEVIATION, _VARIANCE, _COSINE = 1, 2, 3, 4


@dataclass
class McReport:
    name: str
    n_samples: int
    estimate: float
    reference: float
    margin: float
    passed: bool
    seed: int
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _chunks(n: int, size: int) -> Iterator[tuple[int, int]]:
    if n < 1:
        raise ValueError("number of samples must be positive")
    if size < 1:
        raise ValueError("chunk size must be positive")
    k = 0
    start = 0
    while start < n:
        m = min(size, n - start)
        yield k, m
        k += 1
        start += m


# --------------------------------------------------------------------------
# half-space pairing inequality


def halfspace_pair_term(g, mu, delta, epsilon: float) -> float:
    """Sum of the aligned step and its mirror image across g's hyperplane:

    ((1-e)||g||^2 + g.D) / ||(1-e)g + e mu + D||
      + ((1-e)||g||^2 - g.D) / ||(1-e)g + e mu - D||
    """
    g = as_vector(g, "g")
    mu = as_vector(mu, "mu")
    delta = as_vector(delta, "delta")
    value = _pair_terms(g[None], mu[None], delta[None], np.array([epsilon]))
    return float(value[0])


def _pair_terms(g, mu, delta, eps) -> np.ndarray:
    e = eps[:, None]
    a = (1 - eps) * np.einsum("ij,ij->i", g, g)
    s = np.einsum("ij,ij->i", g, delta)
    base = (1 - e) * g + e * mu
    n_plus = np.linalg.norm(base + delta, axis=1)
    n_minus = np.linalg.norm(base - delta, axis=1)
    if np.any(n_plus == 0) or np.any(n_minus == 0):
        raise ValueError("pair term undefined: zero denominator")
    return (a + s) / n_plus + (a - s) / n_minus


def _halfspace_tuples(rng: np.random.Generator, m: int, dim: int):
    g = rng.standard_normal((m, dim))
    delta = rng.standard_normal((m, dim))
    z = rng.standard_normal((m, dim))
    ratio = rng.uniform(0.1, 10.0, m)
    eps = rng.random(m)

    s = np.einsum("ij,ij->i", g, delta)
    delta *= np.where(s < 0, -1.0, 1.0)[:, None]
    # mu orthogonal to span{g, delta}
    q1 = g / np.linalg.norm(g, axis=1)[:, None]
    v2 = delta - np.einsum("ij,ij->i", delta, q1)[:, None] * q1
    q2 = v2 / np.linalg.norm(v2, axis=1)[:, None]
    z -= np.einsum("ij,ij->i", z, q1)[:, None] * q1
    z -= np.einsum("ij,ij->i", z, q2)[:, None] * q2
    mu = z / np.linalg.norm(z, axis=1)[:, None] * (ratio * np.linalg.norm(g, axis=1))[:, None]
    # exact boundary ties (g.delta == 0) or eps == 0 are measure-zero; drop them
    ok = (np.einsum("ij,ij->i", g, delta) > 0) & (eps > 0) & np.all(np.isfinite(mu), axis=1)
    return g[ok], mu[ok], delta[ok], eps[ok]


def mc_halfspace_pair(
    n: int, dim: int, seed: int, floor: float = -1e-12, chunk_size: int = DEFAULT_CHUNK
) -> McReport:
    """Minimum pair term over ``n`` random admissible tuples.

    Tuples have ``g.delta > 0``, ``mu`` orthogonal to both ``g`` and ``delta``
    with ``||mu|| / ||g||`` uniform on [0.1, 10], and ``epsilon`` uniform on (0, 1).
    """
    if dim < 3:
        raise ValueError("need dim >= 3 so mu can be orthogonal to g and delta")
    lowest = math.inf
    nontrivial = 0
    resampled = 0
    for k, m in _chunks(n, chunk_size):
        rng = substream(seed, k, _HALFSPACE)
        got = 0
        while got < m:
            g, mu, delta, eps = _halfspace_tuples(rng, m - got, dim)
            resampled += (m - got) - g.shape[0]
            if g.shape[0] == 0:
                continue
            vals = _pair_terms(g, mu, delta, eps)
            lowest = min(lowest, float(vals.min()))
            a = (1 - eps) * np.einsum("ij,ij->i", g, g)
            nontrivial += int(np.count_nonzero(np.einsum("ij,ij->i", g, delta) > a))
            got += g.shape[0]
    return McReport(
        name=f"halfspace_pair[d={dim}]",
        n_samples=n,
        estimate=lowest,
        reference=floor,
        margin=lowest - floor,
        passed=lowest >= floor,
        seed=seed,
        details={"dim": dim, "nontrivial_tuples": nontrivial, "resampled": resampled},
    )


# --------------------------------------------------------------------------
# micro-batch deviation norm


def _fixed_dragger(g: np.ndarray, spec: DraggerSpec, what: str) -> np.ndarray:
    if not spec.fixed_ratio:
        raise ValueError(f"{what} requires fixed dragger norm (ratio_low == ratio_high)")
    return spec.ratio_low * l2_norm(g) * dragger_direction(g, spec.base_direction)


def mc_deviation_norm(
    g,
    params: GradientModelParams,
    spec: DraggerSpec,
    b: int,
    n: int,
    seed: int,
    n_stderr: float = 3.0,
    bound_multiplier: float = 1.0,
    chunk_size: int = DEFAULT_CHUNK,
) -> McReport:
    """Sample mean of ``||g_hat - ((1-e) g + e mu)||`` over ``n`` micro-batches
    of size ``b`` against the closed-form bound.

    ``bound_multiplier`` scales the bound before comparison; it exists to
    build negative controls and is 1 otherwise.
    """
    g = as_vector(g, "g")
    if b < 1:
        raise ValueError("micro-batch size must be >= 1")
    mu = _fixed_dragger(g, spec, "deviation-norm check")
    centre = (1 - params.epsilon) * g + params.epsilon * mu
    per_chunk = max(1, chunk_size // b)
    total = 0.0
    total_sq = 0.0
    for k, m in _chunks(n, per_chunk):
        batch = sample_batch(g, params, spec, substream(seed, k, _DEVIATION), m * b)
        dev = microbatch_means(batch.values, b) - centre
        norms = np.sqrt(np.einsum("ij,ij->i", dev, dev))
        total += float(norms.sum())
        total_sq += float(np.dot(norms, norms))
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0)
    stderr = math.sqrt(var / n)
    bound = bound_multiplier * deviation_norm_bound(
        b, params.epsilon, params.sigma, l2_norm(g), l2_norm(mu)
    )
    return McReport(
        name=f"deviation_norm[b={b},eps={params.epsilon:g},sigma={params.sigma:g},d={g.size}]",
        n_samples=n,
        estimate=mean,
        reference=bound,
        margin=bound - mean,
        passed=mean <= bound + n_stderr * stderr,
        seed=seed,
        details={"stderr": stderr, "b": b, "epsilon": params.epsilon,
                 "sigma": params.sigma, "dim": int(g.size)},
    )


# --------------------------------------------------------------------------
# per-example variance identity


def mc_variance_identity(
    g,
    params: GradientModelParams,
    spec: DraggerSpec,
    n: int,
    seed: int,
    rel_tol: float = 0.01,
    chunk_size: int = DEFAULT_CHUNK,
) -> McReport:
    """Empirical ``E||x - mean(x)||^2`` of per-example gradients against the
    closed form, which is exact under isotropic Gaussian noise."""
    g = as_vector(g, "g")
    mu = _fixed_dragger(g, spec, "variance identity")
    count = 0
    mean = np.zeros(g.size)
    m2 = 0.0
    for k, m in _chunks(n, chunk_size):
        x = sample_batch(g, params, spec, substream(seed, k, _VARIANCE), m).values
        c_mean = x.sum(axis=0) / m
        dev = x - c_mean
        c_m2 = float(np.einsum("ij,ij->", dev, dev))
        # pairwise merge of (count, mean, M2)
        delta = c_mean - mean
        new_count = count + m
        m2 += c_m2 + float(np.dot(delta, delta)) * count * m / new_count
        mean = mean + delta * (m / new_count)
        count = new_count
    estimate = m2 / n
    reference = per_example_variance(l2_norm(g), l2_norm(mu), params.epsilon, params.sigma)
    if reference > 0:
        err = abs(estimate - reference) / reference
        passed = err <= rel_tol
    else:
        err = abs(estimate)
        passed = err <= 1e-12
    return McReport(
        name=f"variance_identity[eps={params.epsilon:g},sigma={params.sigma:g},d={g.size}]",
        n_samples=n,
        estimate=estimate,
        reference=reference,
        margin=err,
        passed=passed,
        seed=seed,
        details={"relative_error": err, "tolerance": rel_tol},
    )


# --------------------------------------------------------------------------
# cosine similarity structure


@dataclass(frozen=True)
class CosineStats:
    mean: float
    std: float
    values: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class CosineResult:
    dragger_benign: CosineStats
    benign_benign: CosineStats
    resampled: int


def _row_cos(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    c = np.einsum("ij,ij->i", u, v) / (
        np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1)
    )
    return np.clip(c, -1.0, 1.0)


def cosine_experiment(
    problem: Problem,
    params: GradientModelParams,
    spec: DraggerSpec,
    w,
    n_pairs: int,
    seed: int,
) -> CosineResult:
    """Cosine similarity of ``n_pairs`` dragger/benign pairs and ``n_pairs``
    benign/benign pairs drawn at ``w``."""
    if n_pairs < 2:
        raise ValueError("need at least two pairs")
    w = as_vector(w, "w")
    g = problem.grad(w)
    if l2_norm(g) == 0.0:
        raise ValueError("true gradient is zero at w; draggers are undefined")
    direction = dragger_direction(g, spec.base_direction)
    gn = l2_norm(g)
    scale = params.sigma / math.sqrt(g.size)
    rng = substream(seed, 0, _COSINE)

    resampled = 0

    def benign(k: int) -> np.ndarray:
        nonlocal resampled
        x = g + rng.standard_normal((k, g.size)) * scale
        bad = np.linalg.norm(x, axis=1) == 0
        while bad.any():
            resampled += int(bad.sum())
            x[bad] = g + rng.standard_normal((int(bad.sum()), g.size)) * scale
            bad = np.linalg.norm(x, axis=1) == 0
        return x

    if spec.fixed_ratio:
        ratios = np.full(n_pairs, spec.ratio_low)
    else:
        ratios = rng.uniform(spec.ratio_low, spec.ratio_high, n_pairs)
    draggers = (ratios * gn)[:, None] * direction
    db = _row_cos(draggers, benign(n_pairs))
    bb = _row_cos(benign(n_pairs), benign(n_pairs))
    return CosineResult(
        dragger_benign=CosineStats(float(db.mean()), float(db.std(ddof=1)), db),
        benign_benign=CosineStats(float(bb.mean()), float(bb.std(ddof=1)), bb),
        resampled=resampled,
    )


# --------------------------------------------------------------------------
# norm-ratio proxy


def norm_ratio_proxy(
    benign_norms: Sequence[float], dragger_norms: Sequence[float], trim_fraction: float = 0.1
) -> float:
    """Trimmed mean benign norm over mean dragger norm.

    The largest ``floor(trim_fraction * n)`` benign norms are dropped before
    averaging; the dragger norms are not trimmed.  This estimates the
    benign-to-dragger ratio, i.e. the reciprocal of the dragger ratio ``c``.
    """
    benign = np.sort(np.asarray(benign_norms, dtype=np.float64))
    dragger = np.asarray(dragger_norms, dtype=np.float64)
    if benign.size == 0 or dragger.size == 0:
        raise ValueError("need at least one benign and one dragger norm")
    if not 0.0 <= trim_fraction < 1.0:
        raise ValueError("trim_fraction must be in [0, 1)")
    keep = benign.size - int(math.floor(trim_fraction * benign.size))
    if keep < 1:
        raise ValueError("no benign norms left after trimming")
    denom = float(dragger.mean())
    if denom == 0.0:
        raise ValueError("mean dragger norm is zero")
    return float(benign[:keep].mean()) / denom
