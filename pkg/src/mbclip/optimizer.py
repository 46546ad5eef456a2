"""Plain mini-batch SGD and micro-batch clipped SGD over a synthetic
gradient model.

Randomness: iteration ``t`` of a run seeded with ``seed`` draws from a Philox
stream keyed by ``seed`` with ``t`` in the second counter word.  Within that
stream example ``i`` occupies fixed positions (see
:func:`mbclip.gradient_model.sample_batch`), so a run is a pure function of
its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .clipping import ClipSpec, aggregate, microbatch_means
from .gradient_model import DraggerSpec, GradientBatch, GradientModelParams, sample_batch
from .linalg import as_vector
from .problems import Problem
from .streams import SEED_LIMIT, substream

LOSS_CEILING = 1e12


class DivergenceError(RuntimeError):
    def __init__(self, iteration: int, detail: str = ""):
        self.iteration = iteration
        msg = f"divergence detected at iteration {iteration}"
        super().__init__(f"{msg}: {detail}" if detail else msg)


def lr_theorem(L: float, T: int) -> float:
    """Step size ``1 / (L sqrt(T))``."""
    if not L > 0 or T < 1:
        raise ValueError("need L > 0 and T >= 1")
    return 1.0 / (L * math.sqrt(T))


def iteration_rng(seed: int, t: int) -> np.random.Generator:
    return substream(seed, t)


@dataclass
class RunConfig:
    iterations_T: int
    batch_B: int
    seed: int
    initial_w: np.ndarray
    lr: Union[str, float] = "theorem"
    clip: Optional[ClipSpec] = None

    def __post_init__(self):
        if self.iterations_T < 1:
            raise ValueError("iterations_T must be >= 1")
        if self.batch_B < 1:
            raise ValueError("batch size must be >= 1")
        if not 0 <= self.seed < SEED_LIMIT:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.initial_w = as_vector(self.initial_w, "initial_w")
        if isinstance(self.lr, str):
            if self.lr != "theorem":
                raise ValueError(f"unknown learning-rate rule {self.lr!r}")
        elif not self.lr > 0:
            raise ValueError("fixed learning rate must be positive")
        if self.clip is not None and self.clip.mini_batch_B != self.batch_B:
            raise ValueError("clip spec mini-batch size differs from batch_B")

    def step_size(self, problem: Problem) -> float:
        if self.lr == "theorem":
            return lr_theorem(problem.smoothness_L, self.iterations_T)
        return float(self.lr)


@dataclass(slots=True)
class IterationRecord:
    t: int
    loss: float
    true_grad_norm: float
    clip_bound_rho: Optional[float]
    dragger_count: int
    zero_rho_event: bool = False
    stationary_dragger: bool = False


@dataclass
class RunSummary:
    records: list[IterationRecord]
    final_loss: float
    final_w: np.ndarray
    eta: float
    min_grad_norm: float = field(init=False)

    def __post_init__(self):
        self.min_grad_norm = min_grad_norm(self)


def min_grad_norm(s: RunSummary) -> float:
    if not s.records:
        raise ValueError("run summary has no records")
    return min(r.true_grad_norm for r in s.records)


def sample_minibatch(
    problem: Problem,
    params: GradientModelParams,
    spec: DraggerSpec,
    w: np.ndarray,
    seed: int,
    t: int,
    B: int,
) -> GradientBatch:
    """The per-example gradients a run with ``seed`` draws at iteration ``t``."""
    return sample_batch(problem.grad(w), params, spec, iteration_rng(seed, t), B)


def _check_finite(w: np.ndarray, loss: float, t: int) -> None:
    if not np.all(np.isfinite(w)):
        raise DivergenceError(t, "non-finite parameter")
    if not math.isfinite(loss) or loss > LOSS_CEILING:
        raise DivergenceError(t, f"loss {loss:.6g} exceeds {LOSS_CEILING:g}")


def _run(problem, params, spec, cfg: RunConfig, clip: Optional[ClipSpec]) -> RunSummary:
    if cfg.initial_w.shape[0] != problem.dim:
        raise ValueError(
            f"initial_w has dim {cfg.initial_w.shape[0]}, problem has {problem.dim}"
        )
    if params.dim != problem.dim:
        raise ValueError(f"gradient model dim {params.dim} != problem dim {problem.dim}")
    eta = cfg.step_size(problem)
    B = cfg.batch_B
    b = B if clip is None else clip.micro_batch_b
    w = cfg.initial_w.copy()
    records: list[IterationRecord] = []
    for t in range(cfg.iterations_T):
        loss = problem.loss(w)
        _check_finite(w, loss, t)
        g = problem.grad(w)
        gn = math.sqrt(float(np.dot(g, g)))
        batch = sample_batch(g, params, spec, iteration_rng(cfg.seed, t), B)
        micro = microbatch_means(batch.values, b)
        if clip is None:
            update, rho = micro[0], None
        else:
            update, rho = aggregate(micro, clip)
        records.append(
            IterationRecord(
                t=t,
                loss=loss,
                true_grad_norm=gn,
                clip_bound_rho=rho,
                dragger_count=batch.dragger_count,
                zero_rho_event=rho == 0.0,
                stationary_dragger=batch.stationary and batch.dragger_count > 0,
            )
        )
        w = w - eta * update
    final_loss = problem.loss(w)
    _check_finite(w, final_loss, cfg.iterations_T)
    return RunSummary(records=records, final_loss=final_loss, final_w=w, eta=eta)


def run_sgd(
    problem: Problem, params: GradientModelParams, spec: DraggerSpec, cfg: RunConfig
) -> RunSummary:
    """``w <- w - eta * mean(per-example gradients)`` for ``T`` iterations."""
    if cfg.clip is not None:
        raise ValueError("run_sgd takes a config without clipping")
    return _run(problem, params, spec, cfg, None)


def run_mcsgd(
    problem: Problem, params: GradientModelParams, spec: DraggerSpec, cfg: RunConfig
) -> RunSummary:
    """Micro-batch clipped SGD; the aggregation follows ``cfg.clip.mode``.

    adaptive: ``w <- w - eta * sum_j (rho/||g_j||) g_j`` with ``rho = min_j ||g_j||``
    normalized: ``w <- w - eta * (b/B) sum_j g_j/||g_j||``
    fixed: ``w <- w - eta * mean_j min(1, rho/||g_j||) g_j``
    """
    if cfg.clip is None:
        raise ValueError("run_mcsgd needs a clip spec")
    return _run(problem, params, spec, cfg, cfg.clip)
