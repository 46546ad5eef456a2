"""Experiment configuration: a JSON tree with strict keys.

Unknown keys are errors.  ``load_config`` validates every section the file
contains, and the builders turn the parsed sections into library objects.
The CLI checks the sections each command needs before starting any run.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .clipping import ClipMode, ClipSpec
from .gradient_model import (
    DraggerSpec,
    GradientModelParams,
    calibrated_ratio_schedule,
    power_schedule,
    table_schedule,
)
from .problems import (
    Problem,
    linear_spectrum,
    load_delimited,
    logistic_problem,
    make_logistic_data,
    quadratic_problem,
)
from .streams import SEED_LIMIT, substream


class ConfigError(ValueError):
    pass


def _section(tree: Any, path: str, allowed: set[str], required: set[str] = frozenset()) -> dict:
    if not isinstance(tree, dict):
        raise ConfigError(f"{path}: expected an object")
    unknown = sorted(set(tree) - allowed)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {', '.join(unknown)}")
    missing = sorted(required - set(tree))
    if missing:
        raise ConfigError(f"{path}: missing key(s) {', '.join(missing)}")
    return tree


def _num(value, path: str, *, low=None, high=None, low_open=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    if integer:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        value = int(value)
    if not math.isfinite(value):
        raise ConfigError(f"{path}: must be finite")
    if low is not None and (value <= low if low_open else value < low):
        op = ">" if low_open else ">="
        raise ConfigError(f"{path}: must be {op} {low}, got {value}")
    if high is not None and value > high:
        raise ConfigError(f"{path}: must be <= {high}, got {value}")
    return value


def _num_list(value, path: str, **kw) -> list:
    if not isinstance(value, list):
        value = [value]
    if not value:
        raise ConfigError(f"{path}: must not be empty")
    return [_num(v, f"{path}[{i}]", **kw) for i, v in enumerate(value)]


# --------------------------------------------------------------------------
# sections


@dataclass
class ModelConfig:
    epsilon: float = 0.0
    sigma: float = 0.0
    ratio_low: float = 1.0
    ratio_high: Optional[float] = None
    base_direction: Optional[list] = None
    base_seed: int = 0
    ratio_schedule: Optional[dict] = None


@dataclass
class ClipConfig:
    B: int
    b: Optional[int] = None
    b_grid: Optional[list] = None
    mode: str = "adaptive"
    rho: Optional[float] = None


@dataclass
class RunSettings:
    T: int
    lr: Any = "theorem"
    seeds: list = field(default_factory=lambda: [0])
    initial_w: Any = 1.0
    algorithms: Optional[list] = None


@dataclass
class ExperimentConfig:
    problem: Optional[dict] = None
    model: Optional[ModelConfig] = None
    clip: Optional[ClipConfig] = None
    run: Optional[RunSettings] = None
    verify: Optional[dict] = None
    bounds: Optional[dict] = None
    output_dir: str = "out"
    source: Optional[str] = None


_TOP = {"problem", "gradient_model", "clip", "run", "verify", "bounds", "output_dir"}


def _parse_problem(tree) -> dict:
    kind = tree.get("kind") if isinstance(tree, dict) else None
    if kind == "quadratic":
        _section(tree, "problem", {"kind", "eigenvalues", "dim", "spectrum_low", "spectrum_high"})
        if "eigenvalues" in tree:
            if {"dim", "spectrum_low", "spectrum_high"} & set(tree):
                raise ConfigError("problem: give either eigenvalues or dim/spectrum_low/spectrum_high")
            _num_list(tree["eigenvalues"], "problem.eigenvalues", low=0, low_open=True)
        else:
            _section(tree, "problem", set(tree), {"dim", "spectrum_low", "spectrum_high"})
            _num(tree["dim"], "problem.dim", low=1, integer=True)
            lo = _num(tree["spectrum_low"], "problem.spectrum_low", low=0, low_open=True)
            hi = _num(tree["spectrum_high"], "problem.spectrum_high", low=0, low_open=True)
            if lo > hi:
                raise ConfigError("problem: spectrum_low must not exceed spectrum_high")
    elif kind == "logistic":
        _section(
            tree, "problem",
            {"kind", "n_samples", "dim", "data_seed", "label_noise", "data_path", "delimiter", "l2_reg"},
        )
        if "data_path" in tree:
            if {"n_samples", "dim", "data_seed", "label_noise"} & set(tree):
                raise ConfigError("problem: data_path excludes synthetic-data keys")
        else:
            _section(tree, "problem", set(tree), {"n_samples", "dim"})
            _num(tree["n_samples"], "problem.n_samples", low=1, integer=True)
            _num(tree["dim"], "problem.dim", low=1, integer=True)
            _num(tree.get("data_seed", 0), "problem.data_seed", low=0, integer=True)
            _num(tree.get("label_noise", 0.1), "problem.label_noise", low=0, high=1)
        _num(tree.get("l2_reg", 0.0), "problem.l2_reg", low=0)
    else:
        raise ConfigError(f"problem.kind must be 'quadratic' or 'logistic', got {kind!r}")
    return tree


def _parse_model(tree) -> ModelConfig:
    _section(tree, "gradient_model",
             {"epsilon", "sigma", "ratio_low", "ratio_high", "base_direction", "base_seed",
              "ratio_schedule"})
    m = ModelConfig(
        epsilon=_num(tree.get("epsilon", 0.0), "gradient_model.epsilon", low=0, high=1),
        sigma=_num(tree.get("sigma", 0.0), "gradient_model.sigma", low=0),
        ratio_low=_num(tree.get("ratio_low", 1.0), "gradient_model.ratio_low", low=0, low_open=True),
        base_seed=_num(tree.get("base_seed", 0), "gradient_model.base_seed", low=0, integer=True),
    )
    m.ratio_high = _num(tree.get("ratio_high", m.ratio_low), "gradient_model.ratio_high",
                        low=m.ratio_low)
    if tree.get("base_direction") is not None:
        m.base_direction = _num_list(tree["base_direction"], "gradient_model.base_direction")
        if not any(m.base_direction):
            raise ConfigError("gradient_model.base_direction must be nonzero")
    sched = tree.get("ratio_schedule")
    if sched is not None:
        kind = sched.get("kind") if isinstance(sched, dict) else None
        path = "gradient_model.ratio_schedule"
        if kind == "calibrated":
            _section(sched, path, {"kind"})
        elif kind == "power":
            _section(sched, path, {"kind", "scale", "exponent"}, {"scale", "exponent"})
            _num(sched["scale"], f"{path}.scale", low=0, low_open=True)
            _num(sched["exponent"], f"{path}.exponent")
        elif kind == "table":
            _section(sched, path, {"kind", "values"}, {"values"})
            if not isinstance(sched["values"], dict) or not sched["values"]:
                raise ConfigError(f"{path}.values must be a non-empty object")
            for k, v in sched["values"].items():
                try:
                    int(k)
                except ValueError:
                    raise ConfigError(f"{path}.values: key {k!r} is not an integer") from None
                _num(v, f"{path}.values[{k}]", low=0, low_open=True)
        else:
            raise ConfigError(f"{path}.kind must be calibrated, power or table")
        m.ratio_schedule = sched
    return m


def _parse_clip(tree) -> ClipConfig:
    _section(tree, "clip", {"B", "b", "b_grid", "mode", "rho"}, {"B"})
    c = ClipConfig(B=_num(tree["B"], "clip.B", low=1, integer=True))
    if "b" in tree:
        c.b = _num(tree["b"], "clip.b", low=1, integer=True)
    if "b_grid" in tree:
        c.b_grid = sorted(set(_num_list(tree["b_grid"], "clip.b_grid", low=1, integer=True)))
    for b in ([c.b] if c.b else []) + (c.b_grid or []):
        if c.B % b:
            raise ConfigError(f"clip: mini-batch not divisible by micro-batch (B={c.B}, b={b})")
    c.mode = tree.get("mode", "adaptive")
    try:
        mode = ClipMode(c.mode)
    except ValueError:
        raise ConfigError(f"clip.mode must be adaptive, fixed or normalized, got {c.mode!r}") from None
    if tree.get("rho") is not None:
        c.rho = _num(tree["rho"], "clip.rho", low=0, low_open=True)
    if mode is ClipMode.FIXED and c.rho is None:
        raise ConfigError("clip: fixed mode needs rho > 0")
    return c


def _parse_run(tree) -> RunSettings:
    _section(tree, "run", {"T", "lr", "seeds", "initial_w", "algorithms"}, {"T"})
    r = RunSettings(T=_num(tree["T"], "run.T", low=1, integer=True))
    lr = tree.get("lr", "theorem")
    if lr != "theorem":
        lr = _num(lr, "run.lr", low=0, low_open=True)
    r.lr = lr
    r.seeds = _num_list(tree.get("seeds", [0]), "run.seeds", low=0, high=SEED_LIMIT - 1, integer=True)
    iw = tree.get("initial_w", 1.0)
    r.initial_w = _num_list(iw, "run.initial_w") if isinstance(iw, list) else _num(iw, "run.initial_w")
    if "algorithms" in tree:
        algs = tree["algorithms"]
        if not isinstance(algs, list) or not algs or any(a not in ("sgd", "mcsgd") for a in algs):
            raise ConfigError("run.algorithms must be a non-empty list drawn from 'sgd', 'mcsgd'")
        r.algorithms = list(dict.fromkeys(algs))
    return r


VERIFY_DEFAULTS = {
    "seed": 0,
    "chunk_size": 1 << 18,
    "suites": ["halfspace", "deviation", "variance", "cosine"],
    "halfspace": {"n": 1_000_000, "dims": [3, 8, 64], "floor": -1e-12},
    "deviation": {
        "n": 100_000, "b": [1, 2, 4, 16, 64], "epsilon": [0.1, 0.25, 0.5],
        "sigma": [0.1, 1.0], "dim": [8, 64], "ratio": 2.0, "n_stderr": 3.0,
        "bound_multiplier": 1.0,
    },
    "variance": {
        "n": 1_000_000, "epsilon": [0.1, 0.25, 0.5], "sigma": [0.1, 1.0], "dim": [8, 64],
        "ratio": 2.0, "rel_tol": 0.01,
    },
    "cosine": {"n_pairs": 100, "dim": 64, "sigma_rel": 0.1, "ratio": 2.0,
               "max_abs_cross": 0.05, "min_within": 0.9},
}


def _parse_verify(tree) -> dict:
    _section(tree, "verify", set(VERIFY_DEFAULTS))
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in VERIFY_DEFAULTS.items()}
    for key in ("seed", "chunk_size", "suites"):
        if key in tree:
            out[key] = tree[key]
    _num(out["seed"], "verify.seed", low=0, high=SEED_LIMIT - 1, integer=True)
    _num(out["chunk_size"], "verify.chunk_size", low=1, integer=True)
    if not isinstance(out["suites"], list) or any(s not in VERIFY_DEFAULTS["suites"] for s in out["suites"]):
        raise ConfigError(f"verify.suites must be a list drawn from {VERIFY_DEFAULTS['suites']}")
    for suite in VERIFY_DEFAULTS["suites"]:
        if suite in tree:
            _section(tree[suite], f"verify.{suite}", set(VERIFY_DEFAULTS[suite]))
            out[suite].update(tree[suite])
    hs, dv, va, co = out["halfspace"], out["deviation"], out["variance"], out["cosine"]
    _num(hs["n"], "verify.halfspace.n", low=1, integer=True)
    _num_list(hs["dims"], "verify.halfspace.dims", low=3, integer=True)
    _num(hs["floor"], "verify.halfspace.floor")
    for name, sec in (("deviation", dv), ("variance", va)):
        _num(sec["n"], f"verify.{name}.n", low=1, integer=True)
        _num_list(sec["epsilon"], f"verify.{name}.epsilon", low=0, high=1)
        _num_list(sec["sigma"], f"verify.{name}.sigma", low=0)
        _num_list(sec["dim"], f"verify.{name}.dim", low=2, integer=True)
        _num(sec["ratio"], f"verify.{name}.ratio", low=0, low_open=True)
    _num_list(dv["b"], "verify.deviation.b", low=1, integer=True)
    _num(dv["n_stderr"], "verify.deviation.n_stderr", low=0)
    _num(dv["bound_multiplier"], "verify.deviation.bound_multiplier", low=0, low_open=True)
    _num(va["rel_tol"], "verify.variance.rel_tol", low=0, low_open=True)
    _num(co["n_pairs"], "verify.cosine.n_pairs", low=2, integer=True)
    _num(co["dim"], "verify.cosine.dim", low=2, integer=True)
    _num(co["sigma_rel"], "verify.cosine.sigma_rel", low=0)
    _num(co["ratio"], "verify.cosine.ratio", low=0, low_open=True)
    return out


BOUNDS_KEYS = {"T", "L", "loss_gap", "sigma", "sigma_b", "B", "b", "epsilon", "c", "C",
               "g_norm", "mu_norm", "eta"}


def _parse_bounds(tree) -> dict:
    _section(tree, "bounds", BOUNDS_KEYS, {"T", "L", "loss_gap", "sigma", "B", "b", "epsilon"})
    out = {
        "T": _num_list(tree["T"], "bounds.T", low=1, integer=True),
        "L": _num(tree["L"], "bounds.L", low=0, low_open=True),
        "loss_gap": _num(tree["loss_gap"], "bounds.loss_gap", low=0),
        "sigma": _num(tree["sigma"], "bounds.sigma", low=0),
        "B": _num(tree["B"], "bounds.B", low=1, integer=True),
        "b": _num_list(tree["b"], "bounds.b", low=1, integer=True),
        "epsilon": _num_list(tree["epsilon"], "bounds.epsilon", low=0, high=1),
        "c": _num(tree.get("c", 1.0), "bounds.c", low=0, low_open=True),
        "g_norm": _num(tree.get("g_norm", 1.0), "bounds.g_norm", low=0),
    }
    out["sigma_b"] = _num(tree.get("sigma_b", out["sigma"]), "bounds.sigma_b", low=0)
    out["C"] = _num(tree.get("C", out["c"]), "bounds.C", low=out["c"])
    out["mu_norm"] = _num(tree.get("mu_norm", out["c"] * out["g_norm"]), "bounds.mu_norm", low=0)
    out["eta"] = None if tree.get("eta") is None else _num(tree["eta"], "bounds.eta", low=0, low_open=True)
    return out


def parse_config(tree: Any, source: Optional[str] = None) -> ExperimentConfig:
    _section(tree, "config", _TOP)
    cfg = ExperimentConfig(source=source)
    if "problem" in tree:
        cfg.problem = _parse_problem(tree["problem"])
    if "gradient_model" in tree:
        cfg.model = _parse_model(tree["gradient_model"])
    if "clip" in tree:
        cfg.clip = _parse_clip(tree["clip"])
    if "run" in tree:
        cfg.run = _parse_run(tree["run"])
    if "verify" in tree:
        cfg.verify = _parse_verify(tree["verify"])
    if "bounds" in tree:
        cfg.bounds = _parse_bounds(tree["bounds"])
    if "output_dir" in tree:
        if not isinstance(tree["output_dir"], str) or not tree["output_dir"]:
            raise ConfigError("output_dir must be a non-empty string")
        cfg.output_dir = tree["output_dir"]
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        tree = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return parse_config(tree, source=str(path))


# --------------------------------------------------------------------------
# builders


def build_problem(spec: dict, base_dir: Optional[Path] = None) -> Problem:
    if spec["kind"] == "quadratic":
        if "eigenvalues" in spec:
            return quadratic_problem(spec["eigenvalues"])
        return quadratic_problem(
            linear_spectrum(int(spec["dim"]), spec["spectrum_low"], spec["spectrum_high"])
        )
    if "data_path" in spec:
        p = Path(spec["data_path"])
        if not p.is_absolute() and base_dir is not None:
            p = base_dir / p
        X, y = load_delimited(p, spec.get("delimiter"))
    else:
        X, y = make_logistic_data(
            int(spec["n_samples"]), int(spec["dim"]), int(spec.get("data_seed", 0)),
            spec.get("label_noise", 0.1),
        )
    return logistic_problem(X, y, spec.get("l2_reg", 0.0))


def build_schedule(sched: Optional[dict]):
    if sched is None:
        return None
    if sched["kind"] == "calibrated":
        return calibrated_ratio_schedule()
    if sched["kind"] == "power":
        return power_schedule(sched["scale"], sched["exponent"])
    return table_schedule(sched["values"])


def random_unit(dim: int, seed: int, stream: int = 0) -> np.ndarray:
    v = substream(seed, 0, 1000 + stream).standard_normal(dim)
    return v / np.linalg.norm(v)


def build_model(m: ModelConfig, dim: int) -> tuple[GradientModelParams, DraggerSpec]:
    params = GradientModelParams(epsilon=m.epsilon, sigma=m.sigma, dim=dim)
    if m.base_direction is not None:
        if len(m.base_direction) != dim:
            raise ConfigError(
                f"gradient_model.base_direction has dim {len(m.base_direction)}, problem has {dim}"
            )
        base = np.asarray(m.base_direction, dtype=float)
    else:
        base = random_unit(dim, m.base_seed)
    spec = DraggerSpec(base, m.ratio_low, m.ratio_high, build_schedule(m.ratio_schedule))
    return params, spec


def initial_point(run: RunSettings, dim: int) -> np.ndarray:
    if isinstance(run.initial_w, list):
        if len(run.initial_w) != dim:
            raise ConfigError(f"run.initial_w has dim {len(run.initial_w)}, problem has {dim}")
        return np.asarray(run.initial_w, dtype=float)
    return np.full(dim, float(run.initial_w))


def clip_spec(c: ClipConfig, b: int) -> ClipSpec:
    return ClipSpec(c.B, b, ClipMode(c.mode), c.rho)
