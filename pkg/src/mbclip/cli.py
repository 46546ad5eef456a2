"""Command-line harness: ``run``, ``sweep``, ``verify`` and ``bounds``.

Exit codes: 0 ok, 2 config error, 3 divergence, 4 verification failure.
"""

from __future__ import annotations

import argparse
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .bounds import (
    HypothesisError,
    RateInputs,
    baseline_sgd_rate,
    clipped_sgd_rate,
    deviation_norm_bound,
    dragger_sgd_rate,
    max_dragger_ratio,
)
from .config import (
    ConfigError,
    ExperimentConfig,
    ModelConfig,
    build_model,
    build_problem,
    build_schedule,
    clip_spec,
    initial_point,
    load_config,
    random_unit,
)
from .gradient_model import DraggerSpec, GradientModelParams
from .io import SUMMARY_COLUMNS, atomic_write_text, csv_text, run_csv_text, write_json
from .optimizer import DivergenceError, RunConfig, lr_theorem, run_mcsgd, run_sgd
from .problems import linear_spectrum, quadratic_problem
from .verification import (
    McReport,
    cosine_experiment,
    mc_deviation_norm,
    mc_halfspace_pair,
    mc_variance_identity,
)

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_VERIFY = 0, 2, 3, 4

SWEEP_COLUMNS = (
    "b", "c", "mean_min_grad_norm", "std_min_grad_norm", "mean_final_loss",
    "bias", "total", "note",
)
BOUNDS_COLUMNS = (
    "T", "b", "epsilon", "baseline_sgd_rate", "dragger_sgd_rate", "clipped_bias",
    "clipped_decaying", "clipped_total", "max_dragger_ratio", "deviation_norm_bound",
)


# --------------------------------------------------------------------------
# runs


def _base_dir(cfg: ExperimentConfig) -> Optional[Path]:
    return Path(cfg.source).parent if cfg.source else None


def _model_config(cfg: ExperimentConfig) -> ModelConfig:
    return cfg.model if cfg.model is not None else ModelConfig()


def run_id_for(algorithm: str, cfg: ExperimentConfig, b: Optional[int]) -> str:
    if algorithm == "sgd":
        return "sgd"
    return f"mcsgd-{cfg.clip.mode}-b{b}"


def _run_config(cfg: ExperimentConfig, problem, seed: int, b: Optional[int]) -> RunConfig:
    clip = None if b is None else clip_spec(cfg.clip, b)
    return RunConfig(
        iterations_T=cfg.run.T,
        batch_B=cfg.clip.B,
        seed=seed,
        initial_w=initial_point(cfg.run, problem.dim),
        lr=cfg.run.lr,
        clip=clip,
    )


def execute_run(cfg: ExperimentConfig, algorithm: str, b: Optional[int], seed: int) -> dict:
    """One (run, seed) pair.  Returns the CSV text and summary row, or the
    divergence diagnostic.  Safe to call in a worker process."""
    problem = build_problem(cfg.problem, _base_dir(cfg))
    params, spec = build_model(_model_config(cfg), problem.dim)
    run_cfg = _run_config(cfg, problem, seed, None if algorithm == "sgd" else b)
    run_id = run_id_for(algorithm, cfg, b)
    runner = run_sgd if algorithm == "sgd" else run_mcsgd
    try:
        summary = runner(problem, params, spec, run_cfg)
    except DivergenceError as exc:
        return {"run_id": run_id, "seed": seed, "diverged": str(exc), "iteration": exc.iteration}
    row = (
        run_id, seed, summary.min_grad_norm, summary.final_loss, cfg.run.T,
        None if algorithm == "sgd" else b, cfg.clip.B, params.epsilon, params.sigma,
        "none" if algorithm == "sgd" else cfg.clip.mode, summary.eta,
    )
    return {"run_id": run_id, "seed": seed, "csv": run_csv_text(summary), "row": row}


def _call(task):
    fn, args = task
    return fn(*args)


def _map(fn: Callable, arg_list: Sequence[tuple], jobs: int) -> list:
    """Ordered map, in process or over a worker pool."""
    if jobs <= 1 or len(arg_list) <= 1:
        return [fn(*a) for a in arg_list]
    with ProcessPoolExecutor(max_workers=min(jobs, len(arg_list))) as pool:
        return list(pool.map(_call, [(fn, a) for a in arg_list]))


def _require(cfg: ExperimentConfig, *sections: str) -> None:
    missing = [s for s in sections if getattr(cfg, s) is None]
    if missing:
        raise ConfigError(f"config is missing section(s): {', '.join(missing)}")


def _validate_runs(cfg: ExperimentConfig, tasks: Sequence[tuple]):
    """Build every object a run needs so precondition failures surface
    before any run starts.  Returns the problem and gradient model."""
    try:
        problem = build_problem(cfg.problem, _base_dir(cfg))
        params, spec = build_model(_model_config(cfg), problem.dim)
        if params.epsilon > 0 and problem.dim < 2:
            raise ConfigError("draggers need dim >= 2 (orthogonal complement is empty)")
        for algorithm, b, seed in tasks:
            _run_config(cfg, problem, seed, None if algorithm == "sgd" else b)
    except ConfigError:
        raise
    except (ValueError, OSError) as exc:
        raise ConfigError(str(exc)) from None
    return problem, params, spec


def _write_runs(out: Path, results: list[dict]) -> tuple[list[tuple], list[dict]]:
    rows, diverged = [], []
    for res in results:
        if "diverged" in res:
            diverged.append(res)
            continue
        atomic_write_text(out / f"{res['run_id']}-seed{res['seed']}.csv", res["csv"])
        rows.append(res["row"])
    atomic_write_text(out / "summary.csv", csv_text(SUMMARY_COLUMNS, rows))
    return rows, diverged


def _report_divergence(diverged: list[dict]) -> int:
    for d in diverged:
        print(f"error: run {d['run_id']} seed {d['seed']}: {d['diverged']}", file=sys.stderr)
    return EXIT_DIVERGED


def cmd_run(cfg: ExperimentConfig, out: Path, jobs: int) -> int:
    _require(cfg, "problem", "clip", "run")
    algorithms = cfg.run.algorithms or (["sgd"] if cfg.clip.b is None else ["sgd", "mcsgd"])
    if "mcsgd" in algorithms and cfg.clip.b is None:
        raise ConfigError("clip.b is required to run mcsgd")
    tasks = [(a, cfg.clip.b, s) for a in algorithms for s in cfg.run.seeds]
    _validate_runs(cfg, tasks)
    results = _map(execute_run, [(cfg, a, b, s) for a, b, s in tasks], jobs)
    rows, diverged = _write_runs(out, results)
    for row in rows:
        print(f"{row[0]} seed={row[1]} min_grad_norm={row[2]:.6g} final_loss={row[3]:.6g}")
    return _report_divergence(diverged) if diverged else EXIT_OK


def _argmin(pairs: Sequence[tuple[int, float]]) -> Optional[int]:
    pairs = [p for p in pairs if p[1] is not None and math.isfinite(p[1])]
    if not pairs:
        return None
    return min(pairs, key=lambda p: (p[1], p[0]))[0]


def cmd_sweep(cfg: ExperimentConfig, out: Path, jobs: int) -> int:
    _require(cfg, "problem", "clip", "run")
    if not cfg.clip.b_grid:
        raise ConfigError("sweep needs clip.b_grid")
    grid = cfg.clip.b_grid
    tasks = [("mcsgd", b, s) for b in grid for s in cfg.run.seeds]
    problem, params, spec = _validate_runs(cfg, tasks)
    model = _model_config(cfg)
    schedule = build_schedule(model.ratio_schedule)
    try:
        c_of = {b: (schedule(b) if schedule else model.ratio_low) for b in grid}
        w0 = initial_point(cfg.run, problem.dim)
        loss_gap = problem.loss(w0) - problem.optimum_L_star
    except (ValueError, RuntimeError) as exc:
        raise ConfigError(str(exc)) from None

    results = _map(execute_run, [(cfg, a, b, s) for a, b, s in tasks], jobs)
    rows, diverged = _write_runs(out, results)
    if diverged:
        return _report_divergence(diverged)

    table, empirical, theory = [], [], []
    for b in grid:
        mins = np.array([r[2] for r in rows if r[5] == b])
        finals = np.array([r[3] for r in rows if r[5] == b])
        mean = float(mins.mean())
        std = float(mins.std(ddof=1)) if mins.size > 1 else 0.0
        empirical.append((b, mean))
        c = c_of[b]
        try:
            rate = clipped_sgd_rate(RateInputs(
                T=cfg.run.T, L=problem.smoothness_L, loss_gap=loss_gap, sigma=params.sigma,
                B=cfg.clip.B, b=b, epsilon=params.epsilon, c=c, C=max(c, model.ratio_high),
            ))
        except (HypothesisError, ValueError) as exc:
            table.append((b, c, mean, std, float(finals.mean()),
                          "hypothesis violated", "hypothesis violated", str(exc)))
            continue
        theory.append((b, rate.bias))
        table.append((b, c, mean, std, float(finals.mean()), rate.bias, rate.total, ""))
    atomic_write_text(out / "sweep.csv", csv_text(SWEEP_COLUMNS, table))
    print(csv_text(SWEEP_COLUMNS, table), end="")
    emp = _argmin(empirical)
    th = _argmin(theory)
    print(f"empirical argmin b = {emp}")
    print(f"theoretical argmin b (bias) = {th if th is not None else 'none (all b violate hypotheses)'}")
    return EXIT_OK


# --------------------------------------------------------------------------
# verification


def _suite_vectors(dim: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    return random_unit(dim, seed, 1), random_unit(dim, seed, 2)


def _deviation_case(b, eps, sigma, dim, ratio, n, seed, n_stderr, mult, chunk) -> dict:
    g, base = _suite_vectors(dim, seed)
    params = GradientModelParams(eps, sigma, dim)
    spec = DraggerSpec(base, ratio, ratio)
    return mc_deviation_norm(g, params, spec, b, n, seed, n_stderr, mult, chunk).to_dict()


def _variance_case(eps, sigma, dim, ratio, n, seed, rel_tol, chunk) -> dict:
    g, base = _suite_vectors(dim, seed)
    params = GradientModelParams(eps, sigma, dim)
    spec = DraggerSpec(base, ratio, ratio)
    return mc_variance_identity(g, params, spec, n, seed, rel_tol, chunk).to_dict()


def _halfspace_case(n, dim, seed, floor, chunk) -> dict:
    return mc_halfspace_pair(n, dim, seed, floor, chunk).to_dict()


def _cosine_case(dim, sigma_rel, ratio, n_pairs, seed, max_abs_cross, min_within) -> dict:
    problem = quadratic_problem(linear_spectrum(dim, 0.1, 1.0))
    w = np.ones(dim)
    gn = float(np.linalg.norm(problem.grad(w)))
    params = GradientModelParams(0.0, sigma_rel * gn, dim)
    spec = DraggerSpec(random_unit(dim, seed, 2), ratio, ratio)
    res = cosine_experiment(problem, params, spec, w, n_pairs, seed)
    db, bb = res.dragger_benign, res.benign_benign
    return McReport(
        name=f"cosine[d={dim},sigma_rel={sigma_rel:g}]",
        n_samples=n_pairs,
        estimate=db.mean,
        reference=bb.mean,
        margin=bb.mean - abs(db.mean),
        passed=abs(db.mean) < max_abs_cross and bb.mean > min_within,
        seed=seed,
        details={"dragger_benign_std": db.std, "benign_benign_std": bb.std,
                 "resampled": res.resampled},
    ).to_dict()


def verify_tasks(v: dict) -> list[tuple]:
    seed, chunk = v["seed"], v["chunk_size"]
    tasks: list[tuple] = []
    if "halfspace" in v["suites"]:
        hs = v["halfspace"]
        tasks += [(_halfspace_case, (hs["n"], d, seed, hs["floor"], chunk)) for d in hs["dims"]]
    if "deviation" in v["suites"]:
        dv = v["deviation"]
        tasks += [
            (_deviation_case, (b, e, s, d, dv["ratio"], dv["n"], seed, dv["n_stderr"],
                               dv["bound_multiplier"], chunk))
            for b in dv["b"] for e in dv["epsilon"] for s in dv["sigma"] for d in dv["dim"]
        ]
    if "variance" in v["suites"]:
        va = v["variance"]
        tasks += [
            (_variance_case, (e, s, d, va["ratio"], va["n"], seed, va["rel_tol"], chunk))
            for e in va["epsilon"] for s in va["sigma"] for d in va["dim"]
        ]
    if "cosine" in v["suites"]:
        co = v["cosine"]
        tasks.append((_cosine_case, (co["dim"], co["sigma_rel"], co["ratio"], co["n_pairs"],
                                     seed, co["max_abs_cross"], co["min_within"])))
    return tasks


def cmd_verify(cfg: ExperimentConfig, out: Path, jobs: int) -> int:
    _require(cfg, "verify")
    tasks = verify_tasks(cfg.verify)
    if not tasks:
        raise ConfigError("verify.suites selects no suites")
    if jobs <= 1:
        reports = [fn(*args) for fn, args in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            reports = list(pool.map(_call, tasks))
    failing = [r["name"] for r in reports if not r["passed"]]
    write_json(out / "verify_report.json",
               {"passed": not failing, "failing": failing, "suites": reports})
    for r in reports:
        status = "PASS" if r["passed"] else "FAIL"
        print(f"{status} {r['name']} estimate={r['estimate']:.6g} reference={r['reference']:.6g}")
    if failing:
        print(f"error: failing suites: {', '.join(failing)}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


# --------------------------------------------------------------------------
# bounds


def _cell(fn: Callable[[], float]):
    try:
        return fn()
    except HypothesisError as exc:
        return str(exc)
    except ValueError as exc:
        return f"error: {exc}"


def bounds_rows(bd: dict) -> list[tuple]:
    rows = []
    for T in bd["T"]:
        eta = bd["eta"] if bd["eta"] is not None else lr_theorem(bd["L"], T)
        for b in bd["b"]:
            for e in bd["epsilon"]:
                inputs = RateInputs(T=T, L=bd["L"], loss_gap=bd["loss_gap"], sigma=bd["sigma"],
                                    B=bd["B"], b=b, epsilon=e, c=bd["c"], C=bd["C"])
                clipped = _cell(lambda: clipped_sgd_rate(inputs))
                if isinstance(clipped, str):
                    parts = (clipped, clipped, clipped)
                else:
                    parts = (clipped.bias, clipped.decaying, clipped.total)
                rows.append((
                    T, b, e,
                    _cell(lambda: baseline_sgd_rate(T, bd["L"], bd["loss_gap"], bd["sigma_b"], bd["B"])),
                    _cell(lambda: dragger_sgd_rate(T, bd["L"], bd["loss_gap"], bd["sigma"], bd["B"], e)),
                    *parts,
                    _cell(lambda: max_dragger_ratio(e, eta, bd["L"])),
                    _cell(lambda: deviation_norm_bound(b, e, bd["sigma"], bd["g_norm"], bd["mu_norm"])),
                ))
    return rows


def cmd_bounds(cfg: ExperimentConfig, out: Path, jobs: int) -> int:
    _require(cfg, "bounds")
    text = csv_text(BOUNDS_COLUMNS, bounds_rows(cfg.bounds))
    atomic_write_text(out / "bounds.csv", text)
    print(text, end="")
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point

COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "verify": cmd_verify, "bounds": cmd_bounds}


def _seed_list(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--seeds must be a comma-separated list of integers, got {text!r}") from None
    if not seeds or any(not 0 <= s < 2**64 for s in seeds):
        raise ConfigError("--seeds must list integers in [0, 2**64)")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mbclip", description="Micro-batch clipping experiments, bounds and checks."
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "run SGD and/or micro-batch clipped SGD per seed"),
        ("sweep", "clipped SGD over a micro-batch grid with bias/rate columns"),
        ("verify", "Monte-Carlo verification suites"),
        ("bounds", "tabulate closed-form rates and constants"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to JSON config")
        p.add_argument("--out", default=None, help="output directory (overrides output_dir)")
        p.add_argument("--seeds", default=None, help="comma list, overrides run.seeds")
        p.add_argument("--jobs", type=int, default=1, help="max concurrent runs")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg = load_config(args.config)
        if args.seeds is not None:
            seeds = _seed_list(args.seeds)
            if cfg.run is not None:
                cfg = replace(cfg, run=replace(cfg.run, seeds=seeds))
        out = Path(args.out if args.out is not None else cfg.output_dir)
        return COMMANDS[args.command](cfg, out, args.jobs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
