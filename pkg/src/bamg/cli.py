"""Command-line front end: generate, solve, bench, compare.

Exit codes: 0 success, 2 usage error (argparse), 1 solver or comparison
failure.  Every randomized behavior flows from the --seed flag.
"""

from __future__ import annotations

import argparse
import pathlib
import sys
import time

import numpy as np

from . import metrics as metrics_mod
from . import precond, synth
from .balio import read_bal, write_bal
from .blockmat import write_matrix_market
from .metrics import RunMetrics, metrics_from_report, truncate_to_common_objective
from .problem import evaluate
from .schur import Damping, build_system, schur_explicit
from .solver import SolveConfig, lm_solve


def _add_city_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--blocks", type=int, default=2,
                   help="blocks per side (square city)")
    p.add_argument("--blocks-y", type=int, default=None,
                   help="blocks along y when the city is not square")
    p.add_argument("--block-size", type=float, default=100.0)
    p.add_argument("--street-width", type=float, default=15.0)
    p.add_argument("--height-min", type=float, default=6.0)
    p.add_argument("--height-max", type=float, default=25.0)
    p.add_argument("--spacing", type=float, default=15.0,
                   help="camera spacing along streets, meters")
    p.add_argument("--camera-height", type=float, default=1.8)
    p.add_argument("--focal", type=float, default=800.0)
    p.add_argument("--k1", type=float, default=-0.1)
    p.add_argument("--k2", type=float, default=0.01)
    p.add_argument("--points-per-block", type=int, default=300)
    p.add_argument("--n-points", type=int, default=None,
                   help="override the per-block point budget")
    p.add_argument("--fov", type=float, default=75.0, help="field of view, degrees")
    p.add_argument("--max-range", type=float, default=150.0)


def _add_noise_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--drift-rate", type=float, default=1e-3)
    p.add_argument("--drift-direction", type=str, default=None,
                   help="comma-separated unit 3-vector")
    p.add_argument("--sin-amplitude", type=float, default=None,
                   help="default: half the street width")
    p.add_argument("--sin-wavelength", type=float, default=None,
                   help="default: four grid pitches")
    p.add_argument("--rotation-sigma", type=float, default=0.01)
    p.add_argument("--pixel-sigma", type=float, default=0.0)
    p.add_argument("--no-noise", action="store_true",
                   help="emit the problem at its exact ground truth")


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preconditioner", choices=("pbj", "visibility", "multigrid"),
                   default="multigrid")
    p.add_argument("--tau", type=float, default=0.1,
                   help="forcing tolerance for the inner CG solves")
    p.add_argument("--max-iterations", type=int, default=100)
    p.add_argument("--visibility-cap", type=int, default=precond.DEFAULT_CLUSTER_CAP,
                   help="camera cluster size cap for the visibility preconditioner")
    p.add_argument("--coarse-dim", type=int, default=400,
                   help="stop coarsening at this many scalar unknowns")
    p.add_argument("--coarse-ratio", type=float, default=0.7,
                   help="stop coarsening when a level shrinks less than this")
    p.add_argument("--max-aggregate", type=int, default=20)


def _noise_from_args(args, city: synth.CityModel, seed: int) -> synth.NoiseSpec:
    if args.no_noise:
        return synth.NoiseSpec(drift_rate=0.0, sin_amplitude=0.0,
                               rotation_sigma=0.0, pixel_sigma=0.0, seed=seed)
    direction = (np.array([float(v) for v in args.drift_direction.split(",")])
                 if args.drift_direction else np.ones(3) / np.sqrt(3.0))
    return synth.NoiseSpec(
        drift_rate=args.drift_rate,
        drift_direction=direction,
        sin_amplitude=(0.5 * city.street_width if args.sin_amplitude is None
                       else args.sin_amplitude),
        sin_wavelength=(4.0 * city.pitch if args.sin_wavelength is None
                        else args.sin_wavelength),
        rotation_sigma=args.rotation_sigma,
        pixel_sigma=args.pixel_sigma,
        seed=seed,
    )


def _generate_from_args(args, seed: int):
    """(noisy, truth) problem pair from the shared city/noise flags."""
    blocks_y = args.blocks_y if args.blocks_y is not None else args.blocks
    city = synth.generate_city(
        args.blocks, blocks_y,
        block_size=args.block_size, street_width=args.street_width,
        height_range=(args.height_min, args.height_max), seed=seed,
    )
    return synth.generate_problem(
        args.blocks, blocks_y,
        block_size=args.block_size, street_width=args.street_width,
        height_range=(args.height_min, args.height_max),
        spacing=args.spacing, camera_height=args.camera_height,
        focal=args.focal, k1=args.k1, k2=args.k2,
        points_per_block=args.points_per_block, n_points=args.n_points,
        fov_degrees=args.fov, max_range=args.max_range,
        noise=_noise_from_args(args, city, seed + 3),
        loss=args.loss, seed=seed,
    )


def cmd_generate(args) -> int:
    noisy, truth = _generate_from_args(args, args.seed)
    out = pathlib.Path(args.output)
    write_bal(out, noisy)
    truth_path = (pathlib.Path(args.truth_out) if args.truth_out
                  else out.with_suffix(out.suffix + ".truth"))
    write_bal(truth_path, truth)
    initial, _ = evaluate(noisy, with_jacobian=False)
    print(f"wrote {out} and {truth_path}")
    print(f"cameras {noisy.n_cameras} points {noisy.n_points} "
          f"observations {noisy.n_observations} initial_objective {initial:.6g}")
    return 0


def _solve_config(args) -> SolveConfig:
    return SolveConfig(
        preconditioner=args.preconditioner,
        tau=args.tau,
        max_iterations=args.max_iterations,
        visibility_cap=args.visibility_cap,
        mg_max_coarse_dim=args.coarse_dim,
        mg_max_ratio=args.coarse_ratio,
        mg_max_aggregate=args.max_aggregate,
    )


def _write_metrics(run: RunMetrics, csv_path: pathlib.Path) -> None:
    csv_path.write_text(run.to_csv())
    csv_path.with_suffix(".txt").write_text(run.to_text())


def cmd_solve(args) -> int:
    problem = read_bal(args.problem, loss=args.loss)
    name = args.name or pathlib.Path(args.problem).stem.replace(" ", "_")
    config = _solve_config(args)

    if args.dump_schur:
        _, jac = evaluate(problem)
        sys_ = build_system(jac, Damping.from_jacobian(jac, config.initial_radius))
        write_matrix_market(schur_explicit(sys_), args.dump_schur)
        print(f"wrote Schur complement at the initial iterate to {args.dump_schur}")

    t0 = time.perf_counter()
    error = None
    try:
        _, report = lm_solve(problem, config)
    except Exception as err:  # failures still leave a metrics trailer behind
        error = err
        report = None
    wall = time.perf_counter() - t0

    if report is None:
        run = metrics_from_report(
            problem, _FailedReport(f"error:{type(error).__name__}"),
            name=name, preconditioner=args.preconditioner, tau=args.tau,
            seed=args.seed, wall_seconds=wall,
        )
    else:
        run = metrics_from_report(
            problem, report, name=name, preconditioner=args.preconditioner,
            tau=args.tau, seed=args.seed, wall_seconds=wall,
        )
    _write_metrics(run, pathlib.Path(args.output))
    if args.dump_hierarchy and report is not None and report.hierarchy_stats:
        print(report.hierarchy_stats)
    if error is not None:
        print(f"solver failed: {error}", file=sys.stderr)
        return 1
    print(f"{name}: {run.termination} after {run.n_iterations} iterations, "
          f"objective {run.final_objective:.6g}, {run.total_cg_iterations} CG iterations")
    return 0 if run.success else 1


class _FailedReport:
    """Stand-in report when the solver raised before producing records."""

    def __init__(self, reason: str):
        self.records = []
        self.termination = reason
        self.success = False


def cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    preconditioners = args.preconditioners.split(",")
    taus = [float(t) for t in args.taus.split(",")]
    losses = args.losses.split(",")
    if not (sizes and preconditioners and taus and losses):
        raise SystemExit(2)
    out_dir = pathlib.Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    runs, failures = [], 0
    for rep in range(args.repetitions):
        seed = args.seed + rep
        for size in sizes:
            gen_args = argparse.Namespace(**vars(args))
            gen_args.blocks, gen_args.blocks_y = size, size
            for loss in losses:
                gen_args.loss = loss
                noisy, _ = _generate_from_args(gen_args, seed)
                name = f"city{size}x{size}_seed{seed}"
                for pc in preconditioners:
                    for tau in taus:
                        run_args = argparse.Namespace(**vars(args))
                        run_args.preconditioner, run_args.tau = pc, tau
                        config = _solve_config(run_args)
                        t0 = time.perf_counter()
                        try:
                            _, report = lm_solve(noisy, config)
                        except Exception as err:
                            failures += 1
                            print(f"{name} {pc} tau={tau}: failed: {err}",
                                  file=sys.stderr)
                            report = _FailedReport(f"error:{type(err).__name__}")
                        wall = time.perf_counter() - t0
                        run = metrics_from_report(
                            noisy, report, name=name, preconditioner=pc,
                            tau=tau, seed=seed, wall_seconds=wall,
                        )
                        runs.append(run)
                        stem = f"{name}_{pc}_tau{tau}_{loss}"
                        _write_metrics(run, out_dir / f"{stem}.csv")
                        print(f"{stem}: {run.termination} "
                              f"iters={run.n_iterations} cg={run.total_cg_iterations} "
                              f"wall={wall:.2f}s")
    (out_dir / "summary.csv").write_text(metrics_mod.summary_csv(runs))
    print(f"wrote {len(runs)} runs to {out_dir}")
    return 1 if failures else 0


def cmd_compare(args) -> int:
    runs = [RunMetrics.from_csv(pathlib.Path(p).read_text()) for p in args.metrics]
    try:
        aligned = truncate_to_common_objective(runs)
    except metrics_mod.IncomparableRuns as err:
        print(f"incomparable runs: {err}", file=sys.stderr)
        return 1
    common = aligned[0].final_objective
    print(f"common objective {common!r}")
    header = f"{'preconditioner':>14} {'tau':>8} {'iters':>6} {'cg':>7} {'cg/iter':>8}"
    print(header)
    for run in aligned:
        print(f"{run.preconditioner:>14} {run.tau:>8g} {run.n_iterations:>6d} "
              f"{run.total_cg_iterations:>7d} {run.cg_per_iteration:>8.2f}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="bamg",
        description="Bundle adjustment with a multigrid-preconditioned camera solve.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic street-grid problem")
    _add_city_flags(p)
    _add_noise_flags(p)
    p.add_argument("--loss", choices=("trivial", "huber"), default="trivial")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--truth-out", default=None,
                   help="ground-truth side file (default: <output>.truth)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("solve", help="run the nonlinear solver on a problem file")
    p.add_argument("problem")
    _add_solver_flags(p)
    p.add_argument("--loss", choices=("trivial", "huber"), default="trivial")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--name", default=None, help="problem name in the metrics header")
    p.add_argument("-o", "--output", required=True, help="metrics CSV path")
    p.add_argument("--dump-schur", default=None,
                   help="write the initial Schur complement (MatrixMarket)")
    p.add_argument("--dump-hierarchy", action="store_true",
                   help="print multigrid level statistics")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", help="sweep problem sizes and preconditioners")
    _add_city_flags(p)
    _add_noise_flags(p)
    _add_solver_flags(p)
    p.add_argument("--sizes", default="2,3,4", help="comma list of blocks per side")
    p.add_argument("--preconditioners", default="pbj,multigrid")
    p.add_argument("--taus", default="0.01")
    p.add_argument("--losses", default="huber")
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("compare", help="align metrics files at a common objective")
    p.add_argument("metrics", nargs="+")
    p.set_defaults(func=cmd_compare)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
