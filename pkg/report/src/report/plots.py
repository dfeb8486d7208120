"""Three figure kinds over benchmark runs.

Every builder returns plain series data so tests can assert on the numbers;
``render`` draws and writes the image.  Output is a pure function of the
input files: fixed style, fixed dpi, no timestamps or tool tags embedded.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics_io import MetricsSchemaError, Run

KINDS = ("convergence", "relative_time", "scaling")

_STYLE = {
    "figure.figsize": (6.4, 4.8),
    "figure.dpi": 100,
    "savefig.dpi": 100,
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "report",
}


def convergence_series(runs: list[Run]):
    """Objective vs nonlinear iteration, one series per run."""
    out = []
    for run in runs:
        label = f"{run.problem} {run.preconditioner}"
        out.append((label, [(r.iteration, r.objective) for r in run.rows]))
    return out


def relative_time_points(runs: list[Run]):
    """Per-problem wall time of every other preconditioner vs the baseline.

    The baseline is the first run's preconditioner; each remaining run is
    paired with the baseline run of the same problem.
    """
    baseline = runs[0].preconditioner
    base_by_problem = {r.problem: r for r in runs if r.preconditioner == baseline}
    points = []
    for run in runs:
        if run.preconditioner == baseline:
            continue
        base = base_by_problem.get(run.problem)
        if base is None:
            raise MetricsSchemaError(
                f"problem {run.problem!r} has no {baseline!r} baseline run"
            )
        points.append(
            (base.wall_seconds, run.wall_seconds, run.problem, run.preconditioner)
        )
    if not points:
        raise MetricsSchemaError(
            "relative_time needs runs from at least two preconditioners"
        )
    return baseline, points


def scaling_series(runs: list[Run]):
    """Linear-solver seconds per camera vs camera count, per preconditioner."""
    by_pc: dict[str, list[Run]] = {}
    for run in runs:
        by_pc.setdefault(run.preconditioner, []).append(run)
    out = []
    for pc in sorted(by_pc):
        series = sorted((r.n_cameras, r.seconds_per_camera) for r in by_pc[pc])
        out.append((pc, series))
    return out


def _finish(ax, log_x: bool, log_y: bool):
    if log_x:
        ax.set_xscale("log")
    if log_y:
        ax.set_yscale("log")
    ax.legend()


def render(kind: str, runs: list[Run], output: str, *,
           log_x: bool = False, log_y: bool = False) -> None:
    if kind not in KINDS:
        raise ValueError(f"unknown plot kind {kind!r}")
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        if kind == "convergence":
            for label, series in convergence_series(runs):
                xs, ys = zip(*series)
                ax.plot(xs, ys, label=label)
            ax.set_xlabel("nonlinear iteration")
            ax.set_ylabel("objective")
        elif kind == "relative_time":
            baseline, points = relative_time_points(runs)
            by_pc: dict[str, list[tuple[float, float]]] = {}
            for x, y, _, pc in points:
                by_pc.setdefault(pc, []).append((x, y))
            for pc in sorted(by_pc):
                xs, ys = zip(*by_pc[pc])
                ax.scatter(xs, ys, label=pc)
            lim = max(x for x, y, _, _ in points) * 1.2
            lim = max(lim, max(y for x, y, _, _ in points) * 1.2)
            ax.plot([0.0, lim], [0.0, lim], color="black", linewidth=1.0,
                    label="equal time")
            ax.set_xlabel(f"{baseline} solve seconds")
            ax.set_ylabel("solve seconds")
        else:
            for pc, series in scaling_series(runs):
                xs, ys = zip(*series)
                ax.plot(xs, ys, marker="o", label=pc)
            ax.set_xlabel("cameras")
            ax.set_ylabel("linear-solver seconds per camera")
        _finish(ax, log_x, log_y)
        fig.tight_layout()
        # a None value drops matplotlib's default Software tag, keeping the
        # bytes a pure function of the inputs
        fig.savefig(output, metadata={"Software": None})
        plt.close(fig)
