"""Run metrics: file formats, run alignment, and summaries."""
import time

import pytest

from bamg.metrics import (
    IncomparableRuns,
    IterationRow,
    RunMetrics,
    iterations_to_common,
    metrics_from_report,
    summary_csv,
    truncate_to_common_objective,
)
from bamg.solver import SolveConfig, lm_solve

from conftest import random_problem


def make_run(objectives, name="toy", preconditioner="pbj", **over) -> RunMetrics:
    rows = [
        IterationRow(
            iteration=i,
            objective=obj,
            cg_iterations=0 if i == 0 else 3 + i,
            linear_setup_seconds=0.01 * i,
            linear_solve_seconds=0.125 * i,
            trust_radius=1e4 / (i + 1),
            accepted=True,
        )
        for i, obj in enumerate(objectives)
    ]
    fields = dict(
        problem=name, n_cameras=5, n_points=40, n_observations=170,
        preconditioner=preconditioner, tau=0.1, loss="huber", seed=3,
        wall_seconds=1.5, rows=rows, termination="function_tolerance",
        success=True,
    )
    fields.update(over)
    return RunMetrics(**fields)


def solved_metrics():
    problem = random_problem(seed=31, n_cameras=5, n_points=25, pixel_noise=1.0)
    t0 = time.perf_counter()
    _, report = lm_solve(problem, SolveConfig(preconditioner="pbj", tau=1e-2))
    wall = time.perf_counter() - t0
    return problem, report, metrics_from_report(
        problem, report, name="p31", preconditioner="pbj", tau=1e-2, seed=31,
        wall_seconds=wall,
    )


# -- round trips ---------------------------------------------------------------


def test_csv_round_trip_lossless():
    run = make_run([100.0, 17.25, 3.0625, 1.0000000000000002])
    again = RunMetrics.from_csv(run.to_csv())
    assert again == run
    assert again.to_csv() == run.to_csv()


def test_text_round_trip_lossless():
    run = make_run([100.0, 17.25, 3.0625], wall_seconds=0.3333333333333333)
    again = RunMetrics.from_text(run.to_text())
    assert again == run
    assert again.to_text() == run.to_text()


def test_formats_carry_header_rows_and_trailer():
    run = make_run([10.0, 5.0], termination="gradient_tolerance", success=False)
    csv = run.to_csv()
    assert "# preconditioner=pbj" in csv
    assert csv.splitlines()[9] == "iteration,objective,cg_iterations," \
        "linear_setup_seconds,linear_solve_seconds,trust_radius,accepted"
    assert "# termination=gradient_tolerance" in csv
    assert "# success=false" in csv
    text = run.to_text()
    assert text.splitlines()[0].startswith("run problem=toy")
    assert text.splitlines()[-1] == "end termination=gradient_tolerance success=false"


def test_csv_rejects_unknown_columns():
    run = make_run([10.0, 5.0])
    broken = run.to_csv().replace("trust_radius", "radius")
    with pytest.raises(ValueError, match="column"):
        RunMetrics.from_csv(broken)


def test_missing_metadata_named():
    run = make_run([10.0, 5.0])
    broken = "\n".join(
        line for line in run.to_csv().splitlines() if "wall_seconds" not in line
    )
    with pytest.raises(ValueError, match="wall_seconds"):
        RunMetrics.from_csv(broken)


def test_rows_must_be_ordered():
    rows = [
        IterationRow(1, 5.0, 2, 0.0, 0.0, 1e4, True),
        IterationRow(0, 9.0, 0, 0.0, 0.0, 1e4, True),
    ]
    with pytest.raises(ValueError, match="ordered"):
        RunMetrics("x", 1, 1, 1, "pbj", 0.1, "trivial", 0, 0.0, rows=rows)


def test_without_timing_zeroes_every_timing_field():
    run = make_run([100.0, 17.25, 3.0625])
    flat = run.without_timing()
    assert flat.wall_seconds == 0.0
    assert all(
        r.linear_setup_seconds == 0.0 and r.linear_solve_seconds == 0.0
        for r in flat.rows
    )
    # everything else survives
    assert [r.objective for r in flat.rows] == [r.objective for r in run.rows]
    assert flat.problem == run.problem


# -- derived quantities ---------------------------------------------------------


def test_derived_quantities():
    run = make_run([100.0, 40.0, 10.0])
    assert run.initial_objective == 100.0
    assert run.final_objective == 10.0
    assert run.n_iterations == 2
    assert run.total_cg_iterations == (3 + 1) + (3 + 2)
    assert run.cg_per_iteration == 4.5
    assert run.linear_seconds == pytest.approx(0.01 + 0.125 + 0.02 + 0.25)
    assert run.seconds_per_camera == pytest.approx(run.linear_seconds / 5)


def test_metrics_from_report_matches_problem_and_solver():
    problem, report, metrics = solved_metrics()
    assert metrics.n_cameras == problem.n_cameras
    assert metrics.n_points == problem.n_points
    assert metrics.n_observations == problem.n_observations
    assert metrics.loss == problem.loss
    assert len(metrics.rows) == len(report.records)
    assert metrics.rows[0].iteration == 0
    assert metrics.final_objective == report.final_objective
    assert metrics.termination == report.termination
    assert metrics.total_cg_iterations == report.total_cg_iterations()


def test_wall_seconds_covers_linear_time():
    _, _, metrics = solved_metrics()
    assert metrics.wall_seconds >= metrics.linear_seconds


# -- alignment ------------------------------------------------------------------


def test_identical_runs_unchanged():
    a = make_run([100.0, 40.0, 10.0])
    b = make_run([100.0, 40.0, 10.0], preconditioner="multigrid")
    ta, tb = truncate_to_common_objective([a, b])
    assert [r.objective for r in ta.rows] == [100.0, 40.0, 10.0]
    assert [r.objective for r in tb.rows] == [100.0, 40.0, 10.0]


def test_truncation_at_first_reach_of_common_value():
    # common value 10.0: A passes it at iteration 3 and continues lower,
    # B arrives exactly there at iteration 7
    a = make_run([100.0, 50.0, 20.0, 10.0, 4.0, 2.0])
    b = make_run([100.0, 90.0, 80.0, 60.0, 40.0, 25.0, 15.0, 10.0],
                 preconditioner="multigrid")
    ta, tb = truncate_to_common_objective([a, b])
    assert ta.n_iterations == 3
    assert tb.n_iterations == 7
    assert ta.rows[-1].objective <= 10.0
    assert tb.rows[-1].objective <= 10.0
    assert iterations_to_common([a, b]) == [3, 7]


def test_common_value_is_largest_final_objective():
    a = make_run([100.0, 30.0, 5.0])
    b = make_run([100.0, 60.0, 12.0], preconditioner="multigrid")
    ta, tb = truncate_to_common_objective([a, b])
    # common value 12.0: A reaches it at iteration 2, B at its end
    assert ta.n_iterations == 2
    assert tb.n_iterations == 2


def test_diverging_run_is_incomparable():
    a = make_run([100.0, 40.0, 10.0])
    b = make_run([100.0, 150.0, 200.0], preconditioner="multigrid")
    with pytest.raises(IncomparableRuns):
        truncate_to_common_objective([a, b])


def test_alignment_input_validation():
    a = make_run([100.0, 40.0])
    with pytest.raises(ValueError, match="two runs"):
        truncate_to_common_objective([a])
    b = make_run([100.0, 40.0], name="other")
    with pytest.raises(ValueError, match="different problems"):
        truncate_to_common_objective([a, b])


# -- summary --------------------------------------------------------------------


def test_summary_csv_one_line_per_run():
    runs = [make_run([100.0, 40.0, 10.0]),
            make_run([100.0, 30.0, 8.0], preconditioner="multigrid")]
    text = summary_csv(runs)
    lines = text.splitlines()
    assert len(lines) == 3
    assert lines[0].startswith("problem,n_cameras")
    assert "final_objective" in lines[0]
    cells = dict(zip(lines[0].split(","), lines[1].split(",")))
    assert cells["preconditioner"] == "pbj"
    assert float(cells["final_objective"]) == 10.0
    assert int(cells["total_cg_iterations"]) == 9
