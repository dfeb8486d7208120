"""Preconditioned conjugate gradients and the trust-region driver.

The CG stop test tracks the quadratic objective Q = x^T A x / 2 - x^T b via
its per-iteration decrement: once ``i * (Q_i - Q_{i-1}) / Q_i`` falls to the
forcing tolerance the remaining progress per iteration is negligible and the
step is good enough for the outer nonlinear iteration.  The driver is
Levenberg-Marquardt with a trust region expressed through Jacobi-scaled
damping of the normal equations.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import multigrid, precond, rotation
from .problem import (
    BehindCameraError,
    BundleProblem,
    CAMERA_SIZE,
    POINT_SIZE,
    evaluate,
    gauge_nullspace,
)
from .schur import Damping, back_substitute, build_system, choose_mode, model_decrease


class PreconditionerNotSPD(Exception):
    """CG detected a nonpositive preconditioned inner product."""


class CgDivergence(Exception):
    """CG produced a non-finite value or nonpositive curvature."""


@dataclass
class ForcingCriterion:
    """Progress-based CG stop rule with the recorded objective trace."""

    tau: float
    q_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"forcing tolerance must be positive, got {self.tau}")

    def record(self, q: float) -> None:
        self.q_history.append(q)

    def satisfied(self) -> bool:
        i = len(self.q_history) - 1
        if i < 1:
            return False
        q_cur, q_prev = self.q_history[-1], self.q_history[-2]
        if q_cur == 0.0:
            return False
        return i * (q_cur - q_prev) / q_cur <= self.tau


@dataclass
class CgReport:
    iterations: int
    stop_reason: str  # forcing | residual_tol | max_iterations
    relative_residual: float
    q_history: list[float]


def pcg(
    apply_a,
    apply_m,
    b: np.ndarray,
    *,
    tau: float,
    max_iterations: int = 500,
    residual_tolerance: float = 1e-12,
) -> tuple[np.ndarray, CgReport]:
    """Preconditioned conjugate gradients from a zero initial guess.

    Stops on the forcing rule (see ForcingCriterion), on relative residual
    below ``residual_tolerance``, or at ``max_iterations``.  Raises
    PreconditionerNotSPD / CgDivergence on breakdown.
    """
    forcing = ForcingCriterion(tau)
    forcing.record(0.0)  # Q at the zero initial guess
    b_norm = float(np.linalg.norm(b))
    x = np.zeros_like(b)
    if b_norm == 0.0:
        return x, CgReport(0, "residual_tol", 0.0, forcing.q_history)
    r = b.copy()
    z = apply_m(r)
    rz = float(r @ z)
    if not np.isfinite(rz):
        raise CgDivergence("preconditioner produced a non-finite value")
    if rz <= 0.0:
        raise PreconditionerNotSPD(f"<r, M r> = {rz:.3e} at iteration 0")
    p = z.copy()
    q_val = 0.0
    rel = 1.0
    for i in range(1, max_iterations + 1):
        ap = apply_a(p)
        pap = float(p @ ap)
        if not np.isfinite(pap):
            raise CgDivergence("operator produced a non-finite value")
        if pap <= 0.0:
            raise CgDivergence(f"nonpositive curvature <p, A p> = {pap:.3e}")
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        q_val -= 0.5 * alpha * rz
        forcing.record(q_val)
        rel = float(np.linalg.norm(r)) / b_norm
        if not np.isfinite(rel):
            raise CgDivergence("residual became non-finite")
        if rel <= residual_tolerance:
            return x, CgReport(i, "residual_tol", rel, forcing.q_history)
        if forcing.satisfied():
            return x, CgReport(i, "forcing", rel, forcing.q_history)
        z = apply_m(r)
        rz_next = float(r @ z)
        if not np.isfinite(rz_next):
            raise CgDivergence("preconditioner produced a non-finite value")
        if rz_next <= 0.0:
            raise PreconditionerNotSPD(f"<r, M r> = {rz_next:.3e} at iteration {i}")
        p = z + (rz_next / rz) * p
        rz = rz_next
    return x, CgReport(max_iterations, "max_iterations", rel, forcing.q_history)


# -- trust region ------------------------------------------------------------


@dataclass
class TrustRegion:
    """Ratio-driven radius control; the radius divides the damping diagonal."""

    radius: float = 1e4
    min_radius: float = 1e-32

    def accept(self, rho: float) -> None:
        self.radius /= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)

    def reject(self) -> None:
        self.radius /= 2.0

    @property
    def underflowed(self) -> bool:
        return self.radius < self.min_radius


@dataclass
class SolveConfig:
    preconditioner: str = "multigrid"  # pbj | visibility | multigrid
    tau: float = 0.1
    max_iterations: int = 100
    cg_max_iterations: int = 500
    function_tolerance: float = 1e-6
    gradient_tolerance: float = 1e-10
    parameter_tolerance: float = 1e-8
    initial_radius: float = 1e4
    visibility_cap: int = precond.DEFAULT_CLUSTER_CAP
    mg_max_coarse_dim: int = 400
    mg_max_ratio: float = 0.7
    mg_max_aggregate: int = 20
    min_rho: float = 1e-3

    def __post_init__(self):
        if self.preconditioner not in ("pbj", "visibility", "multigrid"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


@dataclass
class IterationRecord:
    iteration: int
    objective: float
    cg_iterations: int
    setup_seconds: float
    solve_seconds: float
    radius: float
    accepted: bool
    step_norm: float = 0.0
    rho: float = 0.0
    cg_stop_reason: str = ""


@dataclass
class NonlinearReport:
    records: list[IterationRecord]
    termination: str
    success: bool
    hierarchy_stats: str = ""

    @property
    def final_objective(self) -> float:
        return self.records[-1].objective

    def total_cg_iterations(self) -> int:
        return sum(r.cg_iterations for r in self.records)

    def n_trials(self) -> int:
        return sum(1 for r in self.records if r.iteration > 0)


def lm_solve(problem: BundleProblem, config: SolveConfig
             ) -> tuple[BundleProblem, NonlinearReport]:
    """Minimize the robustified reprojection objective; returns the solution.

    Every trial step counts as an iteration whether accepted or not; rejected
    trials reuse the Jacobian and only refresh the damping.  A candidate that
    evaluates behind a camera is rejected like any failed step; failure to
    evaluate the current iterate propagates.
    """
    cams = problem.camera_params.copy()
    pts = problem.points.copy()
    tr = TrustRegion(radius=config.initial_radius)
    objective, jac = evaluate(problem, cams, pts)
    records = [IterationRecord(0, objective, 0, 0.0, 0.0, tr.radius, True)]
    termination, success = "max_iterations", True
    stats = ""
    # Observation structure is parameter independent: the visibility strength
    # graph and camera clustering are computed once per solve.
    strength = None
    clusters = None
    if config.preconditioner in ("visibility", "multigrid"):
        strength = multigrid.visibility_strength(
            (problem.cam_index, problem.pt_index, problem.n_cameras, problem.n_points)
        )
        if config.preconditioner == "visibility":
            clusters = precond.visibility_cluster(strength, config.visibility_cap)

    iteration = 0
    while iteration < config.max_iterations:
        g_cam, g_pt = jac.gradient()
        g_max = max(
            float(np.max(np.abs(g_cam))) if g_cam.size else 0.0,
            float(np.max(np.abs(g_pt))) if g_pt.size else 0.0,
        )
        if g_max < config.gradient_tolerance:
            termination = "gradient_tolerance"
            break

        iteration += 1
        t0 = time.perf_counter()
        damping = Damping.from_jacobian(jac, tr.radius)
        sys = build_system(jac, damping)
        sys.mode = choose_mode(sys)
        if config.preconditioner == "multigrid":
            hierarchy = multigrid.build_hierarchy(
                sys,
                gauge_nullspace(problem, cams),
                strength,
                max_coarse_dim=config.mg_max_coarse_dim,
                max_ratio=config.mg_max_ratio,
                max_aggregate=config.mg_max_aggregate,
            )
            apply_m = hierarchy.apply
            if not stats:
                stats = multigrid.hierarchy_stats(hierarchy)
        elif config.preconditioner == "visibility":
            apply_m = precond.vj_setup(sys, clusters).apply
        else:
            if sys.mode == "explicit":
                sys.ensure_explicit()
            apply_m = precond.pbj_setup(sys).apply
        t_setup = time.perf_counter() - t0

        t0 = time.perf_counter()
        delta_cam, cg = pcg(
            sys.matvec, apply_m, sys.rhs_cam,
            tau=config.tau, max_iterations=config.cg_max_iterations,
        )
        delta_pt = back_substitute(sys, delta_cam)
        t_solve = time.perf_counter() - t0

        decrease = model_decrease(sys, delta_cam)
        new_cams = cams + delta_cam.reshape(-1, CAMERA_SIZE)
        new_pts = pts + delta_pt.reshape(-1, POINT_SIZE)
        step_norm = float(np.sqrt(delta_cam @ delta_cam + delta_pt @ delta_pt))
        try:
            new_objective, _ = evaluate(problem, new_cams, new_pts, with_jacobian=False)
            # rho compares actual to predicted decrease of half the objective.
            rho = 0.5 * (objective - new_objective) / decrease if decrease > 0 else -np.inf
        except BehindCameraError:
            new_objective, rho = objective, -np.inf

        accepted = rho > config.min_rho
        if accepted:
            cams, pts = new_cams, new_pts
            cams[:, 0:3] = rotation.canonicalize(cams[:, 0:3])
            prev_objective = objective
            objective, jac = evaluate(problem, cams, pts)
            tr.accept(rho)
            records.append(IterationRecord(
                iteration, objective, cg.iterations, t_setup, t_solve,
                tr.radius, True, step_norm, rho, cg.stop_reason,
            ))
            if prev_objective - objective < config.function_tolerance * prev_objective:
                termination = "function_tolerance"
                break
            param_norm = float(np.sqrt(np.sum(cams**2) + np.sum(pts**2)))
            if step_norm < config.parameter_tolerance * (
                param_norm + config.parameter_tolerance
            ):
                termination = "parameter_tolerance"
                break
        else:
            tr.reject()
            records.append(IterationRecord(
                iteration, objective, cg.iterations, t_setup, t_solve,
                tr.radius, False, step_norm, rho, cg.stop_reason,
            ))
            if tr.underflowed:
                termination = "radius_underflow"
                success = False
                break

    solution = problem.with_params(cams, pts)
    return solution, NonlinearReport(records, termination, success, stats)
