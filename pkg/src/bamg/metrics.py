"""Run metrics: per-iteration solver records, file formats, run alignment.

Each solve produces one RunMetrics: a header identifying the problem and
configuration, one row per nonlinear iteration (the initial objective is row
zero), and a trailer with the termination reason.  Two file syntaxes carry
the same data: a comma-separated table (consumed by the plotting package)
and a line-record text form.  Floats are written with ``repr`` so parsing
returns the identical value.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

HEADER_FIELDS = (
    "problem", "n_cameras", "n_points", "n_observations",
    "preconditioner", "tau", "loss", "seed", "wall_seconds",
)
ROW_FIELDS = (
    "iteration", "objective", "cg_iterations",
    "linear_setup_seconds", "linear_solve_seconds", "trust_radius", "accepted",
)
TRAILER_FIELDS = ("termination", "success")


class IncomparableRuns(Exception):
    """Runs whose objective ranges do not overlap cannot be aligned."""


@dataclass
class IterationRow:
    iteration: int
    objective: float
    cg_iterations: int
    linear_setup_seconds: float
    linear_solve_seconds: float
    trust_radius: float
    accepted: bool


@dataclass
class RunMetrics:
    problem: str
    n_cameras: int
    n_points: int
    n_observations: int
    preconditioner: str
    tau: float
    loss: str
    seed: int
    wall_seconds: float
    rows: list[IterationRow] = field(default_factory=list)
    termination: str = ""
    success: bool = True

    def __post_init__(self):
        for i in range(1, len(self.rows)):
            if self.rows[i].iteration < self.rows[i - 1].iteration:
                raise ValueError("rows must be ordered by iteration")

    # -- derived quantities ---------------------------------------------

    @property
    def initial_objective(self) -> float:
        return self.rows[0].objective

    @property
    def final_objective(self) -> float:
        return self.rows[-1].objective

    @property
    def n_iterations(self) -> int:
        """Nonlinear iterations run (trials, accepted or not)."""
        return self.rows[-1].iteration if self.rows else 0

    @property
    def total_cg_iterations(self) -> int:
        return sum(r.cg_iterations for r in self.rows)

    @property
    def cg_per_iteration(self) -> float:
        return self.total_cg_iterations / max(1, self.n_iterations)

    @property
    def linear_seconds(self) -> float:
        return sum(r.linear_setup_seconds + r.linear_solve_seconds for r in self.rows)

    @property
    def seconds_per_camera(self) -> float:
        return self.linear_seconds / self.n_cameras

    def without_timing(self) -> "RunMetrics":
        """Copy with every timing field zeroed, for reproducibility checks."""
        rows = [
            replace(r, linear_setup_seconds=0.0, linear_solve_seconds=0.0)
            for r in self.rows
        ]
        return replace(self, wall_seconds=0.0, rows=rows)

    # -- comma-separated form ---------------------------------------------

    def to_csv(self) -> str:
        out = [f"# {name}={_fmt(getattr(self, name))}" for name in HEADER_FIELDS]
        out.append(",".join(ROW_FIELDS))
        for r in self.rows:
            out.append(",".join(_fmt(getattr(r, name)) for name in ROW_FIELDS))
        for name in TRAILER_FIELDS:
            out.append(f"# {name}={_fmt(getattr(self, name))}")
        return "\n".join(out) + "\n"

    @staticmethod
    def from_csv(text: str) -> "RunMetrics":
        meta = {}
        rows = []
        saw_header = False
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key.strip()] = value
                continue
            cells = line.split(",")
            if not saw_header:
                if tuple(cells) != ROW_FIELDS:
                    raise ValueError(f"unexpected column header {cells}")
                saw_header = True
                continue
            rows.append(_parse_row(cells))
        return _metrics_from_parts(meta, rows)

    # -- line-record form --------------------------------------------------

    def to_text(self) -> str:
        def kv(names, obj):
            pairs = []
            for name in names:
                value = _fmt(getattr(obj, name))
                if any(ch.isspace() for ch in value):
                    raise ValueError(f"{name} value {value!r} contains whitespace")
                pairs.append(f"{name}={value}")
            return " ".join(pairs)

        out = ["run " + kv(HEADER_FIELDS, self)]
        out.extend("iter " + kv(ROW_FIELDS, r) for r in self.rows)
        out.append("end " + kv(TRAILER_FIELDS, self))
        return "\n".join(out) + "\n"

    @staticmethod
    def from_text(text: str) -> "RunMetrics":
        meta = {}
        rows = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            tag, _, rest = line.partition(" ")
            pairs = dict(item.split("=", 1) for item in rest.split())
            if tag in ("run", "end"):
                meta.update(pairs)
            elif tag == "iter":
                rows.append(_parse_row([pairs[name] for name in ROW_FIELDS]))
            else:
                raise ValueError(f"unknown record tag {tag!r}")
        return _metrics_from_parts(meta, rows)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_bool(text: str) -> bool:
    if text == "true":
        return True
    if text == "false":
        return False
    raise ValueError(f"expected true/false, got {text!r}")


def _parse_row(cells) -> IterationRow:
    if len(cells) != len(ROW_FIELDS):
        raise ValueError(f"row needs {len(ROW_FIELDS)} cells, got {len(cells)}")
    return IterationRow(
        iteration=int(cells[0]),
        objective=float(cells[1]),
        cg_iterations=int(cells[2]),
        linear_setup_seconds=float(cells[3]),
        linear_solve_seconds=float(cells[4]),
        trust_radius=float(cells[5]),
        accepted=_parse_bool(cells[6]),
    )


def _metrics_from_parts(meta: dict, rows: list) -> RunMetrics:
    missing = [k for k in HEADER_FIELDS if k not in meta]
    if missing:
        raise ValueError(f"missing metadata keys {missing}")
    return RunMetrics(
        problem=meta["problem"],
        n_cameras=int(meta["n_cameras"]),
        n_points=int(meta["n_points"]),
        n_observations=int(meta["n_observations"]),
        preconditioner=meta["preconditioner"],
        tau=float(meta["tau"]),
        loss=meta["loss"],
        seed=int(meta["seed"]),
        wall_seconds=float(meta["wall_seconds"]),
        rows=rows,
        termination=meta.get("termination", ""),
        success=_parse_bool(meta.get("success", "true")),
    )


def metrics_from_report(problem, report, *, name: str, preconditioner: str,
                        tau: float, seed: int, wall_seconds: float) -> RunMetrics:
    """Package a solver report against its problem into RunMetrics."""
    rows = [
        IterationRow(
            iteration=r.iteration,
            objective=r.objective,
            cg_iterations=r.cg_iterations,
            linear_setup_seconds=r.setup_seconds,
            linear_solve_seconds=r.solve_seconds,
            trust_radius=r.radius,
            accepted=r.accepted,
        )
        for r in report.records
    ]
    return RunMetrics(
        problem=name,
        n_cameras=problem.n_cameras,
        n_points=problem.n_points,
        n_observations=problem.n_observations,
        preconditioner=preconditioner,
        tau=tau,
        loss=problem.loss,
        seed=seed,
        wall_seconds=wall_seconds,
        rows=rows,
        termination=report.termination,
        success=report.success,
    )


# -- run alignment ------------------------------------------------------------


def truncate_to_common_objective(runs: list[RunMetrics]) -> list[RunMetrics]:
    """Cut each run at the first iteration reaching the common objective.

    The common value is the highest objective every run eventually reaches,
    i.e. the largest final objective among the runs.  A run whose initial
    objective is already below that value never passes through it, so the
    runs are incomparable.
    """
    if len(runs) < 2:
        raise ValueError("need at least two runs to align")
    names = {r.problem for r in runs}
    if len(names) > 1:
        raise ValueError(f"runs come from different problems: {sorted(names)}")
    for r in runs:
        if not r.rows:
            raise ValueError("run has no iteration rows")
    common = max(r.final_objective for r in runs)
    if common > min(r.initial_objective for r in runs):
        raise IncomparableRuns(
            f"common objective {common} exceeds some run's initial objective"
        )
    out = []
    for r in runs:
        stop = next(i for i, row in enumerate(r.rows) if row.objective <= common)
        out.append(replace(r, rows=r.rows[: stop + 1]))
    return out


def iterations_to_common(runs: list[RunMetrics]) -> list[int]:
    """Nonlinear iteration count each aligned run needed; order preserved."""
    return [r.n_iterations for r in truncate_to_common_objective(runs)]


# -- bench summary ------------------------------------------------------------

SUMMARY_FIELDS = (
    "problem", "n_cameras", "n_points", "n_observations", "preconditioner",
    "tau", "loss", "seed", "n_iterations", "total_cg_iterations",
    "cg_per_iteration", "linear_seconds", "seconds_per_camera",
    "wall_seconds", "final_objective", "termination", "success",
)


def summary_csv(runs: list[RunMetrics]) -> str:
    """One-line-per-run table of the quantities the scaling study compares."""
    out = [",".join(SUMMARY_FIELDS)]
    for r in runs:
        out.append(",".join(_fmt(getattr(r, name)) for name in SUMMARY_FIELDS))
    return "\n".join(out) + "\n"
