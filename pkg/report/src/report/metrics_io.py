"""Reader for the solver's comma-separated metrics files.

The format is fixed by the producing side: ``# key=value`` header lines,
one column-name row, one row per nonlinear iteration, and ``# key=value``
trailer lines.  This module re-declares the schema instead of importing
the solver package; the column names are the interface.
"""

from __future__ import annotations

import pathlib
from dataclasses import dataclass

HEADER_KEYS = (
    "problem", "n_cameras", "n_points", "n_observations",
    "preconditioner", "tau", "loss", "seed", "wall_seconds",
)
ROW_COLUMNS = (
    "iteration", "objective", "cg_iterations",
    "linear_setup_seconds", "linear_solve_seconds", "trust_radius", "accepted",
)
TRAILER_KEYS = ("termination", "success")


class MetricsSchemaError(ValueError):
    """A metrics file whose columns or keys do not match the schema."""


@dataclass
class Row:
    iteration: int
    objective: float
    cg_iterations: int
    linear_setup_seconds: float
    linear_solve_seconds: float
    trust_radius: float
    accepted: bool


@dataclass
class Run:
    problem: str
    n_cameras: int
    n_points: int
    n_observations: int
    preconditioner: str
    tau: float
    loss: str
    seed: int
    wall_seconds: float
    rows: list[Row]
    termination: str
    success: bool

    @property
    def linear_seconds(self) -> float:
        return sum(r.linear_setup_seconds + r.linear_solve_seconds for r in self.rows)

    @property
    def seconds_per_camera(self) -> float:
        return self.linear_seconds / self.n_cameras


def _parse_bool(text: str, where: str) -> bool:
    if text == "true":
        return True
    if text == "false":
        return False
    raise MetricsSchemaError(f"{where}: expected true/false, got {text!r}")


def parse_metrics(text: str, source: str = "<metrics>") -> Run:
    meta: dict[str, str] = {}
    rows: list[Row] = []
    saw_columns = False
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value
            continue
        cells = line.split(",")
        if not saw_columns:
            got = tuple(cells)
            if got != ROW_COLUMNS:
                missing = [c for c in ROW_COLUMNS if c not in got]
                extra = [c for c in got if c not in ROW_COLUMNS]
                parts = []
                if missing:
                    parts.append(f"missing column(s) {', '.join(missing)}")
                if extra:
                    parts.append(f"unexpected column(s) {', '.join(extra)}")
                if not parts:  # right names, wrong order
                    parts.append(f"column order {got} != {ROW_COLUMNS}")
                raise MetricsSchemaError(f"{source}: {'; '.join(parts)}")
            saw_columns = True
            continue
        if len(cells) != len(ROW_COLUMNS):
            raise MetricsSchemaError(
                f"{source}: row has {len(cells)} cells, expected {len(ROW_COLUMNS)}"
            )
        rows.append(Row(
            iteration=int(cells[0]),
            objective=float(cells[1]),
            cg_iterations=int(cells[2]),
            linear_setup_seconds=float(cells[3]),
            linear_solve_seconds=float(cells[4]),
            trust_radius=float(cells[5]),
            accepted=_parse_bool(cells[6], f"{source}: accepted"),
        ))
    if not saw_columns:
        raise MetricsSchemaError(f"{source}: no column header row")
    if not rows:
        raise MetricsSchemaError(f"{source}: no iteration rows")
    for key in HEADER_KEYS + TRAILER_KEYS:
        if key not in meta:
            raise MetricsSchemaError(f"{source}: missing metadata key {key!r}")
    return Run(
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
        termination=meta["termination"],
        success=_parse_bool(meta["success"], f"{source}: success"),
    )


def load_metrics(paths: list[str]) -> list[Run]:
    return [
        parse_metrics(pathlib.Path(p).read_text(), source=str(p)) for p in paths
    ]
