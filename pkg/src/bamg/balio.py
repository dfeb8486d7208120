"""Plain-text problem file I/O.

Layout: a header line ``n_cameras n_points n_observations``; one line per
observation ``camera point x y``; then nine lines per camera (rotation,
translation, focal, two distortion coefficients, one scalar per line) and
three lines per point.  Scalars are written with 17 significant digits so a
write/read round trip reproduces every float bit-exactly.
"""

from __future__ import annotations

import numpy as np

from .problem import BundleProblem


class BalFormatError(Exception):
    """Malformed problem file; carries the 1-based line number."""

    def __init__(self, lineno: int, message: str):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}")


def write_bal(path, problem: BundleProblem) -> None:
    with open(path, "w") as fh:
        fh.write(f"{problem.n_cameras} {problem.n_points} {problem.n_observations}\n")
        for c, p, (x, y) in zip(problem.cam_index, problem.pt_index, problem.pixels):
            fh.write(f"{c} {p} {x:.17g} {y:.17g}\n")
        for row in problem.camera_params:
            for v in row:
                fh.write(f"{v:.17g}\n")
        for row in problem.points:
            for v in row:
                fh.write(f"{v:.17g}\n")


def read_bal(path, loss: str = "trivial") -> BundleProblem:
    with open(path) as fh:
        lines = fh.read().splitlines()

    pos = 0

    def next_line(section: str) -> tuple[int, str]:
        nonlocal pos
        while pos < len(lines):
            text = lines[pos].strip()
            pos += 1
            if text:
                return pos, text
        raise BalFormatError(len(lines) + 1, f"file ends before {section}")

    lineno, header = next_line("header")
    parts = header.split()
    if len(parts) != 3:
        raise BalFormatError(lineno, f"header needs 3 counts, got {len(parts)}")
    try:
        n_cam, n_pt, n_obs = (int(p) for p in parts)
    except ValueError:
        raise BalFormatError(lineno, f"malformed header count in {header!r}") from None
    if n_cam < 0 or n_pt < 0 or n_obs < 0:
        raise BalFormatError(lineno, "counts must be nonnegative")

    cam_index = np.zeros(n_obs, dtype=np.int64)
    pt_index = np.zeros(n_obs, dtype=np.int64)
    pixels = np.zeros((n_obs, 2))
    for k in range(n_obs):
        lineno, text = next_line(f"observation {k}")
        parts = text.split()
        if len(parts) != 4:
            raise BalFormatError(lineno, f"observation needs 4 fields, got {len(parts)}")
        try:
            c, p = int(parts[0]), int(parts[1])
            x, y = float(parts[2]), float(parts[3])
        except ValueError:
            raise BalFormatError(lineno, f"malformed observation {text!r}") from None
        if not 0 <= c < n_cam:
            raise BalFormatError(lineno, f"camera index {c} out of range [0, {n_cam})")
        if not 0 <= p < n_pt:
            raise BalFormatError(lineno, f"point index {p} out of range [0, {n_pt})")
        cam_index[k], pt_index[k], pixels[k] = c, p, (x, y)

    def read_scalars(count: int, section: str) -> np.ndarray:
        out = np.zeros(count)
        for k in range(count):
            lineno, text = next_line(section)
            try:
                out[k] = float(text)
            except ValueError:
                raise BalFormatError(lineno, f"malformed float {text!r} in {section}") from None
        return out

    cams = read_scalars(n_cam * 9, "camera parameters").reshape(n_cam, 9)
    pts = read_scalars(n_pt * 3, "point coordinates").reshape(n_pt, 3)
    if pos < len(lines) and any(line.strip() for line in lines[pos:]):
        raise BalFormatError(pos + 1, "trailing content after point coordinates")
    return BundleProblem(cams, pts, cam_index, pt_index, pixels, loss)
