# services/reports.py
"""
CSV persistence. Floats are written with repr so files round-trip
bit-exactly and identical runs produce identical bytes.
"""
import csv
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Union

import numpy as np

from services.errors import PreconditionError
from services.genvec import GenericVectorSet
from services.lipfun import GridFunction, GridSpec

# The second column states the property a row checks.
REPORT_HEADER = ["check_id", "paper_ref", "value", "threshold", "pass"]
_UNIFORM_TOL = 1e-9

PathLike = Union[str, os.PathLike]


def _ensure_parent(path: Path) -> None:
    if not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)


def _fmt(v) -> str:
    return repr(float(v))


# ---------- Report rows ----------
@dataclass(frozen=True)
class ReportRow:
    check_id: str
    property: str
    value: float
    threshold: float
    passed: bool

    def as_csv(self) -> List[str]:
        return [self.check_id, self.property, _fmt(self.value), _fmt(self.threshold), "true" if self.passed else "false"]


def at_most(check_id: str, prop: str, value: float, threshold: float) -> ReportRow:
    return ReportRow(check_id, prop, float(value), float(threshold), bool(value <= threshold))


def below(check_id: str, prop: str, value: float, threshold: float) -> ReportRow:
    return ReportRow(check_id, prop, float(value), float(threshold), bool(value < threshold))


def above(check_id: str, prop: str, value: float, threshold: float) -> ReportRow:
    return ReportRow(check_id, prop, float(value), float(threshold), bool(value > threshold))


def write_report(path: PathLike, rows: Iterable[ReportRow]) -> Path:
    p = Path(path)
    _ensure_parent(p)
    with open(p, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for row in rows:
            w.writerow(row.as_csv())
    return p


def read_report(path: PathLike) -> List[ReportRow]:
    with open(path, encoding="utf-8", newline="") as f:
        r = csv.reader(f)
        header = next(r, None)
        if header != REPORT_HEADER:
            raise PreconditionError(f"not a report CSV: {path}")
        return [ReportRow(c, p, float(v), float(t), s == "true") for c, p, v, t, s in r]


# ---------- Grid functions ----------
def write_grid_function(path: PathLike, f: GridFunction) -> Path:
    """Header index,coord_1..coord_k,value; rows in row-major grid order."""
    p = Path(path)
    _ensure_parent(p)
    pts = f.grid.points()
    with open(p, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index"] + [f"coord_{i + 1}" for i in range(f.grid.k)] + ["value"])
        for i, (pt, v) in enumerate(zip(pts, f.values)):
            w.writerow([str(i)] + [_fmt(c) for c in pt] + [_fmt(v)])
    return p


def is_grid_csv(path: PathLike) -> bool:
    try:
        with open(path, encoding="utf-8", newline="") as f:
            header = next(csv.reader(f), [])
    except (OSError, UnicodeDecodeError):
        return False
    return len(header) >= 3 and header[0] == "index" and header[-1] == "value"


def read_grid_function(path: PathLike, tau: float = 1.0, slack: float = 0.0) -> GridFunction:
    """
    Rebuild a GridFunction from its CSV. Rejects files whose coordinates
    are not a uniform rectangular grid in row-major order.
    """
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"Grid function file not found: {p}")
    with open(p, encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    if not rows or not is_grid_csv(p):
        raise PreconditionError(f"malformed grid CSV header in {p}")
    k = len(rows[0]) - 2
    try:
        data = np.array([[float(c) for c in row[1:]] for row in rows[1:]], dtype=float)
    except ValueError as e:
        raise PreconditionError(f"malformed grid CSV {p}: {e}")
    if data.ndim != 2 or data.shape[1] != k + 1 or data.shape[0] < 2:
        raise PreconditionError(f"malformed grid CSV {p}: ragged or empty rows")
    coords, values = data[:, :k], data[:, k]
    if not np.all(np.isfinite(coords)):
        raise PreconditionError(f"non-finite coordinates in {p}")
    axes = [np.unique(coords[:, i]) for i in range(k)]
    grid = GridSpec(k, tuple(a[0] for a in axes), tuple(a[-1] - a[0] for a in axes), tuple(len(a) for a in axes))
    if grid.count != coords.shape[0]:
        raise PreconditionError(f"non-rectangular grid in {p}")
    scale = max(1.0, float(np.max(np.abs(coords))))
    if float(np.max(np.abs(grid.points() - coords))) > _UNIFORM_TOL * scale:
        raise PreconditionError(f"non-uniform grid in {p}")
    return GridFunction(grid, values, tau, slack)


# ---------- Vector sets and plot data ----------
def write_vector_set(path: PathLike, uset: GenericVectorSet) -> List[Path]:
    """One row per vector (m,u_1..u_N) plus a key,value certificate sidecar."""
    p = Path(path)
    _ensure_parent(p)
    with open(p, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["m"] + [f"u_{i + 1}" for i in range(uset.N)])
        for m, u in enumerate(uset.vectors, start=1):
            w.writerow([str(m)] + [_fmt(v) for v in u])
    side = p.with_name(p.stem + "_certificates.csv")
    meta: Dict[str, float] = dict(uset.certificates)
    meta.update({"eta": uset.eta, "seed": uset.seed, "attempts": uset.attempts})
    with open(side, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["key", "value"])
        for key in sorted(meta):
            w.writerow([key, _fmt(meta[key])])
    return [p, side]


def write_series(path: PathLike, xs: Sequence[float], ys: Sequence[float]) -> Path:
    p = Path(path)
    _ensure_parent(p)
    with open(p, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["x", "y"])
        for x, y in zip(xs, ys):
            w.writerow([_fmt(x), _fmt(y)])
    return p


def read_series(path: PathLike):
    with open(path, encoding="utf-8", newline="") as f:
        r = csv.reader(f)
        header = next(r, None)
        if header != ["x", "y"]:
            raise PreconditionError(f"not a plot-data CSV: {path}")
        pts = [(float(a), float(b)) for a, b in r]
    return np.array([a for a, _ in pts]), np.array([b for _, b in pts])
