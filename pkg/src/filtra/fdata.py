"""Discretized functional data: grids, quadrature, standardization, bases.

Curves live on a shared grid over [0, 1] and are stored as plain numpy
vectors; inner products use composite trapezoid weights. All containers are
immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneratePredictorError, DimensionError, SchemaError

__all__ = [
    "Grid",
    "CurveSet",
    "ResponseVector",
    "Standardization",
    "inner_product",
    "l2_norm",
    "standardize_curves",
    "center_response",
    "fourier_basis",
    "read_curves_csv",
    "read_response_csv",
    "write_curves_csv",
    "write_response_csv",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    a.setflags(write=False)
    return a


def _trapezoid_weights(points: np.ndarray) -> np.ndarray:
    w = np.empty_like(points)
    w[0] = (points[1] - points[0]) / 2.0
    w[-1] = (points[-1] - points[-2]) / 2.0
    w[1:-1] = (points[2:] - points[:-2]) / 2.0
    return w


@dataclass(frozen=True)
class Grid:
    """Strictly increasing sample points on [0, 1] with quadrature weights."""

    points: np.ndarray
    weights: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 8:
            raise ValueError("grid needs at least 8 points")
        if not np.all(np.diff(pts) > 0):
            raise ValueError("grid points must be strictly increasing")
        if pts[0] != 0.0 or pts[-1] != 1.0:
            raise ValueError("grid must start at 0 and end at 1")
        w = self.weights
        w = _trapezoid_weights(pts) if w is None else np.asarray(w, dtype=float)
        if w.shape != pts.shape:
            raise ValueError("weights length must match points length")
        if not np.all(w > 0):
            raise ValueError("all quadrature weights must be positive")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "weights", _frozen(w))

    @classmethod
    def uniform(cls, size: int = 101) -> "Grid":
        return cls(np.linspace(0.0, 1.0, size))

    def __len__(self) -> int:
        return self.points.size

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Grid)
            and self.points.shape == other.points.shape
            and bool(np.array_equal(self.points, other.points))
        )

    def __hash__(self) -> int:
        return hash((self.points.size, float(self.points[1])))


def inner_product(f: np.ndarray, g: np.ndarray, grid: Grid) -> float:
    """Quadrature inner product sum_k w_k f_k g_k."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape[-1] != len(grid) or g.shape[-1] != len(grid):
        raise DimensionError(
            f"curve length mismatch: {f.shape[-1]} / {g.shape[-1]} vs grid {len(grid)}"
        )
    return float(np.dot(f * grid.weights, g))


def l2_norm(f: np.ndarray, grid: Grid) -> float:
    return float(np.sqrt(max(inner_product(f, f, grid), 0.0)))


@dataclass(frozen=True)
class CurveSet:
    """N x p curves over one shared grid, stored as an (N, p, G) array."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3:
            raise DimensionError("CurveSet values must have shape (n_samples, n_predictors, grid)")
        if v.shape[2] != len(self.grid):
            raise DimensionError(f"curve length {v.shape[2]} does not match grid {len(self.grid)}")
        if v.shape[0] < 2 or v.shape[1] < 1:
            raise ValueError("need at least 2 samples and 1 predictor")
        if not np.all(np.isfinite(v)):
            raise ValueError("curve values must be finite")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_predictors(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ResponseVector:
    """Centered responses plus the constant that was subtracted."""

    values: np.ndarray
    mean: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size < 2:
            raise ValueError("response must be a vector of length >= 2")
        if not np.all(np.isfinite(v)):
            raise ValueError("response values must be finite")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "mean", float(self.mean))


def center_response(y) -> ResponseVector:
    """Subtract the sample mean and remember it."""
    y = np.asarray(y, dtype=float)
    m = float(y.mean())
    return ResponseVector(y - m, m)


@dataclass(frozen=True)
class Standardization:
    """Per-predictor mean curves and scale constants fitted on training data."""

    grid: Grid
    mean_curves: np.ndarray  # (p, G)
    scales: np.ndarray  # (p,)

    def __post_init__(self):
        object.__setattr__(self, "mean_curves", _frozen(self.mean_curves))
        object.__setattr__(self, "scales", _frozen(self.scales))

    @classmethod
    def fit(cls, x: CurveSet) -> "Standardization":
        v = x.values
        mean_curves = v.mean(axis=0)  # (p, G)
        centered = v - mean_curves[None, :, :]
        # mean squared L2 norm per predictor
        sq = np.einsum("npg,g->np", centered * centered, x.grid.weights)
        msq = sq.mean(axis=0)
        level = np.einsum("npg,g->np", v * v, x.grid.weights).mean(axis=0)
        for j in range(x.n_predictors):
            if msq[j] <= 1e-20 * max(1.0, level[j]):
                raise DegeneratePredictorError(j + 1)
        return cls(x.grid, mean_curves, np.sqrt(msq))

    def apply(self, x: CurveSet) -> CurveSet:
        if x.grid != self.grid or x.n_predictors != self.mean_curves.shape[0]:
            raise DimensionError("curve set does not match the fitted standardization")
        out = (x.values - self.mean_curves[None, :, :]) / self.scales[None, :, None]
        return CurveSet(self.grid, out)


def standardize_curves(x: CurveSet) -> CurveSet:
    """Center each predictor's curves and scale to unit mean squared L2 norm."""
    return Standardization.fit(x).apply(x)


def fourier_basis(d: int, grid: Grid) -> np.ndarray:
    """d-th element of the orthonormal Fourier system on [0, 1] (1-based)."""
    if d < 1:
        raise ValueError("basis index must be >= 1")
    t = grid.points
    if d == 1:
        return np.ones_like(t)
    k = d // 2
    if d % 2 == 0:
        return np.sqrt(2.0) * np.sin(2.0 * np.pi * k * t)
    return np.sqrt(2.0) * np.cos(2.0 * np.pi * k * t)


# ---------------------------------------------------------------------------
# CSV ingestion / emission
#
# Long-format curve file: header sample_id,predictor_id,t,value. Every
# (sample, predictor) pair must carry the same t set; curves are mapped
# affinely onto [0, 1] and linearly resampled onto the target grid.
# ---------------------------------------------------------------------------


def _sort_key(identifier: str):
    try:
        return (0, float(identifier), identifier)
    except ValueError:
        return (1, 0.0, identifier)


def read_curves_csv(path, grid: Grid | None = None, grid_size: int = 101):
    """Read a long-format curve CSV. Returns (sample_ids, CurveSet)."""
    series: dict[tuple[str, str], list[tuple[float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["sample_id", "predictor_id", "t", "value"]:
            raise SchemaError(f"{path}: expected header sample_id,predictor_id,t,value")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise SchemaError(f"{path}:{lineno}: expected 4 fields, found {len(row)}")
            sid, pid, t_raw, v_raw = row
            try:
                t, v = float(t_raw), float(v_raw)
            except ValueError:
                raise SchemaError(f"{path}:{lineno}: non-numeric t or value") from None
            series.setdefault((sid, pid), []).append((t, v))
    if not series:
        raise SchemaError(f"{path}: no data rows")

    sample_ids = sorted({sid for sid, _ in series}, key=_sort_key)
    predictor_ids = sorted({pid for _, pid in series}, key=_sort_key)

    t_ref: np.ndarray | None = None
    for sid in sample_ids:
        for pid in predictor_ids:
            if (sid, pid) not in series:
                raise SchemaError(f"{path}: missing curve for sample {sid!r}, predictor {pid!r}")
            pts = sorted(series[(sid, pid)])
            ts = np.array([t for t, _ in pts])
            if t_ref is None:
                if ts.size < 2 or np.any(np.diff(ts) <= 0):
                    raise SchemaError(f"{path}: duplicate or unordered t for sample {sid!r}")
                t_ref = ts
            elif ts.shape != t_ref.shape or not np.allclose(ts, t_ref, rtol=0, atol=1e-12):
                raise SchemaError(
                    f"{path}: t set for sample {sid!r}, predictor {pid!r} differs from the first curve"
                )

    assert t_ref is not None
    span = t_ref[-1] - t_ref[0]
    t01 = (t_ref - t_ref[0]) / span
    if grid is None:
        grid = Grid.uniform(grid_size)

    values = np.empty((len(sample_ids), len(predictor_ids), len(grid)))
    for i, sid in enumerate(sample_ids):
        for j, pid in enumerate(predictor_ids):
            pts = sorted(series[(sid, pid)])
            vs = np.array([v for _, v in pts])
            values[i, j] = np.interp(grid.points, t01, vs)
    return sample_ids, CurveSet(grid, values)


def read_response_csv(path):
    """Read a response CSV with header sample_id,y. Returns (sample_ids, values)."""
    ids: list[str] = []
    ys: list[float] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["sample_id", "y"]:
            raise SchemaError(f"{path}: expected header sample_id,y")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise SchemaError(f"{path}:{lineno}: expected 2 fields, found {len(row)}")
            try:
                ys.append(float(row[1]))
            except ValueError:
                raise SchemaError(f"{path}:{lineno}: non-numeric response") from None
            ids.append(row[0])
    if len(ids) != len(set(ids)):
        raise SchemaError(f"{path}: duplicate sample_id")
    return ids, np.array(ys)


def write_curves_csv(path, sample_ids, curves: CurveSet) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "predictor_id", "t", "value"])
        for i, sid in enumerate(sample_ids):
            for j in range(curves.n_predictors):
                for t, v in zip(curves.grid.points, curves.values[i, j]):
                    writer.writerow([sid, j + 1, repr(float(t)), repr(float(v))])


def write_response_csv(path, sample_ids, values) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "y"])
        for sid, v in zip(sample_ids, values):
            writer.writerow([sid, repr(float(v))])
