"""Discretized curves on a shared abscissa grid.

All L2 geometry (inner products, norms, distances) is computed with
trapezoidal quadrature weights attached to the grid.  Curves and samples
are immutable once built.
"""

import csv
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import DataError, GridMismatchError, InsufficientSampleError


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


def trapezoid_weights(points):
    """Trapezoidal quadrature weights for an increasing abscissa vector."""
    points = np.asarray(points, dtype=float)
    gaps = np.diff(points)
    w = np.zeros_like(points)
    w[:-1] += gaps / 2
    w[1:] += gaps / 2
    return w


@dataclass(frozen=True, eq=False)
class Grid:
    """Abscissa points s_1 < ... < s_S together with their quadrature weights."""

    points: np.ndarray
    quad_weights: Optional[np.ndarray] = None

    def __post_init__(self):
        points = np.array(self.points, dtype=float)
        if points.ndim != 1 or points.size < 2:
            raise DataError("a grid needs at least two abscissa points")
        if not np.all(np.isfinite(points)):
            raise DataError("grid points must be finite")
        if not np.all(np.diff(points) > 0):
            raise DataError("grid points must be strictly increasing")
        if self.quad_weights is None:
            weights = trapezoid_weights(points)
        else:
            weights = np.array(self.quad_weights, dtype=float)
            if weights.shape != points.shape:
                raise DataError("quad_weights must match the grid length")
            length = points[-1] - points[0]
            if abs(weights.sum() - length) > 1e-12 * max(1.0, abs(length)):
                raise DataError("quad_weights must sum to the domain length")
        if np.any(weights <= 0):
            raise DataError("quadrature weights must be strictly positive")
        object.__setattr__(self, "points", _frozen(points))
        object.__setattr__(self, "quad_weights", _frozen(weights))

    @classmethod
    def uniform(cls, size, start=0.0, stop=1.0):
        return cls(np.linspace(start, stop, size))

    @property
    def size(self):
        return self.points.size

    @property
    def domain(self) -> Tuple[float, float]:
        return float(self.points[0]), float(self.points[-1])

    def same_as(self, other):
        if self is other:
            return True
        return isinstance(other, Grid) and np.array_equal(self.points, other.points)

    def __len__(self):
        return self.size

    def __repr__(self):
        a, b = self.domain
        return f"Grid(S={self.size}, domain=[{a:g}, {b:g}])"


def _check_grids(a, b):
    if not a.same_as(b):
        raise GridMismatchError(f"grid mismatch: {a!r} vs {b!r}")


@dataclass(frozen=True, eq=False)
class Curve:
    """A function sampled on a :class:`Grid`."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.size,):
            raise DataError(
                f"curve has {values.size} values but the grid has {self.grid.size} points"
            )
        if not np.all(np.isfinite(values)):
            raise DataError("curve values must be finite")
        object.__setattr__(self, "values", _frozen(values))

    @classmethod
    def from_function(cls, grid, func):
        return cls(grid, func(grid.points))

    @classmethod
    def constant(cls, grid, value):
        return cls(grid, np.full(grid.size, float(value)))

    def _binary(self, other, op):
        if isinstance(other, Curve):
            _check_grids(self.grid, other.grid)
            return Curve(self.grid, op(self.values, other.values))
        return Curve(self.grid, op(self.values, float(other)))

    def __add__(self, other):
        return self._binary(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __rsub__(self, other):
        return Curve(self.grid, float(other) - self.values)

    def __mul__(self, scalar):
        return Curve(self.grid, self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return Curve(self.grid, -self.values)

    def __repr__(self):
        return f"Curve(S={self.grid.size})"


@dataclass(frozen=True, eq=False)
class CurveSample:
    """n curves sharing one grid, stored row-wise in ``values`` (n x S)."""

    grid: Grid
    values: np.ndarray
    ids: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[None, :]
        if values.ndim != 2 or values.shape[1] != self.grid.size:
            raise DataError("sample values must be an (n, S) array matching the grid")
        if values.shape[0] < 1:
            raise InsufficientSampleError("a curve sample needs at least one curve")
        if not np.all(np.isfinite(values)):
            raise DataError("sample values must be finite")
        ids = self.ids
        if ids is not None:
            ids = tuple(str(i) for i in ids)
            if len(ids) != values.shape[0]:
                raise DataError("ids must have one entry per curve")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "ids", ids)

    @classmethod
    def from_curves(cls, curves: Sequence[Curve], ids=None):
        curves = list(curves)
        if not curves:
            raise InsufficientSampleError("a curve sample needs at least one curve")
        grid = curves[0].grid
        for c in curves[1:]:
            _check_grids(grid, c.grid)
        return cls(grid, np.stack([c.values for c in curves]), ids)

    @property
    def n(self):
        return self.values.shape[0]

    def __len__(self):
        return self.n

    def __getitem__(self, i):
        return Curve(self.grid, self.values[i])

    def __iter__(self):
        for i in range(self.n):
            yield self[i]

    @property
    def curves(self):
        return list(self)

    def subset(self, indices):
        indices = np.asarray(indices, dtype=int)
        ids = None if self.ids is None else tuple(self.ids[i] for i in indices)
        return CurveSample(self.grid, self.values[indices], ids)

    def without(self, index):
        keep = np.arange(self.n) != index
        return self.subset(np.flatnonzero(keep))

    def __repr__(self):
        return f"CurveSample(n={self.n}, S={self.grid.size})"


def inner_product(f: Curve, g: Curve) -> float:
    _check_grids(f.grid, g.grid)
    return float(np.sum(f.grid.quad_weights * (f.values * g.values)))


def l2_norm(f: Curve) -> float:
    return float(np.sqrt(np.sum(f.grid.quad_weights * (f.values * f.values))))


def integrate(f: Curve) -> float:
    return float(np.sum(f.grid.quad_weights * f.values))


def _sq_dist_rows(diff, weights):
    # same reduction for a single row and for stacked rows -> identical bits
    return np.sum(weights * (diff * diff), axis=-1)


def l2_distance(f: Curve, g: Curve) -> float:
    _check_grids(f.grid, g.grid)
    return float(np.sqrt(_sq_dist_rows(f.values - g.values, f.grid.quad_weights)))


def distance_matrix(sample: CurveSample, x0: Curve) -> np.ndarray:
    """L2 distances from ``x0`` to every curve of ``sample`` (length n)."""
    _check_grids(sample.grid, x0.grid)
    return np.sqrt(_sq_dist_rows(sample.values - x0.values, sample.grid.quad_weights))


def cross_distances(left: CurveSample, right: CurveSample) -> np.ndarray:
    """Matrix of L2 distances, rows indexed by ``left`` and columns by ``right``."""
    _check_grids(left.grid, right.grid)
    w = left.grid.quad_weights
    out = np.empty((left.n, right.n))
    for i in range(left.n):
        out[i] = np.sqrt(_sq_dist_rows(right.values - left.values[i], w))
    return out


def pairwise_distances(sample: CurveSample) -> np.ndarray:
    # (a - b)**2 == (b - a)**2 bitwise, so the result is exactly symmetric
    return cross_distances(sample, sample)


# --------------------------------------------------------------------- CSV I/O


def _parse_float(text, row, col, path):
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"{path}: row {row}, column {col}: not a number: {text!r}") from None
    if not np.isfinite(value):
        raise DataError(f"{path}: row {row}, column {col}: non-finite value {text!r}")
    return value


def read_curves_csv(path) -> CurveSample:
    """Read ``id,s_1,...,s_S`` header plus one ``id,v_1,...,v_S`` row per curve."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) < 2:
        raise DataError(f"{path}: expected a header and at least one curve row")
    header = rows[0]
    if len(header) < 3 or header[0].strip().lower() != "id":
        raise DataError(f"{path}: header must read id,s_1,...,s_S with S >= 2")
    points = [_parse_float(t, 1, j + 2, path) for j, t in enumerate(header[1:])]
    grid = Grid(points)
    ids, values = [], []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r} has {len(row)} fields, expected {len(header)}")
        ids.append(row[0].strip())
        values.append([_parse_float(t, r, j + 2, path) for j, t in enumerate(row[1:])])
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicated curve ids")
    return CurveSample(grid, np.array(values), tuple(ids))


def read_responses_csv(path, ids=None) -> np.ndarray:
    """Read an ``id,y`` file; when ``ids`` is given, align responses to it."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or [c.strip().lower() for c in rows[0]] != ["id", "y"]:
        raise DataError(f"{path}: header must be id,y")
    table = {}
    order = []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != 2:
            raise DataError(f"{path}: row {r} has {len(row)} fields, expected 2")
        key = row[0].strip()
        if key in table:
            raise DataError(f"{path}: row {r}: duplicated id {key!r}")
        table[key] = _parse_float(row[1], r, 2, path)
        order.append(key)
    if ids is None:
        return np.array([table[k] for k in order])
    missing = [k for k in ids if k not in table]
    extra = set(table) - set(ids)
    if missing or extra:
        raise DataError(
            f"{path}: ids do not match the curve file "
            f"(missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]})"
        )
    return np.array([table[k] for k in ids])


def fmt(value):
    return format(float(value), ".17g")


def write_curves_csv(path, sample: CurveSample):
    ids = sample.ids or tuple(str(i + 1) for i in range(sample.n))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + [fmt(s) for s in sample.grid.points])
        for key, row in zip(ids, sample.values):
            w.writerow([key] + [fmt(v) for v in row])


def write_responses_csv(path, ids, responses):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "y"])
        for key, y in zip(ids, responses):
            w.writerow([key, fmt(y)])
