"""Functional data containers and basic functional operations.

Every curve in a :class:`FunctionalSample` is observed on one shared,
strictly increasing :class:`Grid`.  Elastic computations (derivatives,
SRSFs, integrals) are carried out on the affine rescaling of the grid to
``[0, 1]``; values are always reported on the original grid points.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import InvalidInputError, NumericError

__all__ = [
    "Grid",
    "FunctionalDatum",
    "FunctionalSample",
    "SrsfDatum",
    "as_datum",
    "srsf_transform",
    "srsf_inverse",
    "srsf_values",
    "cross_sectional_mean",
    "cross_sectional_sd",
    "linear_resample",
    "fourier_basis",
    "fourier_smooth",
    "trapz",
    "inner_product",
    "l2_norm",
]


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Grid:
    """Strictly increasing domain points ``t_0 < t_1 < ... < t_M``."""

    points: np.ndarray

    def __post_init__(self):
        pts = _frozen(self.points)
        if pts.ndim != 1 or pts.size < 3:
            raise InvalidInputError("a grid needs at least 3 points")
        if not np.all(np.isfinite(pts)):
            raise InvalidInputError("grid points must be finite")
        if np.any(np.diff(pts) <= 0):
            raise InvalidInputError("grid points must be strictly increasing")
        object.__setattr__(self, "points", pts)
        unit = (pts - pts[0]) / (pts[-1] - pts[0])
        unit[0], unit[-1] = 0.0, 1.0
        unit.setflags(write=False)
        object.__setattr__(self, "_unit", unit)

    @classmethod
    def uniform(cls, start: float, stop: float, num: int) -> "Grid":
        return cls(np.linspace(start, stop, num))

    @property
    def normalized(self) -> np.ndarray:
        """The grid mapped affinely onto ``[0, 1]``."""
        return self._unit

    @property
    def is_uniform(self) -> bool:
        d = np.diff(self._unit)
        return bool(np.allclose(d, d[0], rtol=1e-9, atol=1e-12))

    @property
    def start(self) -> float:
        return float(self.points[0])

    @property
    def stop(self) -> float:
        return float(self.points[-1])

    def __len__(self) -> int:
        return self.points.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, Grid):
            return NotImplemented
        return self.points.shape == other.points.shape and bool(
            np.array_equal(self.points, other.points)
        )

    def __hash__(self) -> int:
        return hash(self.points.tobytes())

    def __repr__(self) -> str:
        return f"Grid([{self.start:g}, {self.stop:g}], n={len(self)})"


def _check_values(grid: Grid, values, what: str) -> np.ndarray:
    vals = _frozen(values)
    if vals.shape != (len(grid),):
        raise InvalidInputError(
            f"{what} has {vals.size} values but the grid has {len(grid)} points"
        )
    if not np.all(np.isfinite(vals)):
        raise InvalidInputError(f"{what} contains non-finite values")
    return vals


@dataclass(frozen=True, eq=False)
class FunctionalDatum:
    """One curve observed on a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _check_values(self.grid, self.values, "curve"))

    def __len__(self) -> int:
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


@dataclass(frozen=True, eq=False)
class SrsfDatum:
    """Square-root slope function values ``q(t_j)`` on a grid.

    The slope is taken with respect to the normalized ``[0, 1]`` domain.
    """

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _check_values(self.grid, self.values, "SRSF"))

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True, eq=False)
class FunctionalSample:
    """``n`` curves sharing one grid, stored as an ``n x (M+1)`` matrix."""

    grid: Grid
    matrix: np.ndarray

    def __post_init__(self):
        mat = _frozen(self.matrix)
        if mat.ndim == 1:
            mat = _frozen(mat[None, :])
        if mat.ndim != 2 or mat.shape[0] < 1:
            raise InvalidInputError("a functional sample needs at least one curve")
        if mat.shape[1] != len(self.grid):
            raise InvalidInputError(
                f"curves have {mat.shape[1]} values but the grid has {len(self.grid)} points"
            )
        bad = np.flatnonzero(~np.all(np.isfinite(mat), axis=1))
        if bad.size:
            raise InvalidInputError(f"curve {int(bad[0])} contains non-finite values")
        object.__setattr__(self, "matrix", mat)

    @classmethod
    def from_data(cls, data: Sequence[FunctionalDatum]) -> "FunctionalSample":
        if not data:
            raise InvalidInputError("a functional sample needs at least one curve")
        grid = data[0].grid
        for f in data[1:]:
            if f.grid != grid:
                raise InvalidInputError("all curves must share one grid")
        return cls(grid, np.vstack([f.values for f in data]))

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def __len__(self) -> int:
        return self.matrix.shape[0]

    def __getitem__(self, i: int) -> FunctionalDatum:
        return FunctionalDatum(self.grid, self.matrix[i])

    def __iter__(self):
        for i in range(self.n):
            yield self[i]

    def subset(self, indices) -> "FunctionalSample":
        idx = np.asarray(indices, dtype=int)
        return FunctionalSample(self.grid, self.matrix[idx])

    def map_rows(self, fn) -> "FunctionalSample":
        return FunctionalSample(self.grid, np.vstack([fn(row) for row in self.matrix]))


def as_datum(f, grid: Grid | None = None) -> FunctionalDatum:
    """Coerce ``f`` (a datum or a raw array plus grid) into a FunctionalDatum."""
    if isinstance(f, FunctionalDatum):
        if grid is not None and f.grid != grid:
            raise InvalidInputError("curve is not on the expected grid")
        return f
    if grid is None:
        raise InvalidInputError("raw arrays need an explicit grid")
    return FunctionalDatum(grid, f)


def trapz(y: np.ndarray, t: np.ndarray) -> float:
    """Trapezoidal integral of samples ``y`` over points ``t``."""
    y = np.asarray(y, dtype=float)
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(t)))


def inner_product(f, g, grid: Grid) -> float:
    """Trapezoidal L2 inner product on the normalized domain."""
    return trapz(np.asarray(f) * np.asarray(g), grid.normalized)


def l2_norm(f, grid: Grid) -> float:
    return float(np.sqrt(max(inner_product(f, f, grid), 0.0)))


def _derivative(values: np.ndarray, t: np.ndarray) -> np.ndarray:
    # central differences inside, second-order one-sided at the ends;
    # offsetting by the first value keeps constants exactly flat
    return np.gradient(values - values[0], t, edge_order=2)


def srsf_values(values: np.ndarray, t_unit: np.ndarray) -> np.ndarray:
    """Array-level SRSF on an already normalized grid."""
    df = _derivative(np.asarray(values, dtype=float), t_unit)
    if not np.all(np.isfinite(df)):
        raise InvalidInputError("derivative estimate is not finite")
    return np.sign(df) * np.sqrt(np.abs(df))


def srsf_transform(f: FunctionalDatum) -> SrsfDatum:
    """Square-root slope function ``q = sign(f') sqrt(|f'|)``."""
    return SrsfDatum(f.grid, srsf_values(f.values, f.grid.normalized))


def srsf_inverse(q: SrsfDatum, f0: float) -> FunctionalDatum:
    """Rebuild ``f(t) = f0 + int_0^t q|q| ds`` by cumulative trapezoid."""
    if not np.isfinite(f0):
        raise InvalidInputError("initial value must be finite")
    vals = q.values
    f = f0 + cumulative_trapezoid(vals * np.abs(vals), q.grid.normalized, initial=0.0)
    return FunctionalDatum(q.grid, f)


def _constant_columns(X: np.ndarray) -> np.ndarray:
    return np.all(X == X[0], axis=0)


def cross_sectional_mean(s: FunctionalSample) -> FunctionalDatum:
    """Pointwise mean; columns constant across curves keep their value exactly."""
    X = s.matrix
    return FunctionalDatum(s.grid, np.where(_constant_columns(X), X[0], X.mean(axis=0)))


def cross_sectional_sd(s: FunctionalSample) -> FunctionalDatum:
    """Pointwise sample standard deviation (divisor ``n - 1``); exactly 0 on constant columns."""
    if s.n < 2:
        raise InvalidInputError("standard deviation needs at least two curves")
    X = s.matrix
    return FunctionalDatum(s.grid, np.where(_constant_columns(X), 0.0, X.std(axis=0, ddof=1)))


def linear_resample(f: FunctionalDatum, new_grid: Grid) -> FunctionalDatum:
    """Piecewise-linear interpolation of ``f`` onto ``new_grid``."""
    src = f.grid.points
    if new_grid.start < src[0] or new_grid.stop > src[-1]:
        raise InvalidInputError(
            f"cannot extrapolate: target [{new_grid.start:g}, {new_grid.stop:g}] "
            f"leaves source domain [{src[0]:g}, {src[-1]:g}]"
        )
    return FunctionalDatum(new_grid, np.interp(new_grid.points, src, f.values))


def fourier_basis(grid: Grid, n_basis: int) -> np.ndarray:
    """Design matrix ``(M+1) x n_basis``: 1, sin(2 pi k t), cos(2 pi k t), ..."""
    if n_basis < 1 or n_basis % 2 == 0:
        raise InvalidInputError("n_basis must be a positive odd number")
    if n_basis > len(grid):
        raise InvalidInputError("n_basis cannot exceed the number of grid points")
    t = grid.normalized
    cols = [np.ones_like(t)]
    for k in range(1, (n_basis - 1) // 2 + 1):
        cols.append(np.sin(2 * np.pi * k * t))
        cols.append(np.cos(2 * np.pi * k * t))
    return np.column_stack(cols)


def fourier_smooth(s: FunctionalSample, n_basis: int, ridge: float = 1e-10) -> FunctionalSample:
    """Least-squares projection of each curve onto a Fourier basis."""
    B = fourier_basis(s.grid, n_basis)
    gram = B.T @ B
    if np.linalg.cond(gram) > 1e12:
        raise NumericError(f"Fourier design with {n_basis} functions is ill-conditioned")
    coef = np.linalg.solve(gram + ridge * np.eye(n_basis), B.T @ s.matrix.T)
    return FunctionalSample(s.grid, (B @ coef).T)
