"""Elastic alignment, amplitude/phase distances and the Karcher mean.

Curves are compared through their square-root slope functions (SRSFs).
For SRSFs ``q1`` and ``q2`` the alignment problem is

    min over gamma of || q1 - (q2 o gamma) sqrt(gamma') ||

solved over a discrete lattice by dynamic programming (see :mod:`._dp`).
The optimal warp also gives the phase distance ``arccos(int sqrt(gamma'))``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _dp
from .errors import InvalidInputError
from .fda import (
    FunctionalDatum,
    FunctionalSample,
    Grid,
    SrsfDatum,
    srsf_inverse,
    srsf_transform,
    srsf_values,
    trapz,
)

__all__ = [
    "WarpingFunction",
    "PsiFunction",
    "AlignmentResult",
    "KarcherResult",
    "Aligner",
    "dp_align",
    "amplitude_distance",
    "phase_distance",
    "elastic_distances",
    "warp_srsf",
    "warp_distance",
    "apply_warp",
    "karcher_mean",
]

PSI_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class WarpingFunction:
    """Discretized boundary-preserving warp.

    ``values`` are ``gamma(u_j)`` on the normalized grid ``u = grid.normalized``
    and themselves live in ``[0, 1]``.
    """

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        g = np.array(self.values, dtype=float)
        if g.shape != (len(self.grid),):
            raise InvalidInputError("warp length does not match its grid")
        if not np.all(np.isfinite(g)):
            raise InvalidInputError("warp contains non-finite values")
        if g[0] != 0.0 or g[-1] != 1.0:
            raise InvalidInputError("a warp must satisfy gamma(0) = 0 and gamma(1) = 1")
        if np.any(np.diff(g) <= 0):
            raise InvalidInputError("a warp must be strictly increasing")
        g.setflags(write=False)
        object.__setattr__(self, "values", g)

    @classmethod
    def identity(cls, grid: Grid) -> "WarpingFunction":
        return cls(grid, grid.normalized)

    @classmethod
    def from_callable(cls, grid: Grid, fn) -> "WarpingFunction":
        g = np.asarray(fn(grid.normalized), dtype=float)
        g[0], g[-1] = 0.0, 1.0
        return cls(grid, g)

    def derivative(self) -> np.ndarray:
        return np.gradient(self.values, self.grid.normalized, edge_order=2)


@dataclass(frozen=True, eq=False)
class PsiFunction:
    """``psi = sqrt(gamma')`` rescaled to unit L2 norm, a point on the Hilbert sphere."""

    grid: Grid
    values: np.ndarray


@dataclass(frozen=True, eq=False)
class AlignmentResult:
    gamma: WarpingFunction
    aligned_srsf: SrsfDatum
    amplitude_cost: float


@dataclass(frozen=True, eq=False)
class KarcherResult:
    mean: FunctionalDatum
    mean_srsf: SrsfDatum
    warps: tuple
    aligned: FunctionalSample
    iterations: int
    converged: bool
    objective: tuple = ()
    template_index: int = -1


def _sqrt_slope(gamma: np.ndarray, u: np.ndarray) -> np.ndarray:
    dg = np.gradient(gamma, u, edge_order=2)
    return np.sqrt(np.maximum(dg, PSI_FLOOR))


def _psi(gamma: np.ndarray, u: np.ndarray) -> np.ndarray:
    # finite differences leave int psi^2 a little off 1; project back
    # onto the unit sphere where psi lives
    r = _sqrt_slope(gamma, u)
    return r / np.sqrt(trapz(r * r, u))


def _arccos_unit(x: float) -> float:
    return float(np.arccos(np.clip(x, -1.0, 1.0)))


class Aligner:
    """Reusable aligner of many SRSFs against one template SRSF.

    Holds the template's precomputed lattice samples; :meth:`align` takes a
    raw SRSF array on the same grid (or its :meth:`prepare` output) and
    returns ``(gamma, aligned, cost)``.
    """

    def __init__(self, grid: Grid, template_srsf: np.ndarray, max_step: int | None = None):
        self.grid = grid
        self.u = grid.normalized
        self.q1 = np.asarray(template_srsf, dtype=float)
        self.stencil = _stencil(max_step)
        self.uniform = grid.is_uniform
        if self.uniform:
            self._q1tab = self.stencil.table(self.q1, axis=0)

    def prepare(self, q2: np.ndarray):
        q2 = np.asarray(q2, dtype=float)
        tab = self.stencil.table(q2, axis=1) if self.uniform else None
        return q2, tab

    def warp(self, q2, table=None) -> tuple[np.ndarray, float]:
        """Optimal warp on the grid and the minimized lattice cost (squared)."""
        n = self.u.size
        if self.uniform:
            if table is None:
                table = self.stencil.table(q2, axis=1)
            xs, ys, e = _dp.dp_path_uniform(self._q1tab, table, n, self.stencil)
        else:
            xs, ys, e = _dp.dp_path_general(self.u, self.q1, q2, self.stencil)
        gamma = np.interp(self.u, self.u[xs], self.u[ys])
        gamma[0], gamma[-1] = 0.0, 1.0
        return gamma, e

    def align(self, q2):
        if isinstance(q2, tuple):
            q2, table = q2
        else:
            q2, table = np.asarray(q2, dtype=float), None
        gamma, e = self.warp(q2, table)
        aligned = np.interp(gamma, self.u, q2) * _sqrt_slope(gamma, self.u)
        # the lattice integral uses each segment's exact slope; re-integrating
        # q1 - aligned would pick up finite-difference error at the path's
        # kinks, which breaks the symmetry of d_a for nearby curves
        return gamma, aligned, float(np.sqrt(max(e, 0.0)))

    def distances(self, q2):
        """Amplitude and phase distance of ``q2`` to the template."""
        gamma, _, cost = self.align(q2)
        return cost, _arccos_unit(trapz(_psi(gamma, self.u), self.u))


_STENCILS: dict[int, _dp.Stencil] = {}


def _stencil(max_step: int | None) -> _dp.Stencil:
    k = _dp.DEFAULT_MAX_STEP if max_step is None else int(max_step)
    if k not in _STENCILS:
        _STENCILS[k] = _dp.Stencil(k)
    return _STENCILS[k]


def _check_same_grid(a, b):
    if a.grid != b.grid:
        raise InvalidInputError("inputs must share one grid")


def dp_align(q1: SrsfDatum, q2: SrsfDatum) -> AlignmentResult:
    """Find the warp ``gamma`` that best aligns ``q2`` to ``q1``."""
    _check_same_grid(q1, q2)
    gamma, aligned, cost = Aligner(q1.grid, q1.values).align(q2.values)
    return AlignmentResult(
        gamma=WarpingFunction(q1.grid, gamma),
        aligned_srsf=SrsfDatum(q1.grid, aligned),
        amplitude_cost=cost,
    )


def amplitude_distance(f1: FunctionalDatum, f2: FunctionalDatum) -> float:
    _check_same_grid(f1, f2)
    return dp_align(srsf_transform(f1), srsf_transform(f2)).amplitude_cost


def elastic_distances(f1: FunctionalDatum, f2: FunctionalDatum) -> tuple[float, float]:
    """``(d_a, d_p)`` from a single alignment of ``f2`` to ``f1``."""
    _check_same_grid(f1, f2)
    u = f1.grid.normalized
    aligner = Aligner(f1.grid, srsf_values(f1.values, u))
    return aligner.distances(srsf_values(f2.values, u))


def phase_distance(f1: FunctionalDatum, f2: FunctionalDatum) -> float:
    return elastic_distances(f1, f2)[1]


def warp_srsf(g: WarpingFunction) -> PsiFunction:
    return PsiFunction(g.grid, _psi(g.values, g.grid.normalized))


def warp_distance(g1: WarpingFunction, g2: WarpingFunction | None = None) -> float:
    """Arc length between two warps on the Hilbert sphere (identity if omitted)."""
    u = g1.grid.normalized
    psi1 = _psi(g1.values, u)
    psi2 = np.ones_like(u) if g2 is None else _psi(g2.values, u)
    return _arccos_unit(trapz(psi1 * psi2, u))


def apply_warp(f: FunctionalDatum, g: WarpingFunction) -> FunctionalDatum:
    """``f o gamma`` by linear interpolation."""
    _check_same_grid(f, g)
    return FunctionalDatum(f.grid, np.interp(g.values, f.grid.normalized, f.values))


def _template_index(Q: np.ndarray, u: np.ndarray) -> int:
    # sample curve with smallest total unaligned L2 SRSF distance to the rest
    w = np.zeros_like(u)
    du = np.diff(u)
    w[:-1] += du / 2
    w[1:] += du / 2
    sq = (Q * Q) @ w
    gram = (Q * w) @ Q.T
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2 * gram, 0.0)
    return int(np.argmin(np.sqrt(d2).sum(axis=1)))


def _sphere_mean(psis: np.ndarray, u: np.ndarray, tol: float = 1e-8, max_iter: int = 50) -> np.ndarray:
    # intrinsic mean on the unit L2 sphere by averaging log maps
    mu = psis.mean(axis=0)
    mu = mu / np.sqrt(trapz(mu * mu, u))
    for _ in range(max_iter):
        c = np.clip([trapz(mu * p, u) for p in psis], -1.0, 1.0)
        th = np.arccos(c)
        k = np.where(th > 1e-12, th / np.sin(np.maximum(th, 1e-12)), 1.0)
        v = np.mean(k[:, None] * (psis - c[:, None] * mu), axis=0)
        nv = float(np.sqrt(max(trapz(v * v, u), 0.0)))
        if nv < tol:
            break
        mu = np.cos(nv) * mu + np.sin(nv) * v / nv
        mu = mu / np.sqrt(trapz(mu * mu, u))
    return mu


def _mean_warp_inverse(gammas, u: np.ndarray) -> np.ndarray:
    """Inverse of the Karcher mean of ``gammas`` (taken on the psi sphere)."""
    mu = _sphere_mean(np.vstack([_psi(g, u) for g in gammas]), u)
    g = np.concatenate([[0.0], np.cumsum(0.5 * (mu[1:] ** 2 + mu[:-1] ** 2) * np.diff(u))])
    g = u[0] + (u[-1] - u[0]) * g / g[-1]
    return np.interp(u, g, u)


def karcher_mean(
    s: FunctionalSample,
    tol: float = 1e-4,
    max_iter: int = 20,
    max_step: int | None = None,
    center: bool = True,
) -> KarcherResult:
    """Elastic (Karcher) mean of a sample by the iterative template method.

    Each iteration aligns every SRSF to the current template and replaces
    the template by the mean of the aligned SRSFs.  Iteration stops once the
    relative change of ``sum_i d_a(mu, f_i)**2`` drops below ``tol``.  An
    iterate that would increase the objective (possible only through
    discretization) is rejected and the previous one returned.

    The template is only defined up to a warp.  With ``center`` (the
    default) it is moved so that the Karcher mean of the fitted warps is
    the identity; phase distances are then measured from the sample's own
    phase centre rather than from the starting curve's.
    """
    if s.n < 1:
        raise InvalidInputError("Karcher mean needs at least one curve")
    if max_iter < 1:
        raise InvalidInputError("max_iter must be at least 1")
    grid = s.grid
    u = grid.normalized
    Q = np.vstack([srsf_values(row, u) for row in s.matrix])
    start = _template_index(Q, u)

    prep = Aligner(grid, Q[start], max_step)
    tables = [prep.prepare(q) for q in Q]
    mu = Q[start].copy()
    history: list[float] = []
    state = None
    converged = False
    for it in range(max_iter):
        aligner = Aligner(grid, mu, max_step)
        results = [aligner.align(q) for q in tables]
        obj = float(sum(c * c for _, _, c in results))
        if history and obj > history[-1] * (1 + 1e-12):
            converged = True
            break
        history.append(obj)
        state = (mu, results)
        if len(history) > 1:
            prev = history[-2]
            if prev <= 0.0 or (prev - obj) / prev < tol:
                converged = True
                break
        elif obj <= 1e-20:
            converged = True
            break
        if it + 1 < max_iter:
            mu = np.mean([a for _, a, _ in results], axis=0)

    mu, results = state
    gammas = [g for g, _, _ in results]
    f0 = float(s.matrix[:, 0].mean())
    mean = srsf_inverse(SrsfDatum(grid, mu), f0)
    if center and s.n > 1:
        h = _mean_warp_inverse(gammas, u)
        mean = FunctionalDatum(grid, np.interp(h, u, mean.values))
        gammas = [np.interp(h, u, g) for g in gammas]
    warps = tuple(WarpingFunction(grid, g) for g in gammas)
    aligned = np.vstack([np.interp(g, u, row) for g, row in zip(gammas, s.matrix)])
    return KarcherResult(
        mean=mean,
        mean_srsf=srsf_transform(mean),
        warps=warps,
        aligned=FunctionalSample(grid, aligned),
        iterations=len(history),
        converged=converged,
        objective=tuple(history),
        template_index=start,
    )
