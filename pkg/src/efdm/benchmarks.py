"""Benchmark non-conformity measures: GMD/GMDM and SNCM.

GMD projects curves onto the leading functional principal components of
the training split and scores a projection ``xi`` by the negative fitted
Gaussian-mixture density ``-sum_k pi_k phi(xi; mu_k, Sigma_k)``; GMDM uses
the largest single weighted component instead of the sum.

SNCM scores a curve by ``sup_t |f(t) - m(t)| / r(t)`` for a mean function
``m`` and a positive modulation function ``r``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from ._rng import derive_seed
from .conformal import NcmScores, SplitIndices
from .elastic import karcher_mean
from .errors import FitFailureError, InvalidInputError
from .fda import (
    FunctionalDatum,
    FunctionalSample,
    as_datum,
    cross_sectional_mean,
    cross_sectional_sd,
    trapz,
)

__all__ = [
    "FpcaBasis",
    "GmmModel",
    "GmdModel",
    "SncmModel",
    "fpca_fit",
    "fpca_project",
    "gmm_fit",
    "gmm_log_components",
    "gmd_ncm",
    "gmdm_ncm",
    "gmd_train",
    "sncm_train",
    "sncm_ncm",
    "MEAN_TYPES",
    "MODULATION_TYPES",
    "H1_RULES",
]

MEAN_TYPES = ("cross_sectional", "karcher")
MODULATION_TYPES = ("unit", "sd", "optimal")
H1_RULES = ("printed", "sup")


def _trapezoid_weights(u: np.ndarray) -> np.ndarray:
    w = np.zeros_like(u)
    du = np.diff(u)
    w[:-1] += du / 2
    w[1:] += du / 2
    return w


# --------------------------------------------------------------------- FPCA


@dataclass(frozen=True, eq=False)
class FpcaBasis:
    """Mean curve, ``p`` orthonormal components (rows) and their eigenvalues."""

    mean: FunctionalDatum
    components: np.ndarray
    eigenvalues: np.ndarray

    @property
    def grid(self):
        return self.mean.grid

    @property
    def p(self) -> int:
        return self.components.shape[0]


def fpca_fit(s: FunctionalSample, p: int) -> FpcaBasis:
    """Functional PCA of a sample with trapezoidal quadrature.

    The covariance operator (divisor ``n``) is discretized as
    ``W^{1/2} C W^{1/2}`` so the eigenproblem stays symmetric; components
    are mapped back with ``W^{-1/2}`` and have unit functional norm.
    """
    n, npts = s.matrix.shape
    if p < 1 or p > min(n - 1, npts):
        raise InvalidInputError(
            f"number of components must lie in [1, min(n-1, M+1)] = [1, {min(n - 1, npts)}], got {p}"
        )
    mean = cross_sectional_mean(s)
    X = s.matrix - mean.values
    sw = np.sqrt(_trapezoid_weights(s.grid.normalized))
    Y = X * sw
    A = (Y.T @ Y) / n
    vals, vecs = np.linalg.eigh(A)
    order = np.argsort(vals)[::-1][:p]
    vals = np.maximum(vals[order], 0.0)
    comps = (vecs[:, order] / sw[:, None]).T
    # sign convention: largest-magnitude entry positive
    idx = np.argmax(np.abs(comps), axis=1)
    comps *= np.sign(comps[np.arange(p), idx])[:, None]
    return FpcaBasis(mean, comps, vals)


def fpca_project(b: FpcaBasis, f) -> np.ndarray:
    """Scores ``xi_j = <f - mean, theta_j>``; a sample gives an ``n x p`` array."""
    w = _trapezoid_weights(b.grid.normalized)
    if isinstance(f, FunctionalSample):
        if f.grid != b.grid:
            raise InvalidInputError("sample is not on the basis grid")
        return ((f.matrix - b.mean.values) * w) @ b.components.T
    f = as_datum(f, b.grid)
    if f.grid != b.grid:
        raise InvalidInputError("curve is not on the basis grid")
    return ((f.values - b.mean.values) * w) @ b.components.T


# ---------------------------------------------------------------------- GMM


@dataclass(frozen=True, eq=False)
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    log_likelihood: float = float("nan")
    history: tuple = field(default=(), repr=False)
    iterations: int = 0

    @property
    def K(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def gmm_log_components(m: GmmModel, X) -> np.ndarray:
    """``log(pi_k) + log phi(x; mu_k, Sigma_k)`` as an ``n x K`` array."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != m.dim:
        raise InvalidInputError(f"points have dimension {X.shape[1]}, model has {m.dim}")
    return _log_weighted(X, m.weights, m.means, m.covariances)


def _log_weighted(X, weights, means, covs):
    n, p = X.shape
    out = np.empty((n, weights.size))
    for k in range(weights.size):
        L = np.linalg.cholesky(covs[k])
        z = np.linalg.solve(L, (X - means[k]).T)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        out[:, k] = np.log(weights[k]) - 0.5 * (p * math.log(2 * math.pi) + logdet + np.sum(z * z, axis=0))
    return out


def _kmeanspp(X, K, rng):
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    for _ in range(1, K):
        d2 = np.min([np.sum((X - c) ** 2, axis=1) for c in centers], axis=0)
        total = d2.sum()
        if total <= 0:
            centers.append(X[rng.integers(n)])
        else:
            centers.append(X[rng.choice(n, p=d2 / total)])
    return np.array(centers)


def _m_step(X, resp):
    n, p = X.shape
    nk = resp.sum(axis=0)
    if np.any(nk < 1e-10 * n):
        raise FitFailureError("a mixture component collapsed to no points")
    weights = nk / n
    means = (resp.T @ X) / nk[:, None]
    covs = np.empty((nk.size, p, p))
    for k in range(nk.size):
        D = X - means[k]
        C = (resp[:, k, None] * D).T @ D / nk[k]
        C = 0.5 * (C + C.T)
        C += 1e-8 * np.trace(C) / p * np.eye(p)
        covs[k] = C
    return weights, means, covs


def _em(X, K, rng, tol, max_iter):
    centers = _kmeanspp(X, K, rng)
    assign = np.argmin(((X[:, None, :] - centers[None]) ** 2).sum(axis=2), axis=1)
    resp = np.zeros((X.shape[0], K))
    resp[np.arange(X.shape[0]), assign] = 1.0
    history = []
    for it in range(max_iter):
        weights, means, covs = _m_step(X, resp)
        try:
            logc = _log_weighted(X, weights, means, covs)
        except np.linalg.LinAlgError as exc:
            raise FitFailureError("a mixture covariance is not positive definite") from exc
        lse = logsumexp(logc, axis=1)
        ll = float(lse.sum())
        if not np.isfinite(ll):
            raise FitFailureError("log-likelihood is not finite")
        history.append(ll)
        resp = np.exp(logc - lse[:, None])
        if len(history) > 1 and abs(history[-1] - history[-2]) <= tol * abs(history[-2]):
            break
    return GmmModel(weights, means, covs, ll, tuple(history), len(history))


def gmm_fit(points, K: int, seed: int, restarts: int = 3, tol: float = 1e-8, max_iter: int = 500) -> GmmModel:
    """Full-covariance Gaussian mixture by EM with k-means++ seeding.

    Each of ``restarts`` runs is seeded independently from ``seed``; the run
    with the highest log-likelihood is kept.  Raises ``FitFailureError`` when
    no run succeeds or there are fewer than ``K (p + 1)`` points.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    n, p = X.shape
    if K < 1:
        raise InvalidInputError("K must be at least 1")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("points must be finite")
    if n < K * (p + 1):
        raise FitFailureError(f"{n} points are too few for K={K} components in {p} dimensions")
    best = None
    errors = []
    for r in range(restarts):
        rng = np.random.default_rng(derive_seed(seed, r))
        try:
            m = _em(X, K, rng, tol, max_iter)
        except FitFailureError as exc:
            errors.append(str(exc))
            continue
        if best is None or m.log_likelihood > best.log_likelihood:
            best = m
    if best is None:
        raise FitFailureError("GMM fit failed in every restart: " + "; ".join(errors))
    return best


def gmd_ncm(m: GmmModel, xi) -> np.ndarray | float:
    """Negative mixture density ``-sum_k pi_k phi_k(xi)``."""
    xi = np.asarray(xi, dtype=float)
    v = -np.exp(logsumexp(gmm_log_components(m, xi), axis=1))
    return float(v[0]) if xi.ndim == 1 else v


def gmdm_ncm(m: GmmModel, xi) -> np.ndarray | float:
    """Negative largest weighted component ``-max_k pi_k phi_k(xi)``."""
    xi = np.asarray(xi, dtype=float)
    v = -np.exp(gmm_log_components(m, xi).max(axis=1))
    return float(v[0]) if xi.ndim == 1 else v


@dataclass(frozen=True, eq=False)
class GmdModel:
    """FPCA projection plus a mixture density; ``use_max`` selects GMDM."""

    basis: FpcaBasis
    gmm: GmmModel
    use_max: bool
    cal_scores: NcmScores
    seed: int = 0

    @property
    def family(self) -> str:
        return "gmdm" if self.use_max else "gmd"

    @property
    def grid(self):
        return self.basis.grid

    @property
    def n_cal(self) -> int:
        return len(self.cal_scores)

    def score_points(self, xi) -> np.ndarray:
        fn = gmdm_ncm if self.use_max else gmd_ncm
        return np.atleast_1d(fn(self.gmm, np.atleast_2d(xi)))

    def score(self, f) -> float:
        return float(self.score_points(fpca_project(self.basis, f))[0])

    def score_sample(self, s: FunctionalSample) -> np.ndarray:
        return self.score_points(fpca_project(self.basis, s))


def gmd_train(
    s: FunctionalSample, split: SplitIndices, p: int, K: int, use_max: bool = False, seed: int = 0
) -> GmdModel:
    if split.n != s.n:
        raise InvalidInputError(f"split covers {split.n} curves but the sample has {s.n}")
    train = s.subset(split.train)
    basis = fpca_fit(train, p)
    gmm = gmm_fit(fpca_project(basis, train), K, seed)
    proto = GmdModel(basis, gmm, use_max, NcmScores(np.zeros(0)), seed)
    cal = NcmScores(proto.score_sample(s.subset(split.cal)))
    return GmdModel(basis, gmm, use_max, cal, seed)


# --------------------------------------------------------------------- SNCM


@dataclass(frozen=True, eq=False)
class SncmModel:
    mean_fn: FunctionalDatum
    modulation: FunctionalDatum
    mean_type: str
    modulation_type: str
    cal_scores: NcmScores
    h1_rule: str = "printed"
    alpha: float | None = None

    family = "sncm"

    def __post_init__(self):
        if np.any(self.modulation.values <= 0):
            raise InvalidInputError("modulation function must be positive")

    @property
    def grid(self):
        return self.mean_fn.grid

    @property
    def n_cal(self) -> int:
        return len(self.cal_scores)

    def score(self, f) -> float:
        return sncm_ncm(self, f)

    def score_sample(self, s: FunctionalSample) -> np.ndarray:
        if s.grid != self.grid:
            raise InvalidInputError("sample is not on the model's grid")
        return np.max(np.abs((s.matrix - self.mean_fn.values) / self.modulation.values), axis=1)


def sncm_ncm(m: SncmModel, f) -> float:
    """``max_j |f(t_j) - m(t_j)| / r(t_j)``."""
    f = as_datum(f, m.grid)
    if f.grid != m.grid:
        raise InvalidInputError("curve is not on the model's grid")
    return float(np.max(np.abs((f.values - m.mean_fn.values) / m.modulation.values)))


def _floor(r: np.ndarray) -> np.ndarray:
    top = float(np.max(r)) if r.size else 0.0
    return np.maximum(r, max(1e-12 * top, np.finfo(float).tiny))


def _optimal_modulation(R: np.ndarray, u: np.ndarray, alpha: float, rule: str) -> np.ndarray:
    n1 = R.shape[0]
    absr = np.abs(R)
    rank = math.ceil((n1 + 1) * (1 - alpha))
    if rank > n1:
        members = np.ones(n1, dtype=bool)
    else:
        sups = absr.max(axis=1)
        nu = np.sort(sups)[rank - 1]
        stat = absr.sum(axis=1) if rule == "printed" else sups
        members = stat <= nu
        if not members.any():
            # the printed rule compares a grid sum with a supremum and can
            # exclude every curve; fall back to the supremum on both sides
            members = sups <= nu
    env = absr[members].max(axis=0)
    total = trapz(env, u)
    if total <= 0:
        return np.ones_like(u)
    return env / total


def sncm_train(
    s: FunctionalSample,
    split: SplitIndices,
    mean_type: str = "cross_sectional",
    modulation_type: str = "optimal",
    alpha: float | None = None,
    h1_rule: str = "printed",
) -> SncmModel:
    """Fit the mean and modulation functions on the training rows."""
    if mean_type not in MEAN_TYPES:
        raise InvalidInputError(f"mean_type must be one of {MEAN_TYPES}, got {mean_type!r}")
    if modulation_type not in MODULATION_TYPES:
        raise InvalidInputError(f"modulation_type must be one of {MODULATION_TYPES}, got {modulation_type!r}")
    if h1_rule not in H1_RULES:
        raise InvalidInputError(f"h1_rule must be one of {H1_RULES}, got {h1_rule!r}")
    if split.n != s.n:
        raise InvalidInputError(f"split covers {split.n} curves but the sample has {s.n}")
    train = s.subset(split.train)
    if mean_type == "karcher":
        m = karcher_mean(train).mean
    else:
        m = cross_sectional_mean(train)
    u = s.grid.normalized
    if modulation_type == "unit":
        r = np.ones_like(u)
    elif modulation_type == "sd":
        r = cross_sectional_sd(train).values
    else:
        if alpha is None or not 0 < alpha < 1:
            raise InvalidInputError("the optimal modulation needs alpha in (0, 1)")
        r = _optimal_modulation(train.matrix - m.values, u, alpha, h1_rule)
    r = FunctionalDatum(s.grid, _floor(np.asarray(r, dtype=float)))
    proto = SncmModel(m, r, mean_type, modulation_type, NcmScores(np.zeros(0)), h1_rule, alpha)
    cal = NcmScores(proto.score_sample(s.subset(split.cal)))
    return SncmModel(m, r, mean_type, modulation_type, cal, h1_rule, alpha)
