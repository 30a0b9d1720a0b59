"""Inductive conformal anomaly detection with the elastic-distance NCM.

The EFDM non-conformity measure of a curve ``f`` is a weighted sum of its
min-max scaled distances to the Karcher mean of the training split::

    s(f) = w_a (d_a - min_a) / (max_a - min_a)
         + w_p (d_p - min_p) / (max_p - min_p)
         [+ w_tr (d_tr - min_tr) / (max_tr - min_tr)]

where the bounds come from the training curves and ``d_tr`` is the
absolute difference of the initial values ``|mu(t_0) - f(t_0)|``.
Calibration scores turn a test score into a conformal p-value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._rng import STREAM_TAU, derive_seed, keyed_uniform
from .elastic import Aligner, karcher_mean
from .errors import InvalidInputError
from .fda import FunctionalDatum, FunctionalSample, as_datum, srsf_values

__all__ = [
    "SplitIndices",
    "split_sizes",
    "split_full_training",
    "EfdmConfig",
    "EfdmModel",
    "NcmScores",
    "DetectionReport",
    "efdm_train",
    "efdm_score",
    "conformal_pvalue",
    "smoothed_pvalue",
    "alpha_floor",
    "check_alpha",
    "detect",
    "detect_sample",
    "sample_pvalues",
    "label",
    "loo_pvalues",
    "loo_detect",
]

INLIER = "inlier"
OUTLIER = "outlier"


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    cal: np.ndarray

    def __post_init__(self):
        tr = np.sort(np.asarray(self.train, dtype=int))
        ca = np.sort(np.asarray(self.cal, dtype=int))
        if np.intersect1d(tr, ca).size:
            raise InvalidInputError("training and calibration indices overlap")
        object.__setattr__(self, "train", tr)
        object.__setattr__(self, "cal", ca)

    @property
    def n(self) -> int:
        return self.train.size + self.cal.size


def split_sizes(n: int) -> tuple[int, int]:
    """``n1 = ceil(2n/3)`` training and ``n2 = n - n1`` calibration curves."""
    n1 = -(-2 * n // 3)
    return n1, n - n1


def split_full_training(n: int, seed: int) -> SplitIndices:
    """Uniformly random train/calibration partition of ``range(n)``."""
    if n < 3:
        raise InvalidInputError(f"need at least 3 curves to split, got {n}")
    n1, _ = split_sizes(n)
    perm = np.random.default_rng(seed).permutation(n)
    return SplitIndices(perm[:n1], perm[n1:])


@dataclass(frozen=True)
class NcmScores:
    scores: np.ndarray

    def __post_init__(self):
        s = np.array(self.scores, dtype=float).ravel()
        if not np.all(np.isfinite(s)):
            raise InvalidInputError("non-conformity scores must be finite")
        s.setflags(write=False)
        object.__setattr__(self, "scores", s)

    def __len__(self) -> int:
        return self.scores.size


@dataclass(frozen=True)
class EfdmConfig:
    """EFDM options.

    ``weights`` is ``(w_a, w_p, w_tr)``; when omitted it is ``(1/2, 1/2, 0)``
    without the translation term and ``(1/3, 1/3, 1/3)`` with it.
    """

    use_translation: bool = False
    weights: tuple | None = None
    seed: int = 0
    karcher_tol: float = 1e-4
    karcher_max_iter: int = 20

    def __post_init__(self):
        if self.weights is None:
            w = (1 / 3, 1 / 3, 1 / 3) if self.use_translation else (0.5, 0.5, 0.0)
        else:
            w = tuple(float(x) for x in self.weights)
            if len(w) == 2:
                w = w + (0.0,)
        if len(w) != 3 or any(x < 0 for x in w):
            raise InvalidInputError("weights must be three non-negative numbers")
        if not math.isclose(sum(w), 1.0, abs_tol=1e-9):
            raise InvalidInputError(f"weights must sum to 1, got {sum(w):g}")
        if not self.use_translation and w[2] != 0:
            raise InvalidInputError("translation weight must be 0 when use_translation is off")
        if max(w) <= 0:
            raise InvalidInputError("at least one weight must be positive")
        object.__setattr__(self, "weights", w)


def _scale(d, lo: float, hi: float):
    span = hi - lo
    if span <= 1e-12 * max(1.0, abs(hi)):
        # degenerate component: carries no information
        return np.zeros_like(np.asarray(d, dtype=float))
    return (np.asarray(d, dtype=float) - lo) / span


@dataclass(frozen=True, eq=False)
class EfdmModel:
    """A trained EFDM detector."""

    mean: FunctionalDatum
    bounds: dict
    config: EfdmConfig
    cal_scores: NcmScores
    _aligner: Aligner = field(default=None, repr=False, compare=False)

    family = "efdm"

    def __post_init__(self):
        for c in ("a", "p", "tr"):
            if c in self.bounds and self.bounds[c][0] > self.bounds[c][1]:
                raise InvalidInputError(f"bounds for {c!r} have min > max")
        if self._aligner is None:
            u = self.mean.grid.normalized
            object.__setattr__(self, "_aligner", Aligner(self.mean.grid, srsf_values(self.mean.values, u)))

    @property
    def grid(self):
        return self.mean.grid

    @property
    def n_cal(self) -> int:
        return len(self.cal_scores)

    def distances(self, f) -> np.ndarray:
        """``[d_a, d_p, d_tr]`` of a curve to the training Karcher mean."""
        return _distances(self._aligner, self.mean, as_datum(f, self.grid))

    def score_distances(self, d: np.ndarray) -> np.ndarray:
        return _weighted_score(d, self.bounds, self.config)

    def score(self, f) -> float:
        return float(self.score_distances(self.distances(f))[0])

    def score_sample(self, s: FunctionalSample) -> np.ndarray:
        if s.grid != self.grid:
            raise InvalidInputError("sample is not on the model's grid")
        return self.score_distances(np.vstack([self.distances(f) for f in s]))


def _distances(aligner: Aligner, mean: FunctionalDatum, f: FunctionalDatum) -> np.ndarray:
    da, dp = aligner.distances(srsf_values(f.values, f.grid.normalized))
    return np.array([da, dp, abs(float(mean.values[0]) - float(f.values[0]))])


def efdm_train(s: FunctionalSample, split: SplitIndices, cfg: EfdmConfig | None = None) -> EfdmModel:
    """Fit EFDM: Karcher mean of the training rows, bounds, calibration scores."""
    cfg = EfdmConfig() if cfg is None else cfg
    if split.n != s.n:
        raise InvalidInputError(f"split covers {split.n} curves but the sample has {s.n}")
    if split.cal.size < 1:
        raise InvalidInputError("calibration split is empty")
    train = s.subset(split.train)
    mean = karcher_mean(train, tol=cfg.karcher_tol, max_iter=cfg.karcher_max_iter).mean
    aligner = Aligner(s.grid, srsf_values(mean.values, s.grid.normalized))

    d_train = np.vstack([_distances(aligner, mean, f) for f in train])
    lo, hi = d_train.min(axis=0), d_train.max(axis=0)
    bounds = {c: (float(lo[k]), float(hi[k])) for k, c in enumerate(("a", "p", "tr"))}
    d_cal = np.vstack([_distances(aligner, mean, s[i]) for i in split.cal])
    cal = NcmScores(_weighted_score(d_cal, bounds, cfg))
    return EfdmModel(mean, bounds, cfg, cal, aligner)


def _weighted_score(d: np.ndarray, bounds: dict, cfg: EfdmConfig) -> np.ndarray:
    d = np.atleast_2d(d)
    w_a, w_p, w_tr = cfg.weights
    s = w_a * _scale(d[:, 0], *bounds["a"]) + w_p * _scale(d[:, 1], *bounds["p"])
    if cfg.use_translation:
        s = s + w_tr * _scale(d[:, 2], *bounds["tr"])
    return s


def efdm_score(m: EfdmModel, f: FunctionalDatum) -> float:
    return m.score(f)


def conformal_pvalue(cal: NcmScores, s_test: float) -> float:
    """``(#{s_i >= s} + 1) / (n2 + 1)``."""
    scores = cal.scores if isinstance(cal, NcmScores) else np.asarray(cal, dtype=float)
    if scores.size == 0:
        raise InvalidInputError("calibration scores are empty")
    return (int(np.count_nonzero(scores >= s_test)) + 1) / (scores.size + 1)


def smoothed_pvalue(cal: NcmScores, s_test: float, tau: float) -> float:
    """``(#{s_i > s} + tau * #{ties incl. the test point}) / (n2 + 1)``."""
    scores = cal.scores if isinstance(cal, NcmScores) else np.asarray(cal, dtype=float)
    if scores.size == 0:
        raise InvalidInputError("calibration scores are empty")
    if not 0.0 <= tau <= 1.0:
        raise InvalidInputError(f"tau must lie in [0, 1], got {tau}")
    greater = int(np.count_nonzero(scores > s_test))
    ties = int(np.count_nonzero(scores == s_test)) + 1
    return (greater + tau * ties) / (scores.size + 1)


def alpha_floor(n_cal: int) -> float:
    return 1.0 / (n_cal + 1)


def check_alpha(alpha: float, n_cal: int) -> None:
    floor = alpha_floor(n_cal)
    if not (alpha < 1.0):
        raise InvalidInputError(f"alpha must be below 1, got {alpha}")
    if alpha < floor * (1 - 1e-12):
        raise InvalidInputError(
            f"alpha = {alpha:g} is below the floor 1/(n2+1) = 1/{n_cal + 1} = {floor:.4g}; "
            "smaller levels label every curve an inlier"
        )


@dataclass(frozen=True)
class DetectionReport:
    p_value: float
    label: str
    alpha: float
    score: float
    index: int = 0

    @property
    def is_outlier(self) -> bool:
        return self.label == OUTLIER


def label(p_value: float, alpha: float) -> str:
    return OUTLIER if p_value < alpha else INLIER


def _tau(seed: int, index: int) -> float:
    return keyed_uniform(seed, STREAM_TAU, index)


def _pvalue(cal, score, smoothed, tau):
    return smoothed_pvalue(cal, score, tau) if smoothed else conformal_pvalue(cal, score)


def detect(
    m,
    f,
    alpha: float,
    rng: np.random.Generator | None = None,
    *,
    tau: float | None = None,
    seed: int | None = None,
    index: int = 0,
    smoothed: bool = True,
) -> DetectionReport:
    """Score one curve, compute its (smoothed) p-value and threshold at ``alpha``.

    ``tau`` is taken, in order of preference, from the argument, from ``rng``,
    or from the keyed stream ``(seed, index)`` (``seed`` defaults to the
    model's configured seed).
    """
    check_alpha(alpha, m.n_cal)
    score = m.score(f)
    if tau is None:
        if rng is not None:
            tau = float(rng.uniform())
        else:
            tau = _tau(_model_seed(m) if seed is None else seed, index)
    p = _pvalue(m.cal_scores, score, smoothed, tau)
    return DetectionReport(p, label(p, alpha), alpha, score, index)


def _model_seed(m) -> int:
    cfg = getattr(m, "config", None)
    return int(getattr(cfg, "seed", 0)) if cfg is not None else int(getattr(m, "seed", 0))


def sample_pvalues(m, s: FunctionalSample, seed: int, smoothed: bool = True, scores=None):
    """p-values and scores for every curve of ``s`` (tau keyed by row index)."""
    if scores is None:
        scores = m.score_sample(s)
    p = np.array([_pvalue(m.cal_scores, sc, smoothed, _tau(seed, i)) for i, sc in enumerate(scores)])
    return p, np.asarray(scores)


def detect_sample(m, s: FunctionalSample, alpha: float, seed: int, smoothed: bool = True) -> list:
    check_alpha(alpha, m.n_cal)
    p, scores = sample_pvalues(m, s, seed, smoothed)
    return [DetectionReport(float(pi), label(pi, alpha), alpha, float(si), i) for i, (pi, si) in enumerate(zip(p, scores))]


def loo_pvalues(s: FunctionalSample, detector: str, seed: int, alpha: float | None = None, smoothed: bool = True):
    """Leave-one-out p-values: curve ``i`` is scored by a detector trained on the rest.

    Returns ``(p_values, scores)``.  ``alpha`` is only used by detectors whose
    training depends on it (the optimal-modulation SNCM).
    """
    from .detectors import train_detector

    if s.n < 4:
        raise InvalidInputError(f"leave-one-out needs at least 4 curves, got {s.n}")
    p = np.empty(s.n)
    scores = np.empty(s.n)
    for i in range(s.n):
        rest = s.subset(np.delete(np.arange(s.n), i))
        split = split_full_training(rest.n, derive_seed(seed, i))
        model = train_detector(detector, rest, split, alpha=alpha, seed=derive_seed(seed, i, 1))
        scores[i] = model.score(s[i])
        p[i] = _pvalue(model.cal_scores, scores[i], smoothed, _tau(seed, i))
    return p, scores


def loo_detect(s: FunctionalSample, ncm: str, alpha: float, seed: int, smoothed: bool = True) -> list:
    n1, n2 = split_sizes(s.n - 1)
    if s.n >= 4:
        check_alpha(alpha, n2)
    p, scores = loo_pvalues(s, ncm, seed, alpha=alpha, smoothed=smoothed)
    return [DetectionReport(float(pi), label(pi, alpha), alpha, float(si), i) for i, (pi, si) in enumerate(zip(p, scores))]
