"""Simulation experiments: coverage, mixed test sets and leave-one-out.

Experiment 1
    Train on standard curves; label three fixed test sets (standard, narrow,
    double-peaked) and report mean coverage.
Experiment 2
    Train on standard curves; label mixed test sets containing a given
    share of double-peaked outliers and report MCC and the four rates.
Experiment 3
    Leave-one-out labeling of each mixed data set on its own.

All randomness is derived from ``ExperimentConfig.seed`` by keyed seeds,
so a configuration always produces the same table.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, fields

import numpy as np

from ._rng import derive_seed
from .conformal import alpha_floor, loo_pvalues, sample_pvalues, split_full_training, split_sizes
from .detectors import parse_detector, train_detector
from .errors import ConfigError, FitFailureError, InvalidInputError
from .metrics import confusion, mcc, rates
from .simgen import generate, mixed_test_set, paper_defaults

__all__ = [
    "ExperimentConfig",
    "ResultRow",
    "ResultTable",
    "run_experiment",
    "run_experiment1",
    "run_experiment2",
    "run_experiment3",
    "TEST_KINDS",
    "RESULT_COLUMNS",
]

log = logging.getLogger(__name__)

TEST_KINDS = ("standard", "narrow", "double_peaked")
RESULT_COLUMNS = ("detector", "n", "alpha", "test_kind", "metric", "mean", "sd", "count")
RATE_METRICS = ("mcc", "tpr", "tnr", "ppv", "npv")

# key words for derive_seed; part of the reproducibility contract
_TRAIN, _SPLIT, _MODEL, _TEST, _TAU, _LOO = range(6)


def _default_alphas(experiment: int) -> tuple:
    return (0.10,) if experiment == 1 else (0.05, 0.10)


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment at a chosen scale.

    ``n_values`` are full training set sizes (experiments 1 and 2).
    ``test_sizes`` sets the fixed experiment-1 test sets; ``test_n`` is the
    size of every mixed set (and of every leave-one-out data set).
    """

    experiment: int
    n_values: tuple = (100,)
    replicates: int = 50
    alphas: tuple | None = None
    detectors: tuple = ("efdm",)
    outlier_rates: tuple = (0.05, 0.10)
    seed: int = 0
    test_sizes: dict = field(default_factory=lambda: {"standard": 500, "narrow": 50, "double_peaked": 50})
    test_n: int = 100
    smoothed: bool = True

    def __post_init__(self):
        if self.experiment not in (1, 2, 3):
            raise ConfigError("must be 1, 2 or 3", "experiment")
        if isinstance(self.replicates, bool) or not isinstance(self.replicates, int) or self.replicates < 1:
            raise ConfigError("must be a positive integer", "replicates")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError("must be a non-negative integer", "seed")
        object.__setattr__(self, "n_values", self._ints("n_values", self.n_values, minimum=3))
        alphas = _default_alphas(self.experiment) if self.alphas is None else self.alphas
        object.__setattr__(self, "alphas", self._reals("alphas", alphas, 0.0, 1.0))
        object.__setattr__(self, "outlier_rates", self._reals("outlier_rates", self.outlier_rates, 0.0, 1.0, closed=True))
        dets = self._seq("detectors", self.detectors)
        for k, d in enumerate(dets):
            try:
                parse_detector(d)
            except InvalidInputError as exc:
                raise ConfigError(str(exc), f"detectors[{k}]") from None
        object.__setattr__(self, "detectors", tuple(parse_detector(d).id for d in dets))
        if not isinstance(self.test_n, int) or isinstance(self.test_n, bool) or self.test_n < 4:
            raise ConfigError("must be an integer >= 4", "test_n")
        sizes = dict(self.test_sizes)
        for kind, size in sizes.items():
            if kind not in TEST_KINDS:
                raise ConfigError(f"unknown test set {kind!r}; expected one of {TEST_KINDS}", "test_sizes")
            if not isinstance(size, int) or isinstance(size, bool) or size < 1:
                raise ConfigError("must be a positive integer", f"test_sizes.{kind}")
        object.__setattr__(self, "test_sizes", {k: sizes[k] for k in TEST_KINDS if k in sizes})
        if self.experiment != 1:
            for k, r in enumerate(self.outlier_rates):
                if abs(r * self.test_n - round(r * self.test_n)) > 1e-9:
                    raise ConfigError(f"{r} x test_n = {r * self.test_n:g} is not a whole number", f"outlier_rates[{k}]")
        for n2 in self._calibration_sizes():
            floor = alpha_floor(n2)
            for k, a in enumerate(self.alphas):
                if a < floor * (1 - 1e-12):
                    raise ConfigError(
                        f"{a} is below the floor 1/(n2+1) = {floor:.4g} for n2 = {n2}", f"alphas[{k}]"
                    )

    def _calibration_sizes(self):
        if self.experiment == 3:
            return [split_sizes(self.test_n - 1)[1]]
        return [split_sizes(n)[1] for n in self.n_values]

    @staticmethod
    def _seq(name, value):
        if isinstance(value, (str, bytes)) or not hasattr(value, "__iter__"):
            raise ConfigError("must be a list", name)
        out = tuple(value)
        if not out:
            raise ConfigError("must not be empty", name)
        return out

    @classmethod
    def _ints(cls, name, value, minimum):
        out = cls._seq(name, value)
        for k, v in enumerate(out):
            if not isinstance(v, int) or isinstance(v, bool) or v < minimum:
                raise ConfigError(f"must be an integer >= {minimum}, got {v!r}", f"{name}[{k}]")
        return out

    @classmethod
    def _reals(cls, name, value, lo, hi, closed=False):
        out = cls._seq(name, value)
        for k, v in enumerate(out):
            ok = isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)
            ok = ok and ((lo <= v <= hi) if closed else (lo < v < hi))
            if not ok:
                span = f"[{lo}, {hi}]" if closed else f"({lo}, {hi})"
                raise ConfigError(f"must be a number in {span}, got {v!r}", f"{name}[{k}]")
        return tuple(float(v) for v in out)

    @classmethod
    def from_mapping(cls, data) -> "ExperimentConfig":
        """Build from a parsed config file, rejecting unknown fields."""
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping of field names to values")
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(f"unknown field; expected one of {sorted(known)}", str(key))
        if "experiment" not in data:
            raise ConfigError("is required", "experiment")
        if "test_sizes" in data and not isinstance(data["test_sizes"], dict):
            raise ConfigError("must be a mapping", "test_sizes")
        if "smoothed" in data and not isinstance(data["smoothed"], bool):
            raise ConfigError("must be true or false", "smoothed")
        return cls(**data)


@dataclass(frozen=True)
class ResultRow:
    detector: str
    n: int
    alpha: float
    test_kind: str
    metric: str
    mean: float
    sd: float
    count: int


def _fmt(x) -> str:
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(x)
    return str(x)


@dataclass
class ResultTable:
    """Aggregated results plus, for experiment 1, per-curve coverage."""

    rows: list = field(default_factory=list)
    function_coverage: list = field(default_factory=list)

    def add(self, detector, n, alpha, test_kind, metric, values, count=None):
        v = np.asarray(values, dtype=float)
        mean = float(v.mean()) if v.size else float("nan")
        sd = float(v.std(ddof=1)) if v.size > 1 else (0.0 if v.size == 1 else float("nan"))
        self.rows.append(
            ResultRow(detector, int(n), float(alpha), test_kind, metric, mean, sd, int(v.size if count is None else count))
        )

    def get(self, detector, n, alpha, test_kind, metric) -> ResultRow:
        for r in self.rows:
            if (r.detector, r.n, r.test_kind, r.metric) == (detector, n, test_kind, metric) and math.isclose(
                r.alpha, alpha
            ):
                return r
        raise KeyError((detector, n, alpha, test_kind, metric))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(getattr(r, c)) for c in RESULT_COLUMNS])
        return buf.getvalue()

    def coverage_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("detector", "n", "alpha", "test_kind", "index", "coverage", "count"))
        for det, n, alpha, kind, cov, count in self.function_coverage:
            for i, c in enumerate(cov):
                w.writerow([det, n, repr(float(alpha)), kind, i, _fmt(float(c)), count])
        return buf.getvalue()


def _train(det, sample, split, alpha, seed):
    return train_detector(det, sample, split, alpha=alpha, seed=seed)


def _alpha_groups(det, alphas):
    # detectors whose fit ignores alpha are trained once for every level
    return [(a,) for a in alphas] if parse_detector(det).needs_alpha else [tuple(alphas)]


def _record_failures(table, det, n, alpha, kind, failures, replicates):
    if failures:
        table.add(det, n, alpha, kind, "fit_failures", [failures], count=replicates)


def run_experiment1(cfg: ExperimentConfig) -> ResultTable:
    """Coverage of fixed standard, narrow and double-peaked test sets."""
    kinds = list(cfg.test_sizes)
    tests = {
        kind: generate(paper_defaults(kind), cfg.test_sizes[kind], derive_seed(cfg.seed, _TEST, TEST_KINDS.index(kind)))
        for kind in kinds
    }
    std = paper_defaults("standard")
    table = ResultTable()
    for n in cfg.n_values:
        cov = {(d, a, k): [] for d in cfg.detectors for a in cfg.alphas for k in kinds}
        inl = {(d, a, k): np.zeros(cfg.test_sizes[k]) for d in cfg.detectors for a in cfg.alphas for k in kinds}
        fails = {(d, a): 0 for d in cfg.detectors for a in cfg.alphas}
        for r in range(cfg.replicates):
            sample = generate(std, n, derive_seed(cfg.seed, _TRAIN, n, r))
            split = split_full_training(n, derive_seed(cfg.seed, _SPLIT, n, r))
            for det in cfg.detectors:
                for group in _alpha_groups(det, cfg.alphas):
                    try:
                        model = _train(det, sample, split, group[0], derive_seed(cfg.seed, _MODEL, n, r))
                    except FitFailureError as exc:
                        log.info("experiment 1: %s n=%d replicate %d: fit failure (%s)", det, n, r, exc)
                        for a in group:
                            fails[(det, a)] += 1
                        continue
                    for kind in kinds:
                        tau_seed = derive_seed(cfg.seed, _TAU, n, r, TEST_KINDS.index(kind))
                        p, _ = sample_pvalues(model, tests[kind], tau_seed, cfg.smoothed)
                        for a in group:
                            inlier = p >= a
                            cov[(det, a, kind)].append(float(inlier.mean()))
                            inl[(det, a, kind)] += inlier
            log.info("experiment 1: n=%d replicate %d/%d done", n, r + 1, cfg.replicates)
        for det in cfg.detectors:
            for a in cfg.alphas:
                for kind in kinds:
                    vals = cov[(det, a, kind)]
                    table.add(det, n, a, kind, "coverage", vals)
                    _record_failures(table, det, n, a, kind, fails[(det, a)], cfg.replicates)
                    share = inl[(det, a, kind)] / len(vals) if vals else np.full(cfg.test_sizes[kind], np.nan)
                    table.function_coverage.append((det, n, a, kind, share, len(vals)))
    return table


def _rate_kind(rate: float) -> str:
    return f"outliers_{rate:g}"


def _add_rate_metrics(store, key, flags, truth):
    c = confusion(flags, truth)
    vals = (mcc(c),) + rates(c)
    for m, v in zip(RATE_METRICS, vals):
        store.setdefault(key + (m,), []).append(v)


def _emit_rate_rows(table, cfg, n, store, fails):
    for det in cfg.detectors:
        for a in cfg.alphas:
            for rate in cfg.outlier_rates:
                kind = _rate_kind(rate)
                for m in RATE_METRICS:
                    table.add(det, n, a, kind, m, store.get((det, a, rate, m), []))
                _record_failures(table, det, n, a, kind, fails.get((det, a, rate), 0), cfg.replicates)


def run_experiment2(cfg: ExperimentConfig) -> ResultTable:
    """MCC and rates on mixed inlier/outlier test sets."""
    std = paper_defaults("standard")
    dp = paper_defaults("double_peaked")
    table = ResultTable()
    for n in cfg.n_values:
        store: dict = {}
        fails: dict = {}
        for r in range(cfg.replicates):
            sample = generate(std, n, derive_seed(cfg.seed, _TRAIN, n, r))
            split = split_full_training(n, derive_seed(cfg.seed, _SPLIT, n, r))
            tests = [
                mixed_test_set(std, dp, cfg.test_n, rate, derive_seed(cfg.seed, _TEST, n, r, k))
                for k, rate in enumerate(cfg.outlier_rates)
            ]
            for det in cfg.detectors:
                for group in _alpha_groups(det, cfg.alphas):
                    try:
                        model = _train(det, sample, split, group[0], derive_seed(cfg.seed, _MODEL, n, r))
                    except FitFailureError as exc:
                        log.info("experiment 2: %s n=%d replicate %d: fit failure (%s)", det, n, r, exc)
                        for a in group:
                            for rate in cfg.outlier_rates:
                                fails[(det, a, rate)] = fails.get((det, a, rate), 0) + 1
                        continue
                    for k, (rate, (test, truth)) in enumerate(zip(cfg.outlier_rates, tests)):
                        p, _ = sample_pvalues(model, test, derive_seed(cfg.seed, _TAU, n, r, k), cfg.smoothed)
                        for a in group:
                            _add_rate_metrics(store, (det, a, rate), p < a, truth)
            log.info("experiment 2: n=%d replicate %d/%d done", n, r + 1, cfg.replicates)
        _emit_rate_rows(table, cfg, n, store, fails)
    return table


def run_experiment3(cfg: ExperimentConfig) -> ResultTable:
    """Leave-one-out labeling of single mixed data sets of ``test_n`` curves."""
    std = paper_defaults("standard")
    dp = paper_defaults("double_peaked")
    table = ResultTable()
    n = cfg.test_n
    store: dict = {}
    fails: dict = {}
    for r in range(cfg.replicates):
        for k, rate in enumerate(cfg.outlier_rates):
            sample, truth = mixed_test_set(std, dp, n, rate, derive_seed(cfg.seed, _TEST, n, r, k))
            for det in cfg.detectors:
                for group in _alpha_groups(det, cfg.alphas):
                    try:
                        p, _ = loo_pvalues(
                            sample, det, derive_seed(cfg.seed, _LOO, r, k), alpha=group[0], smoothed=cfg.smoothed
                        )
                    except FitFailureError as exc:
                        log.info("experiment 3: %s data set %d: fit failure (%s)", det, r, exc)
                        for a in group:
                            fails[(det, a, rate)] = fails.get((det, a, rate), 0) + 1
                        continue
                    for a in group:
                        _add_rate_metrics(store, (det, a, rate), p < a, truth)
        log.info("experiment 3: data set %d/%d done", r + 1, cfg.replicates)
    _emit_rate_rows(table, cfg, n, store, fails)
    return table


def run_experiment(cfg: ExperimentConfig) -> ResultTable:
    return {1: run_experiment1, 2: run_experiment2, 3: run_experiment3}[cfg.experiment](cfg)
