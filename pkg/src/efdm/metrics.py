"""Coverage, confusion matrices, MCC and the four classification rates.

Outliers are the positive class.  Zero denominators resolve to 0 so that
aggregation over replicates never meets a NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

__all__ = ["ConfusionMatrix", "coverage", "confusion", "mcc", "rates", "outlier_flags"]


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise InvalidInputError(f"{name} must be a non-negative count, got {v!r}")
            object.__setattr__(self, name, int(v))

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def outlier_flags(reports) -> np.ndarray:
    """Boolean outlier flags from reports, labels or booleans."""
    out = []
    for r in reports:
        if hasattr(r, "is_outlier"):
            out.append(bool(r.is_outlier))
        elif isinstance(r, str):
            if r not in ("inlier", "outlier"):
                raise InvalidInputError(f"unknown label {r!r}")
            out.append(r == "outlier")
        else:
            out.append(bool(r))
    return np.array(out, dtype=bool)


def coverage(reports) -> float:
    """Fraction of curves labeled inlier."""
    flags = outlier_flags(reports)
    if flags.size == 0:
        raise InvalidInputError("coverage of an empty set of reports")
    return float(np.count_nonzero(~flags)) / flags.size


def confusion(reports, truth) -> ConfusionMatrix:
    pred = outlier_flags(reports)
    true = outlier_flags(truth)
    if pred.size != true.size:
        raise InvalidInputError(f"{pred.size} predictions but {true.size} truth labels")
    return ConfusionMatrix(
        tp=int(np.count_nonzero(pred & true)),
        fp=int(np.count_nonzero(pred & ~true)),
        tn=int(np.count_nonzero(~pred & ~true)),
        fn=int(np.count_nonzero(~pred & true)),
    )


def mcc(c: ConfusionMatrix) -> float:
    """Matthews correlation coefficient, 0 when any marginal is empty."""
    margins = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    if margins == 0:
        return 0.0
    v = (c.tp * c.tn - c.fp * c.fn) / math.sqrt(margins)
    return min(1.0, max(-1.0, v))


def _ratio(a: int, b: int) -> float:
    return a / b if b else 0.0


def rates(c: ConfusionMatrix) -> tuple[float, float, float, float]:
    """``(TPR, TNR, PPV, NPV)``."""
    return (
        _ratio(c.tp, c.tp + c.fn),
        _ratio(c.tn, c.tn + c.fp),
        _ratio(c.tp, c.tp + c.fp),
        _ratio(c.tn, c.tn + c.fn),
    )
