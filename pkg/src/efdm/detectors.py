"""Detector families selected by string id.

=================  ==========================================================
id                 detector
=================  ==========================================================
``efdm``           elastic amplitude + phase distances, weights (1/2, 1/2)
``efdm+tr``        adds the translation distance, weights (1/3, 1/3, 1/3)
``sncm1``          SNCM, cross-sectional mean, optimal modulation
``sncm2``          SNCM, Karcher mean, optimal modulation
``gmd:p,K``        negative mixture density of ``p`` FPC scores, ``K`` components
``gmdm:p,K``       as ``gmd`` with the largest weighted component
=================  ==========================================================

Every trained detector exposes ``score``, ``score_sample``, ``cal_scores``
and ``n_cal``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .benchmarks import gmd_train, sncm_train
from .conformal import EfdmConfig, SplitIndices, efdm_train
from .errors import InvalidInputError
from .fda import FunctionalSample

__all__ = ["DetectorSpec", "parse_detector", "train_detector", "KNOWN_FAMILIES"]

KNOWN_FAMILIES = ("efdm", "efdm+tr", "sncm1", "sncm2", "gmd:p,K", "gmdm:p,K")

_GMD = re.compile(r"^(gmdm?):\s*(\d+)\s*,\s*(\d+)$")


@dataclass(frozen=True)
class DetectorSpec:
    id: str
    family: str
    p: int = 0
    K: int = 0

    @property
    def needs_alpha(self) -> bool:
        return self.family in ("sncm1", "sncm2")


def parse_detector(detector_id: str) -> DetectorSpec:
    """Validate a detector id; raises ``InvalidInputError`` on unknown ids."""
    if not isinstance(detector_id, str):
        raise InvalidInputError(f"detector id must be a string, got {detector_id!r}")
    d = detector_id.strip().lower()
    if d in ("efdm", "efdm+tr", "sncm1", "sncm2"):
        return DetectorSpec(d, d)
    m = _GMD.match(d)
    if m:
        p, K = int(m.group(2)), int(m.group(3))
        if p < 1 or K < 1:
            raise InvalidInputError(f"{detector_id!r}: p and K must be positive")
        return DetectorSpec(f"{m.group(1)}:{p},{K}", m.group(1), p, K)
    raise InvalidInputError(
        f"unknown detector id {detector_id!r}; expected one of {', '.join(KNOWN_FAMILIES)}"
    )


def train_detector(
    detector_id: str, s: FunctionalSample, split: SplitIndices, alpha: float | None = None, seed: int = 0
):
    """Train the detector named by ``detector_id`` on ``s`` with ``split``."""
    spec = parse_detector(detector_id)
    if spec.family == "efdm":
        return efdm_train(s, split, EfdmConfig(seed=seed))
    if spec.family == "efdm+tr":
        return efdm_train(s, split, EfdmConfig(use_translation=True, seed=seed))
    if spec.family in ("sncm1", "sncm2"):
        mean_type = "cross_sectional" if spec.family == "sncm1" else "karcher"
        if alpha is None:
            raise InvalidInputError(f"{spec.id} uses the optimal modulation and needs alpha")
        return sncm_train(s, split, mean_type, "optimal", alpha)
    return gmd_train(s, split, spec.p, spec.K, use_max=spec.family == "gmdm", seed=seed)
