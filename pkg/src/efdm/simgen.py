"""Simulated Gaussian-bump curves: standard, narrow and double-peaked.

    standard:       a exp(-(t - p)^2 / 2)
    narrow:         a exp(-2 (t - p)^2)
    double_peaked:  a exp(-(t - 1.5 - p)^2 / 2) + a exp(-(t + 1.5 - p)^2 / 2)

with ``a ~ N(a_mean, a_sd)`` and ``p ~ N(p_mean, p_sd)`` drawn per curve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._rng import STREAM_ORDER, STREAM_TEMPLATE, derive_seed, keyed_normals, keyed_uniforms
from .errors import InvalidInputError
from .fda import FunctionalSample, Grid

TEMPLATES = ("standard", "narrow", "double_peaked")

_PARAM_A = 0
_PARAM_P = 1


def default_grid() -> Grid:
    """250 equally spaced points on [-8, 8]."""
    return Grid.uniform(-8.0, 8.0, 250)


@dataclass(frozen=True)
class TemplateSpec:
    template: str
    a_mean: float
    a_sd: float
    p_mean: float
    p_sd: float
    grid: Grid

    def __post_init__(self):
        if self.template not in TEMPLATES:
            raise InvalidInputError(f"unknown template {self.template!r}; choose from {TEMPLATES}")
        if not (self.a_sd > 0 and self.p_sd > 0):
            raise InvalidInputError("a_sd and p_sd must be positive")


def paper_defaults(template: str, grid: Grid | None = None) -> TemplateSpec:
    grid = default_grid() if grid is None else grid
    if template in ("standard", "narrow"):
        return TemplateSpec(template, 1.0, 0.15, 0.0, 1.75, grid)
    if template == "double_peaked":
        return TemplateSpec(template, 1.0, 0.10, 0.0, 0.15, grid)
    raise InvalidInputError(f"unknown template {template!r}; choose from {TEMPLATES}")


def template_curve(template: str, t: np.ndarray, a, p) -> np.ndarray:
    """Evaluate a template; ``a`` and ``p`` broadcast against ``t``."""
    t = np.asarray(t, dtype=float)
    a = np.asarray(a, dtype=float)[..., None]
    p = np.asarray(p, dtype=float)[..., None]
    if template == "standard":
        return a * np.exp(-0.5 * (t - p) ** 2)
    if template == "narrow":
        return a * np.exp(-2.0 * (t - p) ** 2)
    if template == "double_peaked":
        return a * np.exp(-0.5 * (t - 1.5 - p) ** 2) + a * np.exp(-0.5 * (t + 1.5 - p) ** 2)
    raise InvalidInputError(f"unknown template {template!r}; choose from {TEMPLATES}")


def draw_parameters(spec: TemplateSpec, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    idx = np.arange(n)
    a = spec.a_mean + spec.a_sd * keyed_normals(seed, STREAM_TEMPLATE, idx, _PARAM_A)
    p = spec.p_mean + spec.p_sd * keyed_normals(seed, STREAM_TEMPLATE, idx, _PARAM_P)
    return a, p


def generate(spec: TemplateSpec, n: int, seed: int) -> FunctionalSample:
    """``n`` curves from ``spec``; curve ``i`` depends only on ``(seed, i)``."""
    if n < 1:
        raise InvalidInputError("n must be at least 1")
    a, p = draw_parameters(spec, n, seed)
    return FunctionalSample(spec.grid, template_curve(spec.template, spec.grid.points, a, p))


def mixed_test_set(
    inlier_spec: TemplateSpec,
    outlier_spec: TemplateSpec,
    n: int,
    outlier_rate: float,
    seed: int,
) -> tuple[FunctionalSample, np.ndarray]:
    """Shuffled mix of inliers and outliers; labels are True for outliers."""
    if inlier_spec.grid != outlier_spec.grid:
        raise InvalidInputError("inlier and outlier specs must share a grid")
    if not 0.0 <= outlier_rate <= 1.0:
        raise InvalidInputError("outlier_rate must be in [0, 1]")
    k_float = outlier_rate * n
    k = int(round(k_float))
    if abs(k - k_float) > 1e-9:
        raise InvalidInputError(f"outlier_rate * n = {k_float:g} is not a whole number")
    parts, labels = [], []
    if n - k:
        parts.append(generate(inlier_spec, n - k, derive_seed(seed, 0)).matrix)
        labels.append(np.zeros(n - k, dtype=bool))
    if k:
        parts.append(generate(outlier_spec, k, derive_seed(seed, 1)).matrix)
        labels.append(np.ones(k, dtype=bool))
    mat = np.vstack(parts)
    truth = np.concatenate(labels)
    order = np.argsort(keyed_uniforms(seed, STREAM_ORDER, np.arange(n)), kind="stable")
    return FunctionalSample(inlier_spec.grid, mat[order]), truth[order]
