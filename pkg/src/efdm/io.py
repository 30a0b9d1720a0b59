"""File formats: sample CSV, labels and report CSVs, and model files.

Sample CSV
    First row holds the grid points; every later row is one curve.  Plain
    comma-separated numbers, no header names.
Labels CSV
    ``index,label`` with labels ``inlier`` / ``outlier``.
Report CSV
    ``index,p_value,score,label,alpha``.
Model file
    JSON with a ``format_version`` field.  Floats are written in shortest
    round-trip form, so a reloaded model scores exactly like the original.
"""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .benchmarks import FpcaBasis, GmdModel, GmmModel, SncmModel
from .conformal import INLIER, OUTLIER, EfdmConfig, EfdmModel, NcmScores
from .errors import DataFormatError, InvalidInputError
from .fda import FunctionalDatum, FunctionalSample, Grid

__all__ = [
    "FORMAT_VERSION",
    "atomic_write_text",
    "read_sample",
    "write_sample",
    "sample_to_csv",
    "write_labels",
    "read_labels",
    "write_reports",
    "reports_to_csv",
    "model_to_dict",
    "model_from_dict",
    "save_model",
    "load_model",
]

FORMAT_VERSION = 1


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to a temporary file beside ``path`` and rename it."""
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _num(x: float) -> str:
    return repr(float(x))


def sample_to_csv(s: FunctionalSample) -> str:
    lines = [",".join(_num(t) for t in s.grid.points)]
    lines += [",".join(_num(v) for v in row) for row in s.matrix]
    return "\n".join(lines) + "\n"


def write_sample(s: FunctionalSample, path) -> None:
    atomic_write_text(path, sample_to_csv(s))


def _parse_row(fields, path, line):
    try:
        vals = [float(x) for x in fields]
    except ValueError:
        bad = next(x for x in fields if not _is_float(x))
        raise DataFormatError(f"row {line} has a non-numeric value {bad.strip()!r}", path, line) from None
    if not all(math.isfinite(v) for v in vals):
        raise DataFormatError(f"row {line} has a non-finite value", path, line)
    return vals


def _is_float(x: str) -> bool:
    try:
        float(x)
    except ValueError:
        return False
    return True


def read_sample(path) -> FunctionalSample:
    """Parse a sample CSV; errors name the file and the offending row."""
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataFormatError(f"cannot open: {exc.strerror}", path) from None
    rows = []
    with fh:
        for line, fields in enumerate(csv.reader(fh), start=1):
            if not fields or all(not f.strip() for f in fields):
                continue
            rows.append((line, _parse_row(fields, path, line)))
    if not rows:
        raise DataFormatError("file is empty", path)
    grid_line, grid_vals = rows[0]
    try:
        grid = Grid(np.array(grid_vals))
    except InvalidInputError as exc:
        raise DataFormatError(f"grid row is invalid: {exc}", path, grid_line) from None
    if len(rows) < 2:
        raise DataFormatError("file has a grid row but no curves", path)
    for line, vals in rows[1:]:
        if len(vals) != len(grid):
            raise DataFormatError(
                f"row {line} has {len(vals)} values but the grid has {len(grid)}", path, line
            )
    return FunctionalSample(grid, np.array([v for _, v in rows[1:]]))


def write_labels(labels, path) -> None:
    flags = [bool(x) for x in labels]
    text = "index,label\n" + "".join(f"{i},{OUTLIER if f else INLIER}\n" for i, f in enumerate(flags))
    atomic_write_text(path, text)


def read_labels(path) -> np.ndarray:
    """Labels CSV to a boolean array (True = outlier)."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["index", "label"]:
            raise DataFormatError("expected header 'index,label'", path, 1)
        out = []
        for line, row in enumerate(reader, start=2):
            if len(row) != 2 or row[1] not in (INLIER, OUTLIER):
                raise DataFormatError(f"row {line} is not 'index,inlier|outlier'", path, line)
            out.append(row[1] == OUTLIER)
    return np.array(out, dtype=bool)


def reports_to_csv(reports) -> str:
    lines = ["index,p_value,score,label,alpha"]
    for r in reports:
        lines.append(f"{r.index},{_num(r.p_value)},{_num(r.score)},{r.label},{_num(r.alpha)}")
    return "\n".join(lines) + "\n"


def write_reports(reports, path) -> None:
    atomic_write_text(path, reports_to_csv(reports))


# ------------------------------------------------------------------ models


def _arr(x) -> list:
    return np.asarray(x, dtype=float).tolist()


def model_to_dict(model, detector_id: str, seed: int) -> dict:
    """Self-describing JSON-ready state of a trained detector."""
    if not isinstance(model, (EfdmModel, GmdModel, SncmModel)):
        raise InvalidInputError(f"cannot serialize {type(model).__name__}")
    base = {
        "format_version": FORMAT_VERSION,
        "detector": detector_id,
        "seed": int(seed),
        "grid": _arr(model.grid.points),
        "cal_scores": _arr(model.cal_scores.scores),
    }
    if isinstance(model, EfdmModel):
        cfg = model.config
        base["family"] = "efdm"
        base["state"] = {
            "mean": _arr(model.mean.values),
            "bounds": {k: [float(v[0]), float(v[1])] for k, v in model.bounds.items()},
            "use_translation": cfg.use_translation,
            "weights": list(cfg.weights),
            "config_seed": cfg.seed,
            "karcher_tol": cfg.karcher_tol,
            "karcher_max_iter": cfg.karcher_max_iter,
        }
    elif isinstance(model, GmdModel):
        base["family"] = model.family
        base["state"] = {
            "basis_mean": _arr(model.basis.mean.values),
            "components": _arr(model.basis.components),
            "eigenvalues": _arr(model.basis.eigenvalues),
            "weights": _arr(model.gmm.weights),
            "means": _arr(model.gmm.means),
            "covariances": _arr(model.gmm.covariances),
            "use_max": model.use_max,
        }
    else:
        base["family"] = "sncm"
        base["state"] = {
            "mean": _arr(model.mean_fn.values),
            "modulation": _arr(model.modulation.values),
            "mean_type": model.mean_type,
            "modulation_type": model.modulation_type,
            "h1_rule": model.h1_rule,
            "alpha": model.alpha,
        }
    return base


def model_from_dict(d: dict, path=None):
    """Rebuild a detector; returns ``(model, detector_id, seed)``."""
    if not isinstance(d, dict) or "format_version" not in d:
        raise DataFormatError("not a model file (no format_version)", path)
    version = d["format_version"]
    if version != FORMAT_VERSION:
        raise DataFormatError(
            f"model format version {version!r} is not supported (this build reads version {FORMAT_VERSION})", path
        )
    try:
        grid = Grid(np.array(d["grid"], dtype=float))
        cal = NcmScores(np.array(d["cal_scores"], dtype=float))
        st = d["state"]
        family = d["family"]
        if family == "efdm":
            cfg = EfdmConfig(
                use_translation=bool(st["use_translation"]),
                weights=tuple(st["weights"]),
                seed=int(st["config_seed"]),
                karcher_tol=float(st["karcher_tol"]),
                karcher_max_iter=int(st["karcher_max_iter"]),
            )
            bounds = {k: (float(v[0]), float(v[1])) for k, v in st["bounds"].items()}
            model = EfdmModel(FunctionalDatum(grid, st["mean"]), bounds, cfg, cal)
        elif family in ("gmd", "gmdm"):
            basis = FpcaBasis(
                FunctionalDatum(grid, st["basis_mean"]),
                np.array(st["components"], dtype=float),
                np.array(st["eigenvalues"], dtype=float),
            )
            gmm = GmmModel(
                np.array(st["weights"], dtype=float),
                np.array(st["means"], dtype=float),
                np.array(st["covariances"], dtype=float),
            )
            model = GmdModel(basis, gmm, bool(st["use_max"]), cal, int(d["seed"]))
        elif family == "sncm":
            model = SncmModel(
                FunctionalDatum(grid, st["mean"]),
                FunctionalDatum(grid, st["modulation"]),
                st["mean_type"],
                st["modulation_type"],
                cal,
                st["h1_rule"],
                st["alpha"],
            )
        else:
            raise DataFormatError(f"unknown detector family {family!r}", path)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"model file is malformed: {exc!r}", path) from None
    return model, d["detector"], int(d["seed"])


def save_model(model, path, detector_id: str, seed: int) -> None:
    atomic_write_text(path, json.dumps(model_to_dict(model, detector_id, seed), indent=1) + "\n")


def load_model(path):
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except OSError as exc:
        raise DataFormatError(f"cannot open: {exc.strerror}", path) from None
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"not valid JSON: {exc.msg}", path, exc.lineno) from None
    return model_from_dict(d, path)
