"""Command-line interface.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 model fit failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .conformal import OUTLIER, check_alpha, detect_sample, loo_detect, split_full_training, split_sizes
from .detectors import KNOWN_FAMILIES, parse_detector, train_detector
from .errors import ConfigError, DataFormatError, FitFailureError, InvalidInputError
from .experiments import ExperimentConfig, run_experiment
from .io import atomic_write_text, load_model, read_sample, reports_to_csv, save_model, write_labels, write_sample
from .simgen import TEMPLATES, generate, mixed_test_set, paper_defaults

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_FIT = 4

log = logging.getLogger("efdm")


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {v}")
    return v


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {v}")
    return v


def _alpha(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {v}")
    return v


def _labels_path(out: Path) -> Path:
    return out.with_name(out.stem + ".labels.csv")


def _summary(reports) -> str:
    k = sum(r.label == OUTLIER for r in reports)
    return f"outliers: {k}/{len(reports)} (fraction {k / len(reports):.3f})"


def _emit_reports(reports, out):
    text = reports_to_csv(reports)
    if out is None:
        sys.stdout.write(text)
    else:
        atomic_write_text(out, text)
    print(_summary(reports), file=sys.stderr if out is None else sys.stdout)


def cmd_simulate(args) -> int:
    inlier = paper_defaults(args.template)
    if args.outlier_rate > 0:
        sample, truth = mixed_test_set(
            inlier, paper_defaults(args.outlier_template), args.n, args.outlier_rate, args.seed
        )
    else:
        sample, truth = generate(inlier, args.n, args.seed), np.zeros(args.n, dtype=bool)
    out = Path(args.out)
    labels = Path(args.labels) if args.labels else _labels_path(out)
    write_sample(sample, out)
    write_labels(truth, labels)
    print(f"wrote {sample.n} curves x {len(sample.grid)} points to {out}; labels to {labels}")
    return EXIT_OK


def cmd_train(args) -> int:
    spec = parse_detector(args.detector)
    if spec.needs_alpha and args.alpha is None:
        raise UsageError(f"{spec.id} uses the optimal modulation function and needs --alpha")
    s = read_sample(args.data)
    if s.n < 3:
        raise UsageError(f"training needs at least 3 curves, the file has {s.n}")
    split = split_full_training(s.n, args.seed)
    model = train_detector(spec.id, s, split, alpha=args.alpha, seed=args.seed)
    save_model(model, args.out, spec.id, args.seed)
    n1, n2 = split_sizes(s.n)
    print(f"trained {spec.id}: n1 = {n1}, n2 = {n2}, smallest usable alpha 1/(n2+1) = 1/{n2 + 1} = {1 / (n2 + 1):.4f}")
    print(f"model written to {args.out}")
    return EXIT_OK


def cmd_detect(args) -> int:
    model, det_id, model_seed = load_model(args.model)
    try:
        s = read_sample(args.data)
    except DataFormatError as exc:
        if "empty" in str(exc) or "no curves" in str(exc):
            raise UsageError(f"no curves to label: {exc}") from None
        raise
    if s.grid != model.grid:
        raise DataFormatError("curves are not on the model's grid", args.data)
    check_alpha(args.alpha, model.n_cal)
    seed = model_seed if args.seed is None else args.seed
    reports = detect_sample(model, s, args.alpha, seed, smoothed=not args.unsmoothed)
    _emit_reports(reports, args.out)
    return EXIT_OK


def cmd_loo(args) -> int:
    spec = parse_detector(args.detector)
    s = read_sample(args.data)
    if s.n < 4:
        raise UsageError(f"leave-one-out needs at least 4 curves, the file has {s.n}")
    reports = loo_detect(s, spec.id, args.alpha, args.seed, smoothed=not args.unsmoothed)
    _emit_reports(reports, args.out)
    return EXIT_OK


def _load_config(path: Path) -> dict:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"cannot open: {exc.strerror}", path) from None
    if path.suffix.lower() in (".yaml", ".yml"):
        import yaml

        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML: {exc}", str(path)) from None
    else:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON at line {exc.lineno}: {exc.msg}", str(path)) from None
    return data


def cmd_experiment(args) -> int:
    data = _load_config(Path(args.config))
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping of field names to values", str(args.config))
    data = dict(data)
    data["seed"] = args.seed
    for key in ("n_values", "alphas", "detectors", "outlier_rates"):
        if isinstance(data.get(key), list):
            data[key] = tuple(data[key])
    cfg = ExperimentConfig.from_mapping(data)
    table = run_experiment(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "results.csv", table.to_csv())
    written = [out / "results.csv"]
    if table.function_coverage:
        atomic_write_text(out / "function_coverage.csv", table.coverage_csv())
        written.append(out / "function_coverage.csv")
    print("wrote " + ", ".join(str(p) for p in written))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="efdm", description="Elastic conformal anomaly detection for functional data.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("simulate", help="generate simulated curves and a labels sidecar")
    q.add_argument("--template", choices=TEMPLATES, required=True)
    q.add_argument("--n", type=_positive_int, required=True)
    q.add_argument("--seed", type=_seed, required=True)
    q.add_argument("--out", required=True, help="sample CSV path")
    q.add_argument("--labels", help="labels CSV path (default: <out stem>.labels.csv)")
    q.add_argument("--outlier-rate", type=float, default=0.0, help="share of outlier curves (default 0)")
    q.add_argument("--outlier-template", choices=TEMPLATES, default="double_peaked")
    q.set_defaults(func=cmd_simulate)

    q = sub.add_parser("train", help="split, train and save a detector")
    q.add_argument("--data", required=True)
    q.add_argument("--detector", required=True, help=f"one of {', '.join(KNOWN_FAMILIES)}")
    q.add_argument("--seed", type=_seed, required=True)
    q.add_argument("--out", required=True, help="model file path")
    q.add_argument("--alpha", type=_alpha, help="significance level (needed by sncm1/sncm2)")
    q.set_defaults(func=cmd_train)

    q = sub.add_parser("detect", help="label curves with a saved detector")
    q.add_argument("--model", required=True)
    q.add_argument("--data", required=True)
    q.add_argument("--alpha", type=_alpha, required=True)
    q.add_argument("--seed", type=_seed, help="seed for the tie-breaking draws (default: the model's seed)")
    q.add_argument("--out", help="report CSV path (default: stdout)")
    q.add_argument("--unsmoothed", action="store_true", help="use the unsmoothed conformal p-value")
    q.set_defaults(func=cmd_detect)

    q = sub.add_parser("loo", help="leave-one-out labeling of a single data set")
    q.add_argument("--data", required=True)
    q.add_argument("--detector", required=True)
    q.add_argument("--alpha", type=_alpha, required=True)
    q.add_argument("--seed", type=_seed, required=True)
    q.add_argument("--out", help="report CSV path (default: stdout)")
    q.add_argument("--unsmoothed", action="store_true")
    q.set_defaults(func=cmd_loo)

    q = sub.add_parser("experiment", help="run a simulation experiment from a config file")
    q.add_argument("--config", required=True, help="JSON or YAML file with ExperimentConfig fields")
    q.add_argument("--seed", type=_seed, required=True, help="overrides any seed in the config")
    q.add_argument("--out", default=".", help="output directory (default: current directory)")
    q.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except FitFailureError as exc:
        print(f"error: fit failure: {exc}", file=sys.stderr)
        return EXIT_FIT
    except (UsageError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        name = exc.filename if exc.filename is not None else ""
        print(f"error: {name}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
