"""Command line: fetch, train, predict, eval and reproduce.

Exit codes: 0 success, 1 usage error, 2 data error, 3 solver did not converge.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .bench import DISPLAY, emit_report, load_config, preset, report_markdown, run_cv_experiment
from .data import (DataError, Dataset, apply_standardizer, fetch_dataset, fit_standardizer,
                   load_dataset, load_registry)
from .kernel import KernelError, paper20_bank, parse_kernel
from .mkl import MklParams, train_mkl
from .models import (ModelError, decision_value, distance_report, load_model, predict, save_model,
                     train_fda, train_kernel_fda, train_svm_family, train_svm_fda)
from .qp import SolverError, SvmMParams

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER = 0, 1, 2, 3

ALGOS = {"svm": "svm", "svm-m": "svm_m", "eps-svm": "eps_svm", "svm-fda": "svm_fda", "fda": "fda",
         "mkl-m": "mkl_m", "eps-mkl": "eps_mkl", "mkl-gamma": "mkl_gamma"}

log = logging.getLogger("metric_svm")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _data_args(p, required=True):
    p.add_argument("--data", required=required,
                   help="data file (csv or sparse), or the name of a registry dataset")
    p.add_argument("--format", choices=("csv", "sparse"), help="file format (default: by suffix)")
    p.add_argument("--label-col", type=int, default=-1, help="label column for csv (default: last)")
    p.add_argument("--cache-dir", help="dataset cache directory (default: $METRIC_SVM_CACHE)")


def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="metric-svm", description="Margin/within-class SVM and MKL toolkit.")
    top.add_argument("--version", action="version", version=__version__)
    top.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = top.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fetch", help="download and cache a benchmark dataset")
    f.add_argument("name")
    f.add_argument("--cache-dir")
    f.add_argument("--json", action="store_true", help="machine-readable output")

    t = sub.add_parser("train", help="train a model and write it as JSON")
    t.add_argument("--algo", required=True, choices=sorted(ALGOS))
    t.add_argument("--kernel", default="linear", help="kind[:param], e.g. linear, poly:3, gaussian:0.5")
    t.add_argument("--bank", default="paper20", choices=("paper20",), help="kernel bank for MKL")
    t.add_argument("--c1", type=float, default=1.0)
    t.add_argument("--c2", type=float, help="band slack weight (default c1/3)")
    t.add_argument("--epsilon", type=float, default=3.0, help="band width in margin units (svm-m, mkl-m)")
    t.add_argument("--lambda", dest="lam", type=float, default=1.0, help="within-class weight (svm-fda)")
    t.add_argument("--tol", type=float, default=1e-6)
    t.add_argument("--max-iter", type=int, default=1_000_000)
    t.add_argument("--no-normalize", action="store_true", help="use raw kernel values")
    t.add_argument("--rbf-convention", choices=("2sigma2", "sigma2"), default="2sigma2")
    t.add_argument("--no-standardize", action="store_true", help="train on raw features")
    t.add_argument("--out", required=True)
    t.add_argument("--json", action="store_true")
    _data_args(t)

    p = sub.add_parser("predict", help="write predictions for a data file")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-labels", action="store_true", help="the data file has feature columns only")
    p.add_argument("--json", action="store_true")
    _data_args(p)

    e = sub.add_parser("eval", help="error rate and distance diagnostics of a model")
    e.add_argument("--model", required=True)
    e.add_argument("--lambda", dest="lam", type=float, default=1.0, help="trade-off for F1..F4")
    e.add_argument("--json", action="store_true")
    _data_args(e)

    r = sub.add_parser("reproduce", help="run a nested cross-validation benchmark")
    r.add_argument("--preset", choices=("table1", "table2"))
    r.add_argument("--config", help="JSON experiment config (fields override the preset)")
    r.add_argument("--datasets", help="comma-separated dataset names")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", default=None, help="report directory (default: reports/<preset>)")
    r.add_argument("--formats", default="csv,json,markdown")
    r.add_argument("--no-normalize", action="store_true")
    r.add_argument("--rbf-convention", choices=("2sigma2", "sigma2"))
    r.add_argument("--standardize-global", action="store_true",
                   help="standardize each dataset once instead of per training fold")
    r.add_argument("--cache-dir")
    r.add_argument("--json", action="store_true")
    return top


# --- helpers ----------------------------------------------------------------

def _load(args, labels=True) -> Dataset:
    path = Path(args.data)
    if not path.exists():
        if args.data in load_registry():
            return fetch_dataset(args.data, cache_dir=args.cache_dir)
        raise DataError(f"no such file: {args.data}")
    if labels:
        return load_dataset(path, format=args.format, label_col=args.label_col)
    return _features_only(path)


def _features_only(path: Path) -> np.ndarray:
    rows = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith(("@", "#", "%")):
            continue
        cells = [c.strip() for c in line.split(",")]
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            if rows:
                raise DataError(f"non-numeric value in {line!r}") from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise DataError(f"{path}: empty or ragged feature file")
    return np.array(rows)


def _emit(args, payload: dict, text: str) -> None:
    print(json.dumps(payload, indent=1) if args.json else text)


def _svm_params(args) -> SvmMParams:
    c2 = args.c1 / 3.0 if args.c2 is None else args.c2
    try:
        return SvmMParams(c1=args.c1, c2=c2, epsilon=args.epsilon, tol=args.tol, max_iter=args.max_iter)
    except SolverError as exc:
        raise UsageError(str(exc)) from None


def _status(model) -> str:
    sol = model.diagnostics.get("dual")
    return sol.status if sol is not None else "converged"


# --- subcommands --------------------------------------------------------------

def cmd_fetch(args) -> int:
    data = fetch_dataset(args.name, cache_dir=args.cache_dir)
    payload = {"name": data.name, "n": data.n, "d": data.d,
               "label_map": data.metadata.get("label_map"), "source": data.metadata.get("source")}
    _emit(args, payload, f"{data.name}: n={data.n} d={data.d} labels={payload['label_map']}")
    return EXIT_OK


def cmd_train(args) -> int:
    algo = ALGOS[args.algo]
    params = _svm_params(args)
    try:
        kernel = parse_kernel(args.kernel, not args.no_normalize, args.rbf_convention)
    except KernelError as exc:
        raise UsageError(str(exc)) from None
    if not args.lam >= 0:
        raise UsageError("--lambda must be non-negative")
    data = _load(args)
    data.require_both_classes()
    std = None
    if not args.no_standardize:
        std = fit_standardizer(data)
        data = apply_standardizer(std, data)
    if algo in ("svm", "svm_m", "eps_svm"):
        model = train_svm_family(data, kernel, params, algo)
    elif algo == "svm_fda":
        if kernel.kind != "linear":
            raise UsageError("svm-fda works in the input space only; use --kernel linear")
        model = train_svm_fda(data, params, args.lam, normalized=kernel.normalized)
    elif algo == "fda":
        model = train_fda(data) if kernel.kind == "linear" else train_kernel_fda(data, kernel)
    else:
        bank = paper20_bank(not args.no_normalize)
        model = train_mkl(data, bank, MklParams(svm=params), algo)
    model = _with_standardizer(model, std)
    save_model(model, args.out)
    err = 100.0 * float(np.mean(predict(model, data) != data.labels))
    status = _status(model)
    payload = {"model": str(args.out), "kind": model.kind, "n_support": model.n_support,
               "train_error_pct": err, "status": status}
    if model.mu is not None:
        payload["mu"] = model.mu.tolist()
    _emit(args, payload, f"wrote {args.out}: {DISPLAY[model.kind]} with {model.n_support} support "
                         f"vectors, training error {err:.2f}% ({status})")
    if status != "converged":
        print(f"warning: solver stopped with status {status}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def _with_standardizer(model, std):
    return replace(model, standardizer=std)


def _prepare(model, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.d:
        raise DataError(f"model expects d={model.d} features, data has {X.shape[1]}")
    return model.standardizer.transform(X) if model.standardizer is not None else X


def cmd_predict(args) -> int:
    model = load_model(args.model)
    if args.no_labels:
        X = _features_only(Path(args.data))
        y = None
    else:
        data = _load(args)
        X, y = data.features, data.labels
    Z = _prepare(model, X)
    f = decision_value(model, Z)
    pred = np.where(f >= 0, 1, -1)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "prediction", "decision_value"])
    for i, (p_, v) in enumerate(zip(pred, f)):
        w.writerow([i, int(p_), repr(float(v))])
    try:
        Path(args.out).write_text(buf.getvalue())
    except OSError as exc:
        raise DataError(f"cannot write {args.out}: {exc}") from None
    payload = {"out": str(args.out), "n": int(pred.size)}
    if y is not None:
        payload["error_pct"] = 100.0 * float(np.mean(pred != y))
    _emit(args, payload, f"wrote {pred.size} predictions to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_model(args.model)
    data = _load(args)
    Z = _prepare(model, data.features)
    std_data = Dataset(Z, data.labels, data.name)
    err = 100.0 * float(np.mean(predict(model, Z) != data.labels))
    payload = {"error_pct": err, "n": data.n}
    lines = [f"{data.name}: error {err:.2f}% on {data.n} instances"]
    try:
        rep = distance_report(model, std_data, args.lam)
        payload["distances"] = rep.to_dict()
        lines.append(f"margin {rep.margin:.6g}  d_B {rep.d_b:.6g}")
        lines.append(f"d_W1 (+1, -1) {rep.d_w1_per_class[0]:.6g} {rep.d_w1_per_class[1]:.6g}")
        lines.append(f"d_W2 (+1, -1) {rep.d_w2_per_class[0]:.6g} {rep.d_w2_per_class[1]:.6g}")
        if rep.d_w3 is not None:
            lines.append(f"d_W3 {rep.d_w3:.6g}")
        lines.append(f"F1 {rep.f1:.6g}  F2 {rep.f2:.6g}  F3 {rep.f3:.6g}  F4 {rep.f4:.6g}  (lambda={args.lam:g})")
    except (ModelError, DataError) as exc:
        payload["distances"] = None
        lines.append(f"distances unavailable: {exc}")
    _emit(args, payload, "\n".join(lines))
    return EXIT_OK


def cmd_reproduce(args) -> int:
    overrides = {}
    if args.datasets:
        overrides["datasets"] = tuple(s.strip() for s in args.datasets.split(",") if s.strip())
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.no_normalize:
        overrides["normalize"] = False
    if args.rbf_convention:
        overrides["rbf_convention"] = args.rbf_convention
    if args.standardize_global:
        overrides["standardize_global"] = True
    try:
        if args.config:
            cfg = load_config(args.config)
            if overrides:
                cfg = replace(cfg, **overrides)
        elif args.preset:
            cfg = preset(args.preset, **overrides)
        else:
            raise UsageError("reproduce needs --preset or --config")
    except (ValueError, TypeError) as exc:
        if isinstance(exc, DataError):
            raise
        raise UsageError(str(exc)) from None
    out = Path(args.out or Path("reports") / cfg.name)
    progress = (lambda m: log.info("running %s", m))
    report = run_cv_experiment(cfg, cache_dir=args.cache_dir, progress=progress)
    formats = tuple(s.strip() for s in args.formats.split(","))
    written = emit_report(report, out, formats)
    failed = [f"{c.dataset}/{c.kernel}/{c.algorithm}" for c in report.cells.values() if c.failed]
    hits = sum(c.max_iter_hits for c in report.cells.values())
    payload = {"out": str(out), "files": [str(p) for p in written], "failed_cells": failed,
               "max_iter_solves": hits, "runtime_s": round(report.runtime_s, 1)}
    text = report_markdown(report)
    text += f"\nwrote {', '.join(str(p) for p in written)} in {report.runtime_s:.1f}s"
    if hits:
        text += f"\n{hits} solves stopped at the iteration cap"
    if failed:
        text += f"\nfailed cells: {', '.join(failed)}"
    _emit(args, payload, text)
    return EXIT_DATA if failed and len(failed) == len(report.cells) else EXIT_OK


COMMANDS = {"fetch": cmd_fetch, "train": cmd_train, "predict": cmd_predict, "eval": cmd_eval,
            "reproduce": cmd_reproduce}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"metric-svm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, SolverError, ModelError, KernelError) as exc:
        print(f"metric-svm: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
