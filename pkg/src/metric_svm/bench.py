"""Nested cross-validation benchmark, McNemar scoring and report files."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import DataError, Dataset, fetch_dataset, fit_standardizer, load_dataset, make_folds
from .kernel import KernelSpec, normalized_cross_kernel, paper20_bank, parse_kernel
from .mkl import MKL_KINDS, MklParams, solve_mkl
from .models import ModelError, compute_scatter, fda_ridge, resolve_params, whitening
from .qp import SolverError, SvmMParams, solve_dual

log = logging.getLogger(__name__)

SVM_ALGOS = ("svm_m", "eps_svm", "svm")
LINEAR_ONLY = ("svm_fda",)
ALL_ALGOS = ("svm_m", "eps_svm", "svm_fda", "svm", "fda") + MKL_KINDS
CHI2_1DOF_05 = 3.841
BANK_CELL = "paper20"

DISPLAY = {"svm_m": "SVM_m", "eps_svm": "eps-SVM", "svm_fda": "SVM-FDA", "svm": "SVM",
           "fda": "FDA", "mkl_m": "MKL_m", "eps_mkl": "eps-MKL", "mkl_gamma": "MKL_gamma"}


# --- configuration --------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines an experiment's output.

    ``kernels`` lists single kernels in ``kind[:param]`` syntax; MKL
    algorithms ignore it and run once per dataset on ``bank``. Solver
    settings apply to every dual solve; a solve that exhausts
    ``solver_max_iter`` keeps its feasible iterate and is counted in the
    cell diagnostics.
    """

    name: str = "custom"
    datasets: tuple = ("sonar",)
    algorithms: tuple = ("svm_m", "eps_svm", "svm_fda", "svm", "fda")
    kernels: tuple = ("linear", "poly:2", "poly:3", "gaussian:1")
    bank: str | None = None
    outer_k: int = 10
    inner_k: int = 10
    seed: int = 0
    c_grid: tuple = (0.1, 1.0, 10.0, 100.0, 1000.0)
    c2_ratio: float = 1.0 / 3.0
    epsilon: float = 3.0
    lambda_grid: tuple = (0.1, 1.0, 10.0, 100.0, 1000.0)
    normalize: bool = True
    rbf_convention: str = "2sigma2"
    standardize_global: bool = False
    solver_tol: float = 1e-3
    solver_max_iter: int = 20_000
    mkl_mu_tol: float = 1e-4
    mkl_outer_max_iter: int = 200
    mkl_inner_tol: float = 1e-8
    data_paths: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("datasets", "algorithms", "kernels", "c_grid", "lambda_grid"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.datasets or not self.algorithms or not self.c_grid or not self.lambda_grid:
            raise ValueError("datasets, algorithms and grids must be non-empty")
        if self.outer_k < 2 or self.inner_k < 2:
            raise ValueError("outer_k and inner_k must be at least 2")
        unknown = set(self.algorithms) - set(ALL_ALGOS)
        if unknown:
            raise ValueError(f"unknown algorithms {sorted(unknown)}; choose from {ALL_ALGOS}")
        if any(a in MKL_KINDS for a in self.algorithms) and self.bank is None:
            raise ValueError("MKL algorithms need a kernel bank")
        if any(a not in MKL_KINDS for a in self.algorithms) and not self.kernels:
            raise ValueError("single-kernel algorithms need at least one kernel")

    def kernel_specs(self) -> tuple:
        return tuple(parse_kernel(k, self.normalize, self.rbf_convention) for k in self.kernels)

    def bank_specs(self) -> tuple:
        if self.bank != BANK_CELL:
            raise ValueError(f"unknown bank preset {self.bank!r}")
        specs = paper20_bank(self.normalize)
        return tuple(replace(s, rbf_convention=self.rbf_convention) if s.kind == "gaussian" else s
                     for s in specs)

    def svm_params(self, c1: float) -> SvmMParams:
        return SvmMParams(c1=c1, c2=c1 * self.c2_ratio, epsilon=self.epsilon,
                          tol=self.solver_tol, max_iter=self.solver_max_iter)

    def to_dict(self) -> dict:
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config fields {sorted(extra)}")
        return cls(**d)


PRESETS = {
    "table1": dict(name="table1", datasets=("sonar", "wpbc", "ionosphere", "wdbc", "liver", "musk1"),
                   algorithms=("svm_m", "eps_svm", "svm_fda", "svm", "fda"),
                   kernels=("linear", "poly:2", "poly:3", "gaussian:1")),
    "table2": dict(name="table2", datasets=("sonar", "wpbc", "ionosphere", "wdbc", "liver", "musk1"),
                   algorithms=("mkl_m", "eps_mkl", "mkl_gamma"), kernels=(), bank=BANK_CELL),
}


def preset(name: str, **overrides) -> ExperimentConfig:
    key = name.replace("reproduce-", "")
    if key not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return ExperimentConfig(**{**PRESETS[key], **overrides})


def load_config(path) -> ExperimentConfig:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read config {path}: {exc}") from None
    base = d.pop("preset", None)
    if base:
        return preset(base, **d)
    return ExperimentConfig.from_dict(d)


# --- results --------------------------------------------------------------

@dataclass
class CellResult:
    dataset: str
    kernel: str
    algorithm: str
    fold_errors: list = field(default_factory=list)
    correct: list = field(default_factory=list)
    selected: list = field(default_factory=list)
    max_iter_hits: int = 0
    solves: int = 0
    failed: str | None = None

    @property
    def error(self) -> float:
        return float(np.mean(self.fold_errors)) if self.fold_errors and not self.failed else math.nan

    @property
    def error_std(self) -> float:
        return float(np.std(self.fold_errors)) if self.fold_errors and not self.failed else math.nan

    def to_dict(self) -> dict:
        return {"dataset": self.dataset, "kernel": self.kernel, "algorithm": self.algorithm,
                "fold_errors": list(self.fold_errors), "correct": [bool(c) for c in self.correct],
                "selected": list(self.selected), "max_iter_hits": self.max_iter_hits,
                "solves": self.solves, "failed": self.failed}

    @classmethod
    def from_dict(cls, d: dict) -> "CellResult":
        return cls(**d)


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    cells: dict = field(default_factory=dict)
    datasets: dict = field(default_factory=dict)
    runtime_s: float = 0.0

    def key(self, dataset, kernel, algorithm):
        return (dataset, kernel, algorithm)

    def add(self, cell: CellResult) -> None:
        self.cells[self.key(cell.dataset, cell.kernel, cell.algorithm)] = cell

    def get(self, dataset, kernel, algorithm) -> CellResult | None:
        return self.cells.get((dataset, kernel, algorithm))

    def rows(self) -> list:
        """``(dataset, kernel)`` pairs in configuration order."""
        out = []
        for ds in self.config.datasets:
            for kern in _kernel_labels(self.config):
                if any(self.get(ds, kern, a) for a in self.config.algorithms):
                    out.append((ds, kern))
        return out

    def to_dict(self) -> dict:
        return {"config": self.config.to_dict(),
                "datasets": self.datasets,
                "cells": [c.to_dict() for c in self.cells.values()],
                "runtime_s": self.runtime_s}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        rep = cls(ExperimentConfig.from_dict(d["config"]), datasets=d.get("datasets", {}),
                  runtime_s=d.get("runtime_s", 0.0))
        for c in d["cells"]:
            rep.add(CellResult.from_dict(c))
        return rep


def _kernel_labels(config: ExperimentConfig) -> list:
    labels = []
    if any(a not in MKL_KINDS for a in config.algorithms):
        labels += [s.label for s in config.kernel_specs()]
    if any(a in MKL_KINDS for a in config.algorithms):
        labels.append(config.bank)
    return labels


# --- McNemar and scores -----------------------------------------------------

@dataclass(frozen=True)
class McNemarResult:
    b: int
    c: int
    statistic: float
    significant: bool


def mcnemar(correct_a, correct_b) -> McNemarResult:
    """Continuity-corrected McNemar test at the 0.05 level.

    ``b`` counts instances A got wrong and B right, ``c`` the reverse.
    """
    a = np.asarray(correct_a, dtype=bool)
    bb = np.asarray(correct_b, dtype=bool)
    if a.shape != bb.shape:
        raise ValueError(f"correctness vectors differ in length: {a.shape} vs {bb.shape}")
    b = int(np.sum(~a & bb))
    c = int(np.sum(a & ~bb))
    if b + c == 0:
        return McNemarResult(b, c, 0.0, False)
    stat = (abs(b - c) - 1.0) ** 2 / (b + c)
    return McNemarResult(b, c, stat, stat > CHI2_1DOF_05)


def pair_points(correct_a, correct_b) -> tuple:
    """Points for A and B: 1/0 to the significantly better one, else 0.5 each."""
    res = mcnemar(correct_a, correct_b)
    if not res.significant:
        return 0.5, 0.5
    return (1.0, 0.0) if res.c > res.b else (0.0, 1.0)


@dataclass
class ScoreTable:
    cells: dict = field(default_factory=dict)
    totals: dict = field(default_factory=dict)
    max_points: dict = field(default_factory=dict)


def score_table(report: ExperimentReport) -> ScoreTable:
    """Pairwise McNemar points per (dataset, kernel) cell, totalled per kernel."""
    table = ScoreTable()
    algos = list(report.config.algorithms)
    for ds, kern in report.rows():
        present = []
        for a in algos:
            cell = report.get(ds, kern, a)
            if cell is None or cell.failed:
                continue
            if not cell.correct:
                raise ValueError(f"cell {ds}/{kern}/{a} has no correctness vector")
            present.append(a)
        pts = {a: 0.0 for a in present}
        for a, b in itertools.combinations(present, 2):
            pa, pb = pair_points(report.get(ds, kern, a).correct, report.get(ds, kern, b).correct)
            pts[a] += pa
            pts[b] += pb
        table.cells[(ds, kern)] = pts
        tot = table.totals.setdefault(kern, {a: 0.0 for a in algos})
        for a, p in pts.items():
            tot[a] += p
        table.max_points[kern] = table.max_points.get(kern, 0) + max(len(present) - 1, 0)
    return table


# --- the experiment ---------------------------------------------------------

def _load(config: ExperimentConfig, name: str, cache_dir=None) -> Dataset:
    path = config.data_paths.get(name)
    if path:
        return load_dataset(path, name=name)
    return fetch_dataset(name, cache_dir=cache_dir)


def _inner_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


class _Tally:
    def __init__(self):
        self.solves = 0
        self.max_iter_hits = 0

    def solve(self, K, y, params, init=None):
        sol = solve_dual(K, y, params, init=init)
        self.solves += 1
        if sol.status != "converged":
            self.max_iter_hits += 1
        return sol


def _errors(K_test_train, y_train, y_test, sol) -> np.ndarray:
    f = K_test_train @ (y_train * sol.delta) + sol.bias
    pred = np.where(f >= 0, 1, -1)
    return pred != y_test


def _select_c(config, tally, K, y, inner_folds, kind):
    """Inner-CV error count per C, sweeping C upward with warm starts inside each fold."""
    errs = np.zeros(len(config.c_grid), dtype=int)
    for tr, te in inner_folds.splits():
        Ktr = np.ascontiguousarray(K[np.ix_(tr, tr)])
        Kte = K[np.ix_(te, tr)]
        prev = None
        for ci, c in enumerate(config.c_grid):
            p = resolve_params(kind, config.svm_params(c))
            sol = tally.solve(Ktr, y[tr], p, init=prev)
            prev = (sol.alpha, sol.beta)
            errs[ci] += int(_errors(Kte, y[tr], y[te], sol).sum())
    return errs


def _first_min(errs):
    """Index of the smallest error; the first grid entry wins ties."""
    return int(np.argmin(np.asarray(errs)))


def _fda_linear(Xtr, ytr, Xte):
    st = compute_scatter(Dataset(Xtr, ytr))
    r = fda_ridge(float(np.trace(st.s_w)), Xtr.shape[1])
    w = np.linalg.solve(st.s_w + r * np.eye(Xtr.shape[1]), st.m1 - st.m2)
    b = -float(w @ (st.m1 + st.m2)) / 2.0
    return Xte @ w + b


def _fda_kernel(Ktr, ytr, Kte):
    n = ytr.size
    N = np.zeros((n, n))
    means = []
    for cls in (1, -1):
        idx = np.flatnonzero(ytr == cls)
        Kc = Ktr[:, idx]
        means.append(Kc.mean(1))
        centred = Kc - Kc.mean(1, keepdims=True)
        N += centred @ centred.T
    N = 0.5 * (N + N.T)
    r = fda_ridge(float(np.trace(N)), n)
    a = np.linalg.solve(N + r * np.eye(n), means[0] - means[1])
    b = -float(a @ (means[0] + means[1])) / 2.0
    return Kte @ a + b


class _Runner:
    def __init__(self, config: ExperimentConfig, cache_dir=None, progress=None):
        self.config = config
        self.cache_dir = cache_dir
        self.progress = progress or (lambda msg: None)
        if list(config.c_grid) != sorted(config.c_grid):
            raise ValueError("c_grid must be ascending (warm starts sweep C upward)")

    def run(self) -> ExperimentReport:
        cfg = self.config
        t0 = time.perf_counter()
        report = ExperimentReport(cfg)
        single = [a for a in cfg.algorithms if a not in MKL_KINDS]
        multi = [a for a in cfg.algorithms if a in MKL_KINDS]
        for ds_name in cfg.datasets:
            try:
                data = _load(cfg, ds_name, self.cache_dir)
                data.require_both_classes()
                outer = make_folds(data, cfg.outer_k, cfg.seed)
            except DataError as exc:
                log.error("dataset %s unavailable: %s", ds_name, exc)
                report.datasets[ds_name] = {"failed": str(exc)}
                for kern in _kernel_labels(cfg):
                    for a in cfg.algorithms:
                        if a in MKL_KINDS and kern != cfg.bank or a not in MKL_KINDS and kern == cfg.bank:
                            continue
                        if a in LINEAR_ONLY and kern != "linear":
                            continue
                        report.add(CellResult(ds_name, kern, a, failed=f"data: {exc}"))
                continue
            report.datasets[ds_name] = {"n": data.n, "d": data.d,
                                        "n_pos": int((data.labels > 0).sum())}
            folds = self._fold_data(data, outer)
            for spec in (cfg.kernel_specs() if single else ()):
                for a in single:
                    if a in LINEAR_ONLY and spec.kind != "linear":
                        continue
                    self.progress(f"{ds_name} {spec.label} {a}")
                    report.add(self._cell(ds_name, spec.label, a, data, folds,
                                          lambda f, a=a, spec=spec: self._single(a, spec, f)))
            if multi:
                bank = cfg.bank_specs()
                for a in multi:
                    self.progress(f"{ds_name} {cfg.bank} {a}")
                    report.add(self._cell(ds_name, cfg.bank, a, data, folds,
                                          lambda f, a=a: self._mkl(a, bank, f)))
        report.runtime_s = time.perf_counter() - t0
        return report

    def _fold_data(self, data, outer):
        cfg = self.config
        out = []
        glob = fit_standardizer(data) if cfg.standardize_global else None
        for f in range(cfg.outer_k):
            tr, te = outer.train_indices(f), outer.test_indices(f)
            std = glob or fit_standardizer(data.subset(tr))
            X = std.transform(data.features)
            inner = make_folds(data.labels[tr], cfg.inner_k, _inner_seed(cfg.seed, f))
            out.append({"train": tr, "test": te, "X": X, "y": data.labels.astype(float),
                        "inner": inner, "grams": {}})
        return out

    def _gram(self, fold, spec: KernelSpec):
        key = (spec.kind, spec.degree, spec.sigma, spec.normalized, spec.rbf_convention)
        g = fold["grams"].get(key)
        if g is None:
            # outer-train rows first, then outer-test rows
            idx = np.concatenate([fold["train"], fold["test"]])
            Xo = fold["X"][idx]
            g = normalized_cross_kernel(spec, Xo, Xo)
            g = 0.5 * (g + g.T)
            if spec.normalized:
                np.fill_diagonal(g, 1.0)
            fold["grams"][key] = g
        return g

    def _cell(self, ds, kern, algo, data, folds, fn) -> CellResult:
        cell = CellResult(ds, kern, algo)
        correct = np.zeros(data.n, dtype=bool)
        try:
            for fold in folds:
                wrong, sel, tally = fn(fold)
                te = fold["test"]
                correct[te] = ~wrong
                cell.fold_errors.append(100.0 * float(wrong.mean()))
                cell.selected.append(sel)
                cell.solves += tally.solves
                cell.max_iter_hits += tally.max_iter_hits
            cell.correct = correct.tolist()
        except (SolverError, DataError, ModelError, ValueError, np.linalg.LinAlgError) as exc:
            log.error("cell %s/%s/%s failed: %s", ds, kern, algo, exc)
            cell.failed = f"{type(exc).__name__}: {exc}"
            cell.correct = []
        return cell

    def _single(self, algo, spec, fold):
        cfg = self.config
        tally = _Tally()
        ntr = fold["train"].size
        y = fold["y"]
        ytr = y[fold["train"]]
        yte = y[fold["test"]]
        if algo == "fda":
            if spec.kind == "linear":
                f = _fda_linear(fold["X"][fold["train"]], ytr, fold["X"][fold["test"]])
            else:
                G = self._gram(fold, spec)
                f = _fda_kernel(G[:ntr, :ntr], ytr, G[ntr:, :ntr])
            return np.where(f >= 0, 1, -1) != yte, {}, tally
        if algo == "svm_fda":
            return self._svm_fda(spec, fold, tally)
        G = self._gram(fold, spec)
        Ktr = G[:ntr, :ntr]
        errs = _select_c(cfg, tally, Ktr, ytr, fold["inner"], algo)
        ci = _first_min(errs)
        p = resolve_params(algo, cfg.svm_params(cfg.c_grid[ci]))
        sol = tally.solve(np.ascontiguousarray(Ktr), ytr, p)
        wrong = _errors(G[ntr:, :ntr], ytr, yte, sol)
        return wrong, {"c1": cfg.c_grid[ci], "inner_errors": errs.tolist()}, tally

    def _svm_fda(self, spec, fold, tally):
        cfg = self.config
        Xtr = fold["X"][fold["train"]]
        Xte = fold["X"][fold["test"]]
        y = fold["y"]
        ytr, yte = y[fold["train"]], y[fold["test"]]
        lin = KernelSpec("linear", normalized=spec.normalized)
        inner = fold["inner"]
        errs = np.zeros((len(cfg.c_grid), len(cfg.lambda_grid)), dtype=int)
        for tr, te in inner.splits():
            s_w = compute_scatter(Dataset(Xtr[tr], ytr[tr])).s_w
            for li, lam in enumerate(cfg.lambda_grid):
                T = whitening(s_w, lam)
                Z = Xtr @ T.T
                K = normalized_cross_kernel(lin, Z, Z)
                Ktr = np.ascontiguousarray(K[np.ix_(tr, tr)])
                Kte = K[np.ix_(te, tr)]
                prev = None
                for ci, c in enumerate(cfg.c_grid):
                    p = replace(cfg.svm_params(c), epsilon=math.inf)
                    sol = tally.solve(Ktr, ytr[tr], p, init=prev)
                    prev = (sol.alpha, sol.beta)
                    errs[ci, li] += int(_errors(Kte, ytr[tr], ytr[te], sol).sum())
        # smallest C first, then smallest lambda, among equal inner errors
        ci, li = np.unravel_index(int(np.argmin(errs)), errs.shape)
        c, lam = cfg.c_grid[ci], cfg.lambda_grid[li]
        T = whitening(compute_scatter(Dataset(Xtr, ytr)).s_w, lam)
        Ztr, Zte = Xtr @ T.T, Xte @ T.T
        Ktr = normalized_cross_kernel(lin, Ztr, Ztr)
        Ktr = np.ascontiguousarray(0.5 * (Ktr + Ktr.T))
        sol = tally.solve(Ktr, ytr, replace(cfg.svm_params(c), epsilon=math.inf))
        wrong = _errors(normalized_cross_kernel(lin, Zte, Ztr), ytr, yte, sol)
        return wrong, {"c1": c, "lambda": lam, "inner_errors": errs.tolist()}, tally

    def _mkl_params(self, algo, c):
        cfg = self.config
        svm = resolve_params(algo, replace(cfg.svm_params(c), max_iter=max(cfg.solver_max_iter, 100_000)))
        return MklParams(svm=svm, mu_tol=cfg.mkl_mu_tol, outer_max_iter=cfg.mkl_outer_max_iter,
                         inner_tol=cfg.mkl_inner_tol)

    def _mkl(self, algo, bank, fold):
        cfg = self.config
        tally = _Tally()
        ntr = fold["train"].size
        y = fold["y"]
        ytr, yte = y[fold["train"]], y[fold["test"]]
        stack = np.stack([self._gram(fold, s) for s in bank])
        Str = stack[:, :ntr, :ntr]
        errs = np.zeros(len(cfg.c_grid), dtype=int)
        for tr, te in fold["inner"].splits():
            S = np.ascontiguousarray(Str[:, tr][:, :, tr])
            Ste = Str[:, te][:, :, tr]
            warm = None
            for ci, c in enumerate(cfg.c_grid):
                mu0, init = warm or (None, None)
                sol = solve_mkl(S, ytr[tr], self._mkl_params(algo, c), mu0, init)
                tally.solves += sol.inner_solves
                tally.max_iter_hits += int(sol.inner.status != "converged")
                warm = (sol.mu, (sol.inner.alpha, sol.inner.beta))
                Kte = np.tensordot(sol.mu, Ste, axes=1)
                errs[ci] += int(_errors(Kte, ytr[tr], ytr[te], sol.inner).sum())
        ci = _first_min(errs)
        sol = solve_mkl(np.ascontiguousarray(Str), ytr, self._mkl_params(algo, cfg.c_grid[ci]))
        tally.solves += sol.inner_solves
        Kte = np.tensordot(sol.mu, stack[:, ntr:, :ntr], axes=1)
        wrong = _errors(Kte, ytr, yte, sol.inner)
        sel = {"c1": cfg.c_grid[ci], "inner_errors": errs.tolist(),
               "mu": [round(float(m), 6) for m in sol.mu], "mkl_status": sol.status}
        return wrong, sel, tally


def run_cv_experiment(config: ExperimentConfig, cache_dir=None, progress=None) -> ExperimentReport:
    """Nested cross-validation over every (dataset, kernel, algorithm) cell.

    One stratified outer split per dataset is shared by all algorithms, so
    the per-instance correctness vectors of a dataset line up for paired
    tests. Inside each outer fold the data are standardized on the training
    part, the hyperparameters are chosen by inner cross-validation on that
    same standardized training part (smallest C, then smallest lambda, wins
    ties), and the model is refit on the whole outer-training part.
    """
    return _Runner(config, cache_dir, progress).run()


# --- report files -----------------------------------------------------------

def _fmt(v: float) -> str:
    return f"{v:.2f}"


def report_table(report: ExperimentReport) -> tuple:
    """Header and rows of the error table (mean outer-fold error in percent)."""
    algos = list(report.config.algorithms)
    header = ["dataset", "kernel"] + [DISPLAY[a] for a in algos]
    rows = []
    for ds, kern in report.rows():
        row = [ds, kern]
        for a in algos:
            cell = report.get(ds, kern, a)
            if cell is None:
                row.append("")
            elif cell.failed:
                row.append("failed")
            else:
                row.append(_fmt(cell.error))
        rows.append(row)
    return header, rows


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def report_csv(report: ExperimentReport) -> str:
    return _csv_text(*report_table(report))


def scores_csv(report: ExperimentReport) -> str:
    table = score_table(report)
    header = ["kernel", "algorithm", "points", "max_points"]
    rows = []
    for kern, tot in table.totals.items():
        for a in report.config.algorithms:
            if a in tot and (a not in LINEAR_ONLY or kern == "linear") and \
                    ((a in MKL_KINDS) == (kern == report.config.bank)):
                rows.append([kern, DISPLAY[a], f"{tot[a]:.1f}", str(table.max_points[kern])])
    return _csv_text(header, rows)


def report_markdown(report: ExperimentReport) -> str:
    """Error table with every row minimum in bold, ties included."""
    header, rows = report_table(report)
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for row in rows:
        vals = [float(v) for v in row[2:] if v not in ("", "failed")]
        best = min(vals) if vals else None
        cells = row[:2]
        for v in row[2:]:
            if v not in ("", "failed") and float(v) == best:
                cells.append(f"**{v}**")
            else:
                cells.append(v)
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def report_json(report: ExperimentReport) -> str:
    return json.dumps(report.to_dict(), indent=1, sort_keys=True)


def emit_report(report: ExperimentReport, out_dir, formats=("csv", "json", "markdown")) -> list:
    """Write ``report.csv``, ``scores.csv``, ``report.json`` and ``report.md`` as requested."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for fmt in formats:
            if fmt == "csv":
                (out / "report.csv").write_text(report_csv(report))
                (out / "scores.csv").write_text(scores_csv(report))
                written += [out / "report.csv", out / "scores.csv"]
            elif fmt == "json":
                (out / "report.json").write_text(report_json(report))
                written.append(out / "report.json")
            elif fmt in ("markdown", "md", "markdown-table"):
                (out / "report.md").write_text(report_markdown(report))
                written.append(out / "report.md")
            else:
                raise ValueError(f"unknown report format {fmt!r}")
    except OSError as exc:
        raise DataError(f"cannot write report to {out}: {exc}") from None
    return written
