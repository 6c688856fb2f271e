"""Single-kernel trainers, prediction, distance diagnostics and model files."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import DataError, Dataset, Standardizer
from .kernel import KernelSpec, build_gram, normalized_cross_kernel
from .qp import DualSolution, SvmMParams, solve_dual

MODEL_VERSION = 1
SVM_KINDS = ("svm", "svm_m", "eps_svm")
MODEL_KINDS = SVM_KINDS + ("svm_fda", "fda", "mkl_m", "eps_mkl", "mkl_gamma")
PRUNE = 1e-12
LINEAR = KernelSpec("linear")


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class TrainedModel:
    """A trained decision function.

    Kernel models evaluate ``f(x) = sum_i c_i K(s_i, x) + b`` over the stored
    support rows ``s_i``; with ``transform`` set, both sides are mapped by
    ``T`` first. FDA models keep an explicit direction and evaluate
    ``w.x + b``. Multi-kernel models replace ``K`` by ``sum_k mu_k K_k``.
    """

    kind: str
    support_coef: np.ndarray
    bias: float
    kernel: KernelSpec | None
    sv_data: np.ndarray
    d: int
    transform: np.ndarray | None = None
    fda_direction: np.ndarray | None = None
    mu: np.ndarray | None = None
    bank: tuple | None = None
    standardizer: Standardizer | None = None
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ModelError(f"unknown model kind {self.kind!r}")
        for name in ("support_coef", "sv_data", "transform", "fda_direction", "mu"):
            v = getattr(self, name)
            if v is not None:
                v = np.array(v, dtype=float)
                v.setflags(write=False)
                object.__setattr__(self, name, v)
        if self.kind == "fda" and self.fda_direction is not None and not np.linalg.norm(self.fda_direction) > 0:
            raise ModelError("FDA direction has zero norm")

    @property
    def n_support(self) -> int:
        return int(np.count_nonzero(self.support_coef))


# --- kernel evaluation ----------------------------------------------------

def _rows(model: TrainedModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(getattr(X, "features", X), dtype=float))
    if X.shape[1] != model.d:
        raise DataError(f"model expects {model.d} features, got {X.shape[1]}")
    return X


def _mapped(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    return X if model.transform is None else X @ model.transform.T


def model_cross_kernel(model: TrainedModel, X) -> np.ndarray:
    """Kernel values between the support rows and ``X``, shape (n_sv, len(X))."""
    S = _mapped(model, model.sv_data)
    Z = _mapped(model, X)
    if model.mu is not None:
        out = np.zeros((S.shape[0], Z.shape[0]))
        for m, spec in zip(model.mu, model.bank):
            if m != 0.0:
                out += m * normalized_cross_kernel(spec, S, Z)
        return out
    return normalized_cross_kernel(model.kernel, S, Z)


def decision_value(model: TrainedModel, X) -> np.ndarray:
    """Decision values for the rows of ``X`` (already standardized)."""
    X = _rows(model, X)
    if model.fda_direction is not None:
        return X @ model.fda_direction + model.bias
    if model.sv_data.shape[0] == 0:
        return np.full(X.shape[0], model.bias)
    return model.support_coef @ model_cross_kernel(model, X) + model.bias


def predict(model: TrainedModel, X) -> np.ndarray:
    """Labels in {+1, -1}; a decision value of exactly 0 maps to +1."""
    return np.where(decision_value(model, X) >= 0, 1, -1)


def weight_norm_sq(model: TrainedModel) -> float:
    """``|w|^2 = c^T K c`` over the support expansion."""
    if model.fda_direction is not None:
        return float(model.fda_direction @ model.fda_direction)
    c = model.support_coef
    if c.size == 0:
        return 0.0
    K = model_cross_kernel(model, model.sv_data)
    return float(c @ K @ c)


# --- SVM family -----------------------------------------------------------

def resolve_params(kind: str, params: SvmMParams) -> SvmMParams:
    """Force epsilon for the fixed-band variants."""
    if kind in ("svm", "mkl_gamma"):
        return replace(params, epsilon=math.inf)
    if kind in ("eps_svm", "eps_mkl"):
        return replace(params, epsilon=0.0)
    if kind in ("svm_m", "mkl_m", "svm_fda"):
        return params
    raise ModelError(f"unknown kind {kind!r}")


def pack_kernel_model(kind, data: Dataset, sol: DualSolution, gram, params: SvmMParams,
                      kernel=None, transform=None, mu=None, bank=None, extra=None) -> TrainedModel:
    y = data.labels
    coef = sol.delta * y
    keep = np.flatnonzero(np.abs(coef) > 0)
    K = np.asarray(getattr(gram, "values", gram))
    yf = y * (K @ coef + sol.bias)
    diag = {"dual": sol, **slack_summary(yf, params)}
    if extra:
        diag.update(extra)
    return TrainedModel(kind=kind, support_coef=coef[keep], bias=sol.bias, kernel=kernel,
                        sv_data=data.features[keep], d=data.d, transform=transform,
                        mu=mu, bank=bank, diagnostics=diag)


def slack_summary(yf: np.ndarray, params: SvmMParams) -> dict:
    """Primal slacks implied by training margins: ``xi`` below the margin, ``eta`` beyond the band."""
    xi = np.maximum(0.0, 1.0 - yf)
    out = {"xi_sum": float(xi.sum()), "n_margin_violations": int(np.sum(xi > 1e-9))}
    if not params.beta_pinned:
        eta = np.maximum(0.0, yf - 1.0 - params.epsilon)
        out.update(eta_sum=float(eta.sum()), n_band_violations=int(np.sum(eta > 1e-9)))
    return out


def train_svm_family(data: Dataset, kernel: KernelSpec, params: SvmMParams, kind: str = "svm_m",
                     gram=None, init=None) -> TrainedModel:
    """Train SVM (``epsilon`` forced to infinity), SVM_m, or eps-SVM (``epsilon`` forced to 0).

    ``gram`` may pass a precomputed Gram matrix of ``data`` under ``kernel``.
    """
    if kind not in SVM_KINDS:
        raise ModelError(f"kind must be one of {SVM_KINDS}, got {kind!r}")
    data.require_both_classes()
    p = resolve_params(kind, params)
    if gram is None:
        gram = build_gram(kernel, data)
    sol = solve_dual(gram, data.labels, p, init=init)
    return pack_kernel_model(kind, data, sol, gram, p, kernel=kernel)


# --- scatter and FDA ------------------------------------------------------

@dataclass(frozen=True)
class ScatterStats:
    m1: np.ndarray
    m2: np.ndarray
    s_w: np.ndarray
    s_b: np.ndarray
    s_t: np.ndarray


def compute_scatter(data: Dataset) -> ScatterStats:
    """Class means and unweighted scatter matrices.

    ``m1`` is the +1 class mean. ``S_B = (m1 - m2)(m1 - m2)^T`` and
    ``S_T = S_W + S_B`` under this unweighted convention.
    """
    X, y = data.features, data.labels
    pos, neg = X[y > 0], X[y < 0]
    if pos.shape[0] == 0 or neg.shape[0] == 0:
        raise DataError("compute_scatter needs both classes non-empty")
    m1, m2 = pos.mean(0), neg.mean(0)
    a, b = pos - m1, neg - m2
    s_w = a.T @ a + b.T @ b
    s_w = 0.5 * (s_w + s_w.T)
    diff = m1 - m2
    s_b = np.outer(diff, diff)
    return ScatterStats(m1, m2, s_w, s_b, s_w + s_b)


def fda_ridge(trace: float, dim: int) -> float:
    if trace == 0.0:
        return 1e-6
    return 1e-6 * trace / dim


def train_fda(data: Dataset) -> TrainedModel:
    """Fisher discriminant in the input space with a midpoint threshold."""
    st = compute_scatter(data)
    d = data.d
    r = fda_ridge(float(np.trace(st.s_w)), d)
    w = np.linalg.solve(st.s_w + r * np.eye(d), st.m1 - st.m2)
    if not np.linalg.norm(w) > 0:
        raise ModelError("class means coincide; FDA direction is zero")
    b = -float(w @ (st.m1 + st.m2)) / 2.0
    return TrainedModel(kind="fda", support_coef=np.zeros(0), bias=b, kernel=LINEAR,
                        sv_data=np.zeros((0, d)), d=d, fda_direction=w,
                        diagnostics={"ridge": r})


def train_kernel_fda(data: Dataset, kernel: KernelSpec, gram=None) -> TrainedModel:
    """Fisher discriminant in the feature space of ``kernel``.

    The direction is ``w = sum_i a_i phi(x_i)`` with ``a = (N + r I)^-1 (k1 - k2)``,
    where ``k_c`` are the kernel class means and ``N`` the kernelized
    within-class scatter; the threshold is the midpoint of the projected
    class means.
    """
    data.require_both_classes()
    K = np.asarray(getattr(gram, "values", gram) if gram is not None else build_gram(kernel, data).values)
    y = data.labels
    n = y.size
    N = np.zeros((n, n))
    means = []
    for cls in (1, -1):
        idx = np.flatnonzero(y == cls)
        Kc = K[:, idx]
        means.append(Kc.mean(1))
        centred = Kc - Kc.mean(1, keepdims=True)
        N += centred @ centred.T
    N = 0.5 * (N + N.T)
    r = fda_ridge(float(np.trace(N)), n)
    a = np.linalg.solve(N + r * np.eye(n), means[0] - means[1])
    proj = a @ np.column_stack(means)
    b = -float(proj.sum()) / 2.0
    keep = np.flatnonzero(np.abs(a) > 0)
    return TrainedModel(kind="fda", support_coef=a[keep], bias=b, kernel=kernel,
                        sv_data=data.features[keep], d=data.d, diagnostics={"ridge": r})


def whitening(s_w: np.ndarray, lam: float) -> np.ndarray:
    """``T = Lambda^-1/2 U^T`` for ``lam S_W + I = U Lambda U^T``, so ``T^T T = M^-1``."""
    d = s_w.shape[0]
    M = lam * s_w + np.eye(d)
    vals, vecs = np.linalg.eigh(0.5 * (M + M.T))
    vals = np.maximum(vals, 1.0)  # M >= I; guard against rounding below it
    return (vecs / np.sqrt(vals)).T


def train_svm_fda(data: Dataset, params: SvmMParams, lam: float, normalized: bool = True,
                  gram=None) -> TrainedModel:
    """Linear SVM regularized by ``w^T (lam S_W + I) w``, solved in whitened coordinates."""
    if not lam >= 0:
        raise ModelError(f"lambda must be non-negative, got {lam}")
    data.require_both_classes()
    T = whitening(compute_scatter(data).s_w, lam)
    spec = KernelSpec("linear", normalized=normalized)
    if gram is None:
        gram = build_gram(spec, data.features @ T.T)
    p = replace(params, epsilon=math.inf)
    sol = solve_dual(gram, data.labels, p)
    return pack_kernel_model("svm_fda", data, sol, gram, p, kernel=spec, transform=T,
                             extra={"lambda": float(lam)})


def primal_direction(model: TrainedModel) -> np.ndarray:
    """Explicit ``w`` in input coordinates for unnormalized linear models."""
    if model.fda_direction is not None:
        return model.fda_direction.copy()
    if model.kernel is None or model.kernel.kind != "linear" or model.kernel.normalized:
        raise ModelError("w is explicit only for unnormalized linear-kernel models")
    w_t = model.support_coef @ _mapped(model, model.sv_data)
    return w_t if model.transform is None else model.transform.T @ w_t


# --- diagnostics ----------------------------------------------------------

@dataclass(frozen=True)
class DistanceReport:
    margin: float
    d_b: float
    d_w1_per_class: tuple
    d_w2_per_class: tuple
    d_w3: float | None
    f1: float
    f2: float
    f3: float
    f4: float

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def cost_functions(d_b: float, d_w: float, lam: float) -> tuple:
    """The four between/within trade-off scores ``(F1, F2, F3, F4)``."""
    f1 = d_b / d_w if d_w > 0 else math.inf
    f2 = d_b + lam / d_w if d_w > 0 else math.inf
    f3 = d_b - lam * d_w
    f4 = 1.0 / d_b + lam * d_w
    return f1, f2, f3, f4


def _feature_map_linear(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    Z = _mapped(model, X)
    if model.kernel.normalized:
        norms = np.linalg.norm(Z, axis=1, keepdims=True)
        Z = np.where(norms > 0, Z / np.where(norms > 0, norms, 1.0), 0.0)
    return Z


def distance_report(model: TrainedModel, data: Dataset, lam: float = 1.0) -> DistanceReport:
    """Margin, within-class band widths and the F1..F4 scores of a kernel model.

    Points inside their margin contribute zero to the within-class sums.
    ``d_w3 = w^T S_W w`` is computed only for linear kernels, in the kernel's
    own feature coordinates.
    """
    w2 = weight_norm_sq(model)
    if not w2 > 0:
        raise ModelError("model has zero weight norm; distances are undefined")
    norm = math.sqrt(w2)
    gamma = 1.0 / norm
    yf = data.labels * decision_value(model, data)
    d_w1, d_w2 = [], []
    for cls in (1, -1):
        over = np.maximum(0.0, yf[data.labels == cls] - 1.0)
        d_w1.append(float(over.sum() / norm) if over.size else 0.0)
        d_w2.append(float(over.max() / norm) if over.size else 0.0)
    d_w3 = None
    is_linear = model.kernel is not None and model.kernel.kind == "linear" and model.mu is None
    if is_linear:
        if model.fda_direction is not None:
            w, Z = model.fda_direction, data.features
        else:
            w = model.support_coef @ _feature_map_linear(model, model.sv_data)
            Z = _feature_map_linear(model, data.features)
        s_w = compute_scatter(replace(data, features=Z)).s_w
        d_w3 = float(w @ s_w @ w)
    d_b = 2.0 * gamma
    f = cost_functions(d_b, sum(d_w2), lam)
    return DistanceReport(gamma, d_b, tuple(d_w1), tuple(d_w2), d_w3, *f)


def l_mu_norm(w, mu, p: int = 2) -> float:
    """``|w / mu|_p`` for a strictly positive weight vector ``mu``."""
    w = np.asarray(w, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if w.shape != mu.shape:
        raise ValueError(f"w and mu differ in shape: {w.shape} vs {mu.shape}")
    if np.any(mu <= 0):
        raise ValueError("mu must be strictly positive")
    if p not in (1, 2):
        raise ValueError(f"p must be 1 or 2, got {p}")
    return float(np.linalg.norm(w / mu, ord=p))


# --- model files ----------------------------------------------------------

def model_to_dict(model: TrainedModel) -> dict:
    keep = np.flatnonzero(np.abs(model.support_coef) >= PRUNE)
    out = {
        "version": MODEL_VERSION,
        "kind": model.kind,
        "d": model.d,
        "kernel": model.kernel.to_dict() if model.kernel is not None else None,
        "support": [{"x": model.sv_data[i].tolist(), "c": float(model.support_coef[i])} for i in keep],
        "bias": float(model.bias),
        "standardizer": model.standardizer.to_dict() if model.standardizer is not None else None,
    }
    if model.transform is not None:
        out["transform"] = model.transform.tolist()
    if model.fda_direction is not None:
        out["fda_direction"] = model.fda_direction.tolist()
    if model.mu is not None:
        out["mu"] = model.mu.tolist()
        out["bank"] = [s.to_dict() for s in model.bank]
    sol = model.diagnostics.get("dual")
    if sol is not None:
        out["training"] = {"status": sol.status, "iterations": sol.iterations,
                           "kkt_residual": sol.kkt_residual, "objective": sol.objective}
    return out


def model_from_dict(obj: dict) -> TrainedModel:
    if obj.get("version") != MODEL_VERSION:
        raise ModelError(f"unsupported model version {obj.get('version')!r}")
    d = int(obj["d"])
    sup = obj.get("support", [])
    sv = np.array([s["x"] for s in sup], dtype=float).reshape(len(sup), d)
    coef = np.array([s["c"] for s in sup], dtype=float)
    bank = tuple(KernelSpec.from_dict(s) for s in obj["bank"]) if "bank" in obj else None
    std = obj.get("standardizer")
    return TrainedModel(
        kind=obj["kind"], support_coef=coef, bias=float(obj["bias"]),
        kernel=KernelSpec.from_dict(obj["kernel"]) if obj.get("kernel") else None,
        sv_data=sv, d=d,
        transform=np.array(obj["transform"]) if "transform" in obj else None,
        fda_direction=np.array(obj["fda_direction"]) if "fda_direction" in obj else None,
        mu=np.array(obj["mu"]) if "mu" in obj else None, bank=bank,
        standardizer=Standardizer.from_dict(std) if std else None,
    )


def save_model(model: TrainedModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1))


def load_model(path) -> TrainedModel:
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read model {path}: {exc}") from None
    try:
        return model_from_dict(obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed model file {path}: {exc}") from None
