"""Kernel functions, Gram matrices and convex kernel combinations."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

KINDS = ("linear", "polynomial", "gaussian")
RBF_CONVENTIONS = ("2sigma2", "sigma2")

# Gaussian bandwidths of the 20-kernel MKL bank.
PAPER20_SIGMAS = (0.5, 1.0, 2.0, 5.0, 7.0, 10.0, 12.0, 15.0, 17.0, 20.0)


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    """Kernel description.

    ``polynomial`` is the inhomogeneous form ``(x.z + 1) ** degree``.
    ``gaussian`` is ``exp(-|x - z|^2 / (2 sigma^2))``; with
    ``rbf_convention="sigma2"`` the denominator is ``sigma^2`` instead.
    """

    kind: str = "linear"
    degree: int = 1
    sigma: float = 1.0
    normalized: bool = True
    rbf_convention: str = "2sigma2"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise KernelError(f"unknown kernel kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "polynomial" and (int(self.degree) != self.degree or self.degree < 1):
            raise KernelError(f"polynomial degree must be a positive integer, got {self.degree}")
        if self.kind == "gaussian" and not self.sigma > 0:
            raise KernelError(f"gaussian sigma must be positive, got {self.sigma}")
        if self.rbf_convention not in RBF_CONVENTIONS:
            raise KernelError(f"unknown rbf convention {self.rbf_convention!r}")

    @property
    def label(self) -> str:
        if self.kind == "linear":
            return "linear"
        if self.kind == "polynomial":
            return f"poly{self.degree}"
        return f"gauss{self.sigma:g}"

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.kind == "polynomial":
            out["degree"] = int(self.degree)
        if self.kind == "gaussian":
            out["sigma"] = float(self.sigma)
            if self.rbf_convention != "2sigma2":
                out["rbf_convention"] = self.rbf_convention
        out["normalized"] = bool(self.normalized)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(
            kind=d["kind"],
            degree=int(d.get("degree", 1)),
            sigma=float(d.get("sigma", 1.0)),
            normalized=bool(d.get("normalized", True)),
            rbf_convention=d.get("rbf_convention", "2sigma2"),
        )


def parse_kernel(text: str, normalized: bool = True, rbf_convention: str = "2sigma2") -> KernelSpec:
    """Parse the ``kind[:param]`` syntax, e.g. ``linear``, ``poly:3``, ``gaussian:0.5``."""
    name, _, param = text.strip().partition(":")
    name = name.lower()
    try:
        if name in ("linear", "lin"):
            return KernelSpec("linear", normalized=normalized)
        if name in ("poly", "polynomial"):
            return KernelSpec("polynomial", degree=int(param or 2), normalized=normalized)
        if name in ("gaussian", "rbf", "gauss"):
            return KernelSpec("gaussian", sigma=float(param or 1.0), normalized=normalized,
                              rbf_convention=rbf_convention)
    except ValueError as exc:
        raise KernelError(f"bad kernel parameter in {text!r}: {exc}") from None
    raise KernelError(f"unknown kernel {text!r}")


def _features(data) -> np.ndarray:
    x = getattr(data, "features", data)
    return np.atleast_2d(np.asarray(x, dtype=float))


def eval_kernel(spec: KernelSpec, x, z) -> float:
    """Raw (unnormalized) kernel value for a single pair of vectors."""
    x = np.asarray(x, dtype=float).ravel()
    z = np.asarray(z, dtype=float).ravel()
    if x.shape != z.shape:
        raise KernelError(f"dimension mismatch: {x.shape[0]} vs {z.shape[0]}")
    if spec.kind == "linear":
        return float(x @ z)
    if spec.kind == "polynomial":
        return float((x @ z + 1.0) ** spec.degree)
    diff = x - z
    return float(np.exp(-(diff @ diff) / _rbf_denominator(spec)))


def _rbf_denominator(spec: KernelSpec) -> float:
    s2 = spec.sigma ** 2
    return 2.0 * s2 if spec.rbf_convention == "2sigma2" else s2


def cross_kernel(spec: KernelSpec, X, Z) -> np.ndarray:
    """Raw kernel matrix between the rows of ``X`` and the rows of ``Z``."""
    X = _features(X)
    Z = _features(Z)
    if X.shape[1] != Z.shape[1]:
        raise KernelError(f"dimension mismatch: {X.shape[1]} vs {Z.shape[1]}")
    inner = X @ Z.T
    if spec.kind == "linear":
        return inner
    if spec.kind == "polynomial":
        return (inner + 1.0) ** spec.degree
    sq = (X * X).sum(1)[:, None] + (Z * Z).sum(1)[None, :] - 2.0 * inner
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-sq / _rbf_denominator(spec))


def kernel_diag(spec: KernelSpec, X) -> np.ndarray:
    """``K(x, x)`` for every row of ``X``."""
    X = _features(X)
    if spec.kind == "gaussian":
        return np.ones(X.shape[0])
    sq = (X * X).sum(1)
    if spec.kind == "linear":
        return sq
    return (sq + 1.0) ** spec.degree


def normalized_cross_kernel(spec: KernelSpec, X, Z) -> np.ndarray:
    """Kernel matrix between X and Z, cosine-normalized when ``spec.normalized``."""
    K = cross_kernel(spec, X, Z)
    if not spec.normalized:
        return K
    dx = kernel_diag(spec, X)
    dz = kernel_diag(spec, Z)
    # a zero vector under the linear kernel has no direction; its row stays zero
    scale = np.sqrt(np.outer(dx, dz))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(scale > 0, K / np.where(scale > 0, scale, 1.0), 0.0)
    return out


@dataclass(frozen=True)
class GramMatrix:
    values: np.ndarray
    spec: KernelSpec | None = None
    row_ids: np.ndarray | None = None
    normalized: bool = False
    combination: tuple | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise KernelError(f"Gram matrix must be square, got shape {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.row_ids is None:
            object.__setattr__(self, "row_ids", np.arange(v.shape[0]))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def subset(self, idx) -> "GramMatrix":
        idx = np.asarray(idx)
        return GramMatrix(self.values[np.ix_(idx, idx)], self.spec, self.row_ids[idx],
                          self.normalized, self.combination)


def build_gram(spec: KernelSpec, data, normalize: bool | None = None) -> GramMatrix:
    """Pairwise kernel matrix of a dataset.

    With ``normalize=None`` the kernel's ``normalized`` flag decides whether
    :func:`normalize_gram` is applied; pass ``False`` for the raw values.
    """
    X = _features(data)
    K = cross_kernel(spec, X, X)
    # both triangles from the upper one so symmetry is exact
    K = np.triu(K) + np.triu(K, 1).T
    g = GramMatrix(K, spec)
    if normalize is None:
        normalize = spec.normalized
    return normalize_gram(g) if normalize else g


def normalize_gram(g: GramMatrix) -> GramMatrix:
    """``K_ij / sqrt(K_ii K_jj)``."""
    v = g.values
    diag = np.diag(v).copy()
    bad = np.flatnonzero(~(diag > 0))
    if bad.size:
        raise KernelError(f"non-positive diagonal entry K[{bad[0]},{bad[0]}] = {diag[bad[0]]}")
    s = np.sqrt(diag)
    out = v / np.outer(s, s)
    out = 0.5 * (out + out.T)
    np.fill_diagonal(out, 1.0)
    return GramMatrix(out, g.spec, g.row_ids, True, g.combination)


@dataclass(frozen=True)
class KernelBank:
    specs: tuple
    grams: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "specs", tuple(self.specs))
        object.__setattr__(self, "grams", tuple(self.grams))
        if len(self.specs) < 1:
            raise KernelError("a kernel bank needs at least one kernel")
        if self.grams:
            if len(self.grams) != len(self.specs):
                raise KernelError("bank specs and grams differ in length")
            n = self.grams[0].n
            if any(g.n != n for g in self.grams):
                raise KernelError("bank grams differ in dimension")

    @property
    def m(self) -> int:
        return len(self.specs)

    @cached_property
    def stack(self) -> np.ndarray:
        """(m, n, n) array of the basis Gram values."""
        return np.stack([g.values for g in self.grams])

    def subset(self, idx) -> "KernelBank":
        return KernelBank(self.specs, tuple(g.subset(idx) for g in self.grams))


def build_bank(specs: Sequence[KernelSpec], data) -> KernelBank:
    return KernelBank(tuple(specs), tuple(build_gram(s, data) for s in specs))


def paper20_bank(normalized: bool = True) -> tuple:
    """Polynomials of degree 1..10 and ten gaussians, the MKL benchmark set."""
    polys = [KernelSpec("polynomial", degree=d, normalized=normalized) for d in range(1, 11)]
    gauss = [KernelSpec("gaussian", sigma=s, normalized=normalized) for s in PAPER20_SIGMAS]
    return tuple(polys + gauss)


def combine_grams(bank: KernelBank, mu, check_simplex: bool = True) -> GramMatrix:
    """Convex combination ``sum_k mu_k K_k`` of the bank's Gram matrices."""
    mu = np.asarray(mu, dtype=float).ravel()
    if mu.shape[0] != bank.m:
        raise KernelError(f"mu has length {mu.shape[0]}, bank has {bank.m} kernels")
    if check_simplex and (np.any(mu < 0) or abs(mu.sum() - 1.0) > 1e-9):
        raise KernelError(f"mu is off the simplex (sum={mu.sum():.12g}, min={mu.min():.3g})")
    nz = np.flatnonzero(mu)
    if nz.size == 1 and mu[nz[0]] == 1.0:
        values = bank.grams[nz[0]].values
    else:
        values = np.tensordot(mu, bank.stack, axes=1)
    return GramMatrix(values, None, bank.grams[0].row_ids, False, tuple(mu.tolist()))
