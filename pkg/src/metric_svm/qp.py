"""Dual solver for the band-constrained SVM (SVM_m).

The dual over margin multipliers ``alpha`` and band multipliers ``beta`` is::

    max  sum_i (alpha_i - (1 + eps) beta_i)
         - 1/2 sum_ij (alpha_i - beta_i)(alpha_j - beta_j) y_i y_j K_ij
    s.t. sum_i (alpha_i - beta_i) y_i = 0,  0 <= alpha <= C1,  0 <= beta <= C2

``eps = inf`` pins ``beta`` to zero (standard soft-margin SVM) and ``eps = 0``
gives eps-SVM. :func:`solve_dual` is an SMO solver over the stacked vector
``z = (alpha, beta)`` whose equality-constraint signs are ``(y, -y)``;
:func:`oracle_solve` is a slow accelerated projected-gradient solver kept as an
independent cross-check, and :func:`check_kkt` certifies either result.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

CONVERGED = "converged"
MAX_ITER = "max_iter"
INFEASIBLE_INPUT = "infeasible_input"

TAU = 1e-12
ORACLE_MAX_N = 50


class SolverError(ValueError):
    pass


@dataclass(frozen=True)
class SvmMParams:
    c1: float = 1.0
    c2: float = 1.0 / 3.0
    epsilon: float = 3.0
    tol: float = 1e-6
    max_iter: int = 1_000_000

    def __post_init__(self):
        if not self.c1 > 0:
            raise SolverError(f"c1 must be positive, got {self.c1}")
        if not self.c2 >= 0:
            raise SolverError(f"c2 must be non-negative, got {self.c2}")
        if not self.epsilon >= 0:
            raise SolverError(f"epsilon must be non-negative, got {self.epsilon}")
        if not self.tol > 0 or self.max_iter < 1:
            raise SolverError("tol must be positive and max_iter at least 1")

    @property
    def beta_pinned(self) -> bool:
        return math.isinf(self.epsilon)

    @property
    def c2_effective(self) -> float:
        return 0.0 if self.beta_pinned else float(self.c2)

    @property
    def eps_effective(self) -> float:
        return 0.0 if self.beta_pinned else float(self.epsilon)


@dataclass
class DualSolution:
    alpha: np.ndarray
    beta: np.ndarray
    bias: float
    objective: float
    kkt_residual: float
    iterations: int
    status: str
    objective_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def delta(self) -> np.ndarray:
        """Support coefficients ``alpha - beta``."""
        return self.alpha - self.beta


def dual_objective(K, y, alpha, beta, epsilon) -> float:
    """Value of the dual objective at ``(alpha, beta)``."""
    yd = y * (alpha - beta)
    lin = alpha.sum()
    if not math.isinf(epsilon):
        lin -= (1.0 + epsilon) * beta.sum()
    return float(lin - 0.5 * yd @ (K @ yd))


# The SMO loop works on the stacked vector z = (alpha, beta) with
# equality-constraint signs s = (y, -y). In terms of F = K @ (y * delta), the
# quantity -s_t * grad_t equals y - F for alpha and y (1 + eps) - F for beta.
# Variables are scanned in the order alpha_0, beta_0, alpha_1, ...; ties go
# to the earliest one.
@numba.njit(cache=True)
def _smo(K, y, c1, c2, eps, tol, max_iter, alpha, beta, F, trace, trace_every):
    n = y.shape[0]
    use_beta = c2 > 0
    shift = 1.0 + eps
    obj = 0.0
    for i in range(n):
        obj += alpha[i] - shift * beta[i] - 0.5 * y[i] * (alpha[i] - beta[i]) * F[i]
    n_trace = 0
    it = 0
    status = 0
    gmax = -np.inf
    gmin = np.inf
    while True:
        # most violating variable in I_up
        gmax = -np.inf
        ii = -1
        i_is_beta = False
        for k in range(n):
            pos = y[k] > 0
            va = y[k] - F[k]
            if va > gmax and ((pos and alpha[k] < c1) or (not pos and alpha[k] > 0)):
                gmax = va
                ii = k
                i_is_beta = False
            if use_beta:
                vb = y[k] * shift - F[k]
                if vb > gmax and ((not pos and beta[k] < c2) or (pos and beta[k] > 0)):
                    gmax = vb
                    ii = k
                    i_is_beta = True
        gmin = np.inf
        if ii < 0:
            break
        Kii = K[ii, ii]
        # second-order choice of the partner in I_low
        jj = -1
        j_is_beta = False
        best = np.inf
        for k in range(n):
            pos = y[k] > 0
            va = y[k] - F[k]
            if (not pos and alpha[k] < c1) or (pos and alpha[k] > 0):
                if va < gmin:
                    gmin = va
                b = gmax - va
                if b > 0:
                    a = Kii + K[k, k] - 2.0 * K[ii, k]
                    if a <= 0:
                        a = TAU
                    score = -(b * b) / a
                    if score < best:
                        best = score
                        jj = k
                        j_is_beta = False
            if use_beta and ((pos and beta[k] < c2) or (not pos and beta[k] > 0)):
                vb = y[k] * shift - F[k]
                if vb < gmin:
                    gmin = vb
                b = gmax - vb
                if b > 0:
                    a = Kii + K[k, k] - 2.0 * K[ii, k]
                    if a <= 0:
                        a = TAU
                    score = -(b * b) / a
                    if score < best:
                        best = score
                        jj = k
                        j_is_beta = True
        if gmax - gmin <= tol or jj < 0:
            break
        if it >= max_iter:
            status = 1
            break
        a_true = Kii + K[jj, jj] - 2.0 * K[ii, jj]
        a = a_true if a_true > 0 else TAU
        vj = y[jj] * shift - F[jj] if j_is_beta else y[jj] - F[jj]
        b = gmax - vj
        # z_i moves by s_i * step, z_j by -s_j * step
        if i_is_beta:
            si = -y[ii]
            zi = beta[ii]
            ci = c2
        else:
            si = y[ii]
            zi = alpha[ii]
            ci = c1
        if j_is_beta:
            sj = -y[jj]
            zj = beta[jj]
            cj = c2
        else:
            sj = y[jj]
            zj = alpha[jj]
            cj = c1
        lim_i = ci - zi if si > 0 else zi
        lim_j = zj if sj > 0 else cj - zj
        step = min(b / a, lim_i, lim_j)
        if step >= lim_i:
            zi_new = ci if si > 0 else 0.0
        else:
            zi_new = zi + si * step
        if step >= lim_j:
            zj_new = 0.0 if sj > 0 else cj
        else:
            zj_new = zj - sj * step
        if i_is_beta:
            beta[ii] = zi_new
        else:
            alpha[ii] = zi_new
        if j_is_beta:
            beta[jj] = zj_new
        else:
            alpha[jj] = zj_new
        if ii != jj:
            for k in range(n):
                F[k] += step * (K[ii, k] - K[jj, k])
        obj += step * b - 0.5 * a_true * step * step
        it += 1
        if it % trace_every == 0 and n_trace < trace.shape[0]:
            trace[n_trace] = obj
            n_trace += 1
    return it, status, n_trace, gmax, gmin


def _bias(F, y, alpha, beta, c1, c2, eps, pinned):
    """Bias from free margin vectors, else free band vectors, else the KKT bracket."""
    pinned = pinned or c2 <= 0
    free_a = (alpha > 0) & (alpha < c1)
    if free_a.any():
        return float(np.mean(y[free_a] - F[free_a]))
    if not pinned:
        free_b = (beta > 0) & (beta < c2)
        if free_b.any():
            return float(np.mean(y[free_b] * (1.0 + eps) - F[free_b]))
    # b must satisfy y_i (F_i + b) >= 1 where alpha_i = 0, <= 1 where alpha_i = C1,
    # <= 1 + eps where beta_i = 0 and >= 1 + eps where beta_i = C2.
    lo, hi = -np.inf, np.inf
    va = y - F
    pos, neg = y > 0, y < 0
    lower_a = (pos & (alpha <= 0)) | (neg & (alpha >= c1))
    upper_a = (neg & (alpha <= 0)) | (pos & (alpha >= c1))
    if lower_a.any():
        lo = max(lo, va[lower_a].max())
    if upper_a.any():
        hi = min(hi, va[upper_a].min())
    if not pinned:
        vb = y * (1.0 + eps) - F
        lower_b = (neg & (beta <= 0)) | (pos & (beta >= c2))
        upper_b = (pos & (beta <= 0)) | (neg & (beta >= c2))
        if lower_b.any():
            lo = max(lo, vb[lower_b].max())
        if upper_b.any():
            hi = min(hi, vb[upper_b].min())
    if np.isfinite(lo) and np.isfinite(hi):
        return float(0.5 * (lo + hi))
    if np.isfinite(lo):
        return float(lo)
    if np.isfinite(hi):
        return float(hi)
    return 0.0


def _as_matrix(gram) -> np.ndarray:
    return np.asarray(getattr(gram, "values", gram), dtype=float)


def _validate(K, y):
    y = np.asarray(y, dtype=float).ravel()
    if K.ndim != 2 or K.shape[0] != K.shape[1] or K.shape[0] != y.shape[0]:
        raise SolverError(f"Gram shape {K.shape} does not match {y.shape[0]} labels")
    if not np.all(np.isfinite(K)):
        raise SolverError("Gram matrix has non-finite entries")
    if not np.all(np.abs(y) == 1):
        raise SolverError("labels must be +1/-1")
    if not ((y > 0).any() and (y < 0).any()):
        raise SolverError("both classes must be present (single-class input)")
    return y


def solve_dual(gram, labels, params: SvmMParams, init=None, trace_every: int = 64,
               trace_len: int = 4096) -> DualSolution:
    """Solve the SVM_m dual with SMO.

    Parameters
    ----------
    gram : GramMatrix or (n, n) array
        Symmetric PSD kernel matrix.
    labels : (n,) array of +1/-1
    params : SvmMParams
    init : optional ``(alpha, beta)`` feasible starting point. Used by the MKL
        line search; the default start is zero.

    Returns
    -------
    DualSolution
        ``status`` is ``"max_iter"`` when the iteration budget ran out; the
        returned point is still dual feasible.
    """
    K = np.ascontiguousarray(_as_matrix(gram))
    y = _validate(K, labels)
    n = y.shape[0]
    c1 = float(params.c1)
    c2 = params.c2_effective
    eps = params.eps_effective
    if init is None:
        alpha = np.zeros(n)
        beta = np.zeros(n)
        F = np.zeros(n)
    else:
        alpha = np.clip(np.asarray(init[0], dtype=float).copy(), 0.0, c1)
        beta = np.clip(np.asarray(init[1], dtype=float).copy(), 0.0, c2)
        if abs(np.dot(y, alpha - beta)) > 1e-9 * max(1.0, c1 * n):
            raise SolverError("initial point violates the equality constraint")
        F = K @ (y * (alpha - beta))
    trace = np.empty(trace_len)
    iters, status, n_trace, gmax, gmin = _smo(
        K, y, c1, c2, eps, float(params.tol), int(params.max_iter), alpha, beta, F,
        trace, int(trace_every))
    F = K @ (y * (alpha - beta))
    bias = _bias(F, y, alpha, beta, c1, c2, eps, params.beta_pinned)
    obj = dual_objective(K, y, alpha, beta, params.epsilon)
    sol = DualSolution(
        alpha=alpha, beta=beta, bias=bias, objective=obj, kkt_residual=0.0,
        iterations=int(iters), status=MAX_ITER if status else CONVERGED,
        objective_trace=np.append(trace[:n_trace], obj),
    )
    sol.kkt_residual = check_kkt(K, y, params, sol)
    return sol


def check_kkt(gram, labels, params: SvmMParams, sol: DualSolution) -> float:
    """Largest KKT violation of ``sol``, measured in units of ``y f(x)``.

    Covers the box bounds, the equality constraint and complementarity
    (including the margin conditions of bound multipliers), plus the maximal
    pairwise directional derivative of the dual over feasible directions.
    """
    K = _as_matrix(gram)
    y = np.asarray(labels, dtype=float).ravel()
    alpha = np.asarray(sol.alpha, dtype=float)
    beta = np.asarray(sol.beta, dtype=float)
    if alpha.shape != y.shape or beta.shape != y.shape or K.shape != (y.size, y.size):
        raise SolverError("solution dimensions do not match the problem")
    c1 = float(params.c1)
    c2 = params.c2_effective
    pinned = params.beta_pinned or c2 <= 0
    eps = params.eps_effective
    at = 1e-12 * max(c1, 1.0)
    bt = 1e-12 * max(c2, 1.0)

    box = max(0.0, -alpha.min(), (alpha - c1).max(), -beta.min(), (beta - c2).max())
    eq = abs(float(np.dot(y, alpha - beta)))
    F = K @ (y * (alpha - beta))
    margin = y * (F + sol.bias)

    viol = [box, eq]
    a_lo = alpha <= at
    a_hi = alpha >= c1 - at
    a_free = ~a_lo & ~a_hi
    viol.append(np.max(np.where(a_lo, np.maximum(0.0, 1.0 - margin), 0.0), initial=0.0))
    viol.append(np.max(np.where(a_hi, np.maximum(0.0, margin - 1.0), 0.0), initial=0.0))
    viol.append(np.max(np.where(a_free, np.abs(margin - 1.0), 0.0), initial=0.0))
    if not pinned:
        target = 1.0 + eps
        b_lo = beta <= bt
        b_hi = beta >= c2 - bt
        b_free = ~b_lo & ~b_hi
        viol.append(np.max(np.where(b_lo, np.maximum(0.0, margin - target), 0.0), initial=0.0))
        viol.append(np.max(np.where(b_hi, np.maximum(0.0, target - margin), 0.0), initial=0.0))
        viol.append(np.max(np.where(b_free, np.abs(margin - target), 0.0), initial=0.0))
    viol.append(_pair_gap(F, y, alpha, beta, c1, c2, eps, pinned, at, bt))
    return float(max(viol))


def _pair_gap(F, y, alpha, beta, c1, c2, eps, pinned, at, bt) -> float:
    """Bias-free stationarity gap ``max_{I_up} - min_{I_low}`` of ``-s * grad``."""
    pos, neg = y > 0, y < 0
    va = y - F
    up = [va[(pos & (alpha < c1 - at)) | (neg & (alpha > at))]]
    low = [va[(neg & (alpha < c1 - at)) | (pos & (alpha > at))]]
    if not pinned:
        vb = y * (1.0 + eps) - F
        up.append(vb[(neg & (beta < c2 - bt)) | (pos & (beta > bt))])
        low.append(vb[(pos & (beta < c2 - bt)) | (neg & (beta > bt))])
    up = np.concatenate(up)
    low = np.concatenate(low)
    if up.size == 0 or low.size == 0:
        return 0.0
    return float(max(0.0, up.max() - low.min()))


def _project(v, s, cap):
    """Euclidean projection onto ``{0 <= z <= cap, s.z = 0}`` (s entries are +-1)."""
    # s.clip(v - lam s) is non-increasing and piecewise linear in lam
    bps = np.unique(np.concatenate([v * s, (v - cap) * s]))
    Z = np.clip(v[None, :] - bps[:, None] * s[None, :], 0.0, cap[None, :])
    h = Z @ s
    k = np.searchsorted(-h, 0.0)
    if k == 0:
        lam = bps[0]
    elif k >= bps.size:
        lam = bps[-1]
    else:
        h0, h1 = h[k - 1], h[k]
        lam = bps[k - 1] if h0 == h1 else bps[k - 1] + (bps[k] - bps[k - 1]) * h0 / (h0 - h1)
    return np.clip(v - lam * s, 0.0, cap)


def oracle_solve(gram, labels, params: SvmMParams, max_steps: int = 400_000) -> DualSolution:
    """Reference solution by accelerated projected gradient ascent.

    Deliberately independent of :func:`solve_dual`: the full stacked Hessian
    is formed explicitly, each step projects exactly onto the feasible set
    and the step size is ``1 / L`` with ``L`` the Hessian's largest
    eigenvalue. Stops once the objective gains less than ``1e-12`` over 100
    steps. Only for small problems (``n <= 50``).
    """
    K = _as_matrix(gram)
    y = _validate(K, labels)
    n = y.size
    if n > ORACLE_MAX_N:
        raise SolverError(f"oracle_solve is limited to n <= {ORACLE_MAX_N}, got {n}")
    pinned = params.beta_pinned
    eps = params.eps_effective
    if pinned:
        s = y.copy()
        idx = np.arange(n)
        cap = np.full(n, float(params.c1))
        p = -np.ones(n)
    else:
        s = np.concatenate([y, -y])
        idx = np.concatenate([np.arange(n), np.arange(n)])
        cap = np.concatenate([np.full(n, float(params.c1)), np.full(n, float(params.c2))])
        p = np.concatenate([-np.ones(n), np.full(n, 1.0 + eps)])
    Q = np.outer(s, s) * K[np.ix_(idx, idx)]
    L = max(float(np.linalg.eigvalsh(Q)[-1]), 1e-12) * (1.0 + 1e-9)

    def f(z):  # minimisation form: negated dual
        return 0.5 * z @ (Q @ z) + p @ z

    z = np.zeros(s.size)
    w = z.copy()
    t = 1.0
    fz = f(z)
    history = [fz]
    for step in range(1, max_steps + 1):
        z_new = _project(w - (Q @ w + p) / L, s, cap)
        f_new = f(z_new)
        if f_new > fz:
            # restart momentum, take a plain projected-gradient step
            t = 1.0
            z_new = _project(z - (Q @ z + p) / L, s, cap)
            f_new = f(z_new)
            w = z_new.copy()
        else:
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            w = z_new + ((t - 1.0) / t_new) * (z_new - z)
            t = t_new
        z, fz = z_new, f_new
        history.append(fz)
        if step >= 100 and history[-101] - fz < 1e-12:
            break
    if pinned:
        alpha, beta = z, np.zeros(n)
    else:
        alpha, beta = z[:n], z[n:]
    F = K @ (y * (alpha - beta))
    bias = _oracle_bias(F, y, alpha, beta, params)
    sol = DualSolution(alpha=alpha.copy(), beta=beta.copy(), bias=bias,
                       objective=dual_objective(K, y, alpha, beta, params.epsilon),
                       kkt_residual=0.0, iterations=step, status=CONVERGED)
    sol.kkt_residual = check_kkt(K, y, params, sol)
    return sol


def _oracle_bias(F, y, alpha, beta, params) -> float:
    # approximate solutions never sit exactly on a bound, so classify with a tolerance
    c1, c2 = float(params.c1), params.c2_effective
    eps = params.eps_effective
    ta, tb = 1e-7 * c1, 1e-7 * max(c2, 1e-300)
    vals = []
    free_a = (alpha > ta) & (alpha < c1 - ta)
    vals.extend((y - F)[free_a])
    if not vals and not params.beta_pinned:
        free_b = (beta > tb) & (beta < c2 - tb)
        vals.extend((y * (1.0 + eps) - F)[free_b])
    if vals:
        return float(np.median(vals))
    snapped_a = np.where(alpha <= ta, 0.0, np.where(alpha >= c1 - ta, c1, alpha))
    snapped_b = np.where(beta <= tb, 0.0, np.where(beta >= c2 - tb, c2, beta))
    return _bias(F, y, snapped_a, snapped_b, c1, c2, eps, params.beta_pinned)
