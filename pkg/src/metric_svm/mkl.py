"""Multiple kernel learning: alternate the SVM_m dual with reduced-gradient steps on the kernel weights."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset
from .kernel import KernelBank, build_bank
from .models import ModelError, TrainedModel, pack_kernel_model, resolve_params
from .qp import DualSolution, SolverError, SvmMParams, solve_dual

log = logging.getLogger(__name__)

MKL_KINDS = ("mkl_m", "eps_mkl", "mkl_gamma")
SIMPLEX_TOL = 1e-9

CONVERGED = "converged"
STALLED = "stalled"
MAX_OUTER = "max_iter"
LINE_SEARCH_FAILED = "line_search_failed"


@dataclass(frozen=True)
class MklParams:
    svm: SvmMParams = field(default_factory=SvmMParams)
    mu_tol: float = 1e-4
    outer_max_iter: int = 200
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    max_halvings: int = 30
    inner_tol: float = 1e-8
    screen_tol: float = 1e-5
    stall_tol: float = 1e-8
    stall_window: int = 3

    def __post_init__(self):
        if not self.mu_tol > 0:
            raise ValueError(f"mu_tol must be positive, got {self.mu_tol}")
        if self.outer_max_iter < 1:
            raise ValueError(f"outer_max_iter must be at least 1, got {self.outer_max_iter}")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack factor must lie in (0, 1)")


@dataclass
class MklSolution:
    mu: np.ndarray
    inner: DualSolution
    objective_trace: list
    status: str
    mu_trace: list = field(default_factory=list)
    iterations: int = 0
    inner_solves: int = 0


def _check_simplex(mu: np.ndarray) -> None:
    if mu.ndim != 1 or np.any(~np.isfinite(mu)) or np.any(mu < 0) or abs(mu.sum() - 1.0) > SIMPLEX_TOL:
        raise ValueError(f"mu is not on the simplex (sum={mu.sum():.12g}, min={mu.min():.3g})")


def mkl_gradient(bank, labels, inner: DualSolution) -> np.ndarray:
    """``dJ/dmu_k = -1/2 (y delta)^T K_k (y delta)`` for each basis Gram."""
    stack = bank.stack if isinstance(bank, KernelBank) else np.asarray(bank)
    y = np.asarray(labels, dtype=float)
    u = y * inner.delta
    if stack.shape[1] != u.shape[0]:
        raise ValueError(f"bank is over {stack.shape[1]} instances, dual has {u.shape[0]}")
    return -0.5 * ((stack @ u) @ u)


def descent_direction(mu, grad) -> np.ndarray:
    """Reduced-gradient descent direction on the simplex.

    The reference coordinate is the largest weight (lowest index on ties).
    Other coordinates move against their reduced gradient, except that a
    zero weight is not pushed negative; the reference absorbs the sum.
    """
    mu = np.asarray(mu, dtype=float)
    g = np.asarray(grad, dtype=float)
    ref = int(np.argmax(mu))
    red = g - g[ref]
    d = -red
    d[(mu <= 0) & (red > 0)] = 0.0
    d[ref] = 0.0
    d[ref] = -d.sum()
    return d


def max_feasible_step(mu, d) -> float:
    neg = d < 0
    if not neg.any():
        return np.inf
    return float(np.min(mu[neg] / -d[neg]))


def simplex_step(mu, grad, step: float) -> np.ndarray:
    """Move ``step`` along the reduced-gradient direction, stopping where a weight reaches zero."""
    mu = np.asarray(mu, dtype=float)
    _check_simplex(mu)
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    d = descent_direction(mu, grad)
    if not np.any(d):
        return mu.copy()
    return _advance(mu, d, step)


def _advance(mu, d, step) -> np.ndarray:
    limit = max_feasible_step(mu, d)
    t = min(step, limit)
    new = mu + t * d
    if t == limit:
        neg = d < 0
        hit = np.flatnonzero(neg)[np.argmin(mu[neg] / -d[neg])]
        new[hit] = 0.0
    new = np.maximum(new, 0.0)
    return new / new.sum()


def _combine(stack, mu) -> np.ndarray:
    nz = np.flatnonzero(mu)
    if nz.size == 1:
        return stack[nz[0]] * mu[nz[0]]
    return np.tensordot(mu[nz], stack[nz], axes=1)


def solve_mkl(stack, labels, params: MklParams, mu_init=None, init=None) -> MklSolution:
    """Minimize ``J(mu)``, the optimal SVM_m dual value for ``K_mu``, over the simplex.

    ``params.svm`` must already carry the epsilon of the chosen variant.
    Each outer iteration computes the gradient at the current inner optimum,
    takes the reduced-gradient direction and runs a backtracking Armijo
    search. The first trial step is twice the previously accepted one,
    capped at the largest feasible step. Line-search solves are
    warm-started from the current dual point; ``init`` optionally seeds
    the first solve with a feasible ``(alpha, beta)``.
    """
    stack = np.asarray(stack, dtype=float)
    y = np.asarray(labels, dtype=float)
    m = stack.shape[0]
    if mu_init is None:
        mu = np.full(m, 1.0 / m)
    else:
        mu = np.asarray(mu_init, dtype=float).copy()
        if mu.shape != (m,):
            raise ValueError(f"mu_init has shape {mu.shape}, bank has {m} kernels")
        _check_simplex(mu)
    inner_params = replace(params.svm, tol=min(params.svm.tol, params.inner_tol))
    screen_params = replace(inner_params, tol=max(inner_params.tol, params.screen_tol))

    solves = 0

    def inner(mu_, init=None, p=inner_params):
        nonlocal solves
        solves += 1
        sol_ = solve_dual(_combine(stack, mu_), y, p, init=init)
        if not np.isfinite(sol_.objective):
            raise SolverError("inner objective is not finite")
        return sol_

    sol = inner(mu, init)
    trace = [sol.objective]
    mu_trace = [mu.copy()]
    status = MAX_OUTER
    it = 0
    last_step = np.inf
    for it in range(1, params.outer_max_iter):
        if sol.status != "converged":
            log.warning("inner solve at outer iteration %d stopped with %s (kkt %.2e)",
                        it, sol.status, sol.kkt_residual)
        g = mkl_gradient(stack, y, sol)
        d = descent_direction(mu, g)
        slope = float(g @ d)
        if not np.any(d) or slope >= 0:
            status = CONVERGED
            break
        t_max = max_feasible_step(mu, d)
        # start from twice the last accepted step, never past the boundary
        t = min(t_max, 2.0 * last_step)
        if not np.isfinite(t):
            t = 1.0
        accepted = None
        for _ in range(params.max_halvings + 1):
            cand = _advance(mu, d, t)
            bound = sol.objective + params.armijo_c * t * slope
            # a feasible dual point lower-bounds J, so failing on a loosely
            # solved trial already rules the step out
            cand_sol = inner(cand, (sol.alpha, sol.beta), screen_params)
            if cand_sol.objective <= bound:
                cand_sol = inner(cand, (cand_sol.alpha, cand_sol.beta))
                if cand_sol.objective <= bound:
                    accepted = (cand, cand_sol)
                    break
            t *= params.backtrack
        if accepted is None:
            status = LINE_SEARCH_FAILED
            break
        step = float(np.max(np.abs(accepted[0] - mu)))
        last_step = t
        mu, sol = accepted
        trace.append(sol.objective)
        mu_trace.append(mu.copy())
        if step < params.mu_tol:
            status = CONVERGED
            break
        w = params.stall_window
        if len(trace) > w:
            old = trace[-1 - w]
            if old - trace[-1] <= params.stall_tol * max(1.0, abs(old)):
                status = STALLED
                break
    return MklSolution(mu=mu, inner=sol, objective_trace=trace, status=status,
                       mu_trace=mu_trace, iterations=it, inner_solves=solves)


def train_mkl(data: Dataset, bank, params: MklParams | None = None, kind: str = "mkl_m",
              mu_init=None) -> TrainedModel:
    """Learn kernel weights and the SVM_m dual jointly.

    ``kind`` fixes epsilon: ``mkl_m`` keeps ``params.svm.epsilon``,
    ``eps_mkl`` uses 0 and ``mkl_gamma`` disables the band (infinite
    epsilon). ``bank`` is a :class:`KernelBank` over ``data`` or a sequence
    of kernel specs.
    """
    if kind not in MKL_KINDS:
        raise ModelError(f"kind must be one of {MKL_KINDS}, got {kind!r}")
    params = params or MklParams()
    data.require_both_classes()
    if not isinstance(bank, KernelBank):
        bank = build_bank(tuple(bank), data)
    elif not bank.grams:
        bank = build_bank(bank.specs, data)
    if bank.grams[0].n != data.n:
        raise ValueError(f"bank is over {bank.grams[0].n} instances, data has {data.n}")
    p = replace(params, svm=resolve_params(kind, params.svm))
    sol = solve_mkl(bank.stack, data.labels, p, mu_init)
    K = _combine(bank.stack, sol.mu)
    return pack_kernel_model(kind, data, sol.inner, K, p.svm, mu=sol.mu, bank=bank.specs,
                             extra={"mkl": sol})
