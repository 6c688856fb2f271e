import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from metric_svm.kernel import KernelSpec, build_gram, cross_kernel
from metric_svm.qp import (DualSolution, SolverError, SvmMParams, check_kkt, dual_objective,
                           oracle_solve, solve_dual)

from conftest import random_dataset

PAIR_K = np.array([[1.0, -1.0], [-1.0, 1.0]])
PAIR_Y = np.array([1.0, -1.0])
INF = math.inf


def gaussian_problem(seed, n=10, d=3, sigma=1.0):
    data = random_dataset(n, d, seed)
    return build_gram(KernelSpec("gaussian", sigma=sigma), data).values, data.labels.astype(float)


def cvxopt_dual(K, y, p):
    """Reference dual value from an interior-point QP solver."""
    pytest.importorskip("cvxopt")
    from cvxopt import matrix, solvers
    n = y.size
    if p.beta_pinned:
        s, cap, lin = y, np.full(n, p.c1), -np.ones(n)
        idx = np.arange(n)
    else:
        s = np.r_[y, -y]
        cap = np.r_[np.full(n, p.c1), np.full(n, p.c2)]
        lin = np.r_[-np.ones(n), np.full(n, 1.0 + p.epsilon)]
        idx = np.r_[np.arange(n), np.arange(n)]
    m = s.size
    Q = np.outer(s, s) * K[np.ix_(idx, idx)] + 1e-12 * np.eye(m)
    G = np.vstack([-np.eye(m), np.eye(m)])
    h = np.r_[np.zeros(m), cap]
    solvers.options.update(show_progress=False, abstol=1e-12, reltol=1e-12, feastol=1e-12)
    res = solvers.qp(matrix(Q), matrix(lin), matrix(G), matrix(h), matrix(s[None, :]), matrix(0.0))
    return -res["primal objective"]


class TestSymmetricPair:
    def test_hard_margin(self):
        sol = solve_dual(PAIR_K, PAIR_Y, SvmMParams(c1=100, epsilon=INF))
        np.testing.assert_allclose(sol.alpha, [0.5, 0.5], atol=1e-12)
        np.testing.assert_array_equal(sol.beta, [0.0, 0.0])
        assert sol.bias == pytest.approx(0.0, abs=1e-12)
        w = float(np.sum(sol.delta * PAIR_Y * np.array([1.0, -1.0])))
        assert w == pytest.approx(1.0)
        assert sol.status == "converged"
        assert check_kkt(PAIR_K, PAIR_Y, SvmMParams(c1=100, epsilon=INF), sol) <= 1e-6

    def test_zero_band(self):
        p = SvmMParams(c1=100, c2=100, epsilon=0.0)
        sol = solve_dual(PAIR_K, PAIR_Y, p)
        f = PAIR_K @ (PAIR_Y * sol.delta) + sol.bias
        np.testing.assert_allclose(PAIR_Y * f, [1.0, 1.0], atol=1e-9)
        assert sol.bias == pytest.approx(0.0, abs=1e-12)

    def test_oracle_closed_form(self):
        sol = oracle_solve(PAIR_K, PAIR_Y, SvmMParams(c1=100, epsilon=INF))
        np.testing.assert_allclose(sol.alpha, [0.5, 0.5], atol=1e-5)

    def test_oracle_box_saturation(self):
        sol = oracle_solve(PAIR_K, PAIR_Y, SvmMParams(c1=1e-6, epsilon=INF))
        np.testing.assert_allclose(sol.alpha, [1e-6, 1e-6], rtol=1e-6)

    def test_zero_point_is_not_certified(self):
        p = SvmMParams(c1=100, epsilon=INF)
        zero = DualSolution(np.zeros(2), np.zeros(2), 0.0, 0.0, 0.0, 0, "converged")
        assert check_kkt(PAIR_K, PAIR_Y, p, zero) >= 1.0


class TestAgainstOracles:
    @pytest.mark.parametrize("seed", range(20))
    def test_gaussian_band(self, seed):
        K, y = gaussian_problem(seed)
        p = SvmMParams(c1=10, c2=10 / 3, epsilon=3.0)
        a, o = solve_dual(K, y, p), oracle_solve(K, y, p)
        assert abs(a.objective - o.objective) <= 1e-5 * abs(o.objective)
        assert a.kkt_residual <= 1e-6

    @pytest.mark.parametrize("seed", range(8))
    def test_oracle_not_better_than_smo(self, seed):
        K, y = gaussian_problem(seed + 100, n=8, sigma=0.8)
        p = SvmMParams(c1=5, c2=2, epsilon=1.0)
        a, o = solve_dual(K, y, p), oracle_solve(K, y, p)
        assert o.objective >= a.objective - 1e-5 * (1 + abs(a.objective))

    @pytest.mark.parametrize("eps", [0.0, 1.0, INF])
    @pytest.mark.parametrize("seed", range(4))
    def test_interior_point_reference(self, seed, eps):
        K, y = gaussian_problem(seed + 200, n=9, sigma=1.3)
        p = SvmMParams(c1=3.0, c2=1.0, epsilon=eps, tol=1e-9)
        ref = cvxopt_dual(K, y, p)
        assert solve_dual(K, y, p).objective == pytest.approx(ref, rel=1e-6)
        assert oracle_solve(K, y, p).objective == pytest.approx(ref, rel=1e-6)


class TestKkt:
    def test_perturbation_detected(self):
        K, y = gaussian_problem(3)
        p = SvmMParams(c1=10, c2=10 / 3, epsilon=3.0)
        sol = solve_dual(K, y, p)
        i = int(np.argmax((sol.alpha > 0) & (sol.alpha < p.c1)))
        j = int(np.flatnonzero(y == y[i])[np.flatnonzero(y == y[i]) != i][0])
        alpha = sol.alpha.copy()
        # shift along the equality constraint so only optimality is broken
        t = min(0.1, p.c1 - alpha[i], alpha[j])
        alpha[i] += t
        alpha[j] -= t
        bad = DualSolution(alpha, sol.beta, sol.bias, 0.0, 0.0, 0, "converged")
        assert check_kkt(K, y, p, bad) > p.tol

    def test_dimension_mismatch(self):
        p = SvmMParams()
        bad = DualSolution(np.zeros(3), np.zeros(3), 0.0, 0.0, 0.0, 0, "converged")
        with pytest.raises(SolverError):
            check_kkt(PAIR_K, PAIR_Y, p, bad)


class TestSolverBehaviour:
    def test_objective_trace_non_decreasing(self):
        K, y = gaussian_problem(7, n=40, d=4)
        sol = solve_dual(K, y, SvmMParams(c1=10, c2=3, epsilon=3.0), trace_every=1)
        assert np.all(np.diff(sol.objective_trace) >= -1e-12)

    def test_max_iter_returns_feasible_point(self):
        K, y = gaussian_problem(8, n=40, d=4)
        p = SvmMParams(c1=10, c2=3, epsilon=0.0, max_iter=5)
        sol = solve_dual(K, y, p)
        assert sol.status == "max_iter" and sol.iterations == 5
        assert np.all((sol.alpha >= 0) & (sol.alpha <= p.c1))
        assert np.all((sol.beta >= 0) & (sol.beta <= p.c2))
        assert abs(y @ sol.delta) <= 1e-9

    def test_large_epsilon_matches_pinned(self):
        for seed in range(5):
            K, y = gaussian_problem(seed + 30, n=15)
            big = solve_dual(K, y, SvmMParams(c1=5, c2=5, epsilon=1e6))
            svm = solve_dual(K, y, SvmMParams(c1=5, epsilon=INF))
            assert np.max(big.beta) <= 1e-6
            np.testing.assert_allclose(big.delta, svm.delta, atol=1e-6)

    def test_scale_covariance_sign_pattern(self):
        X = np.array([[2.0, 0.0], [3.0, 1.0], [2.5, -1.0], [-2.0, 0.0], [-3.0, 1.0], [-2.5, -0.5]])
        y = np.r_[np.ones(3), -np.ones(3)]
        K = cross_kernel(KernelSpec("linear"), X, X)
        c = 4.0
        a = solve_dual(K, y, SvmMParams(c1=10, c2=3, epsilon=1.0, tol=1e-10))
        b = solve_dual(c * K, y, SvmMParams(c1=10 / c, c2=3 / c, epsilon=1.0, tol=1e-10))
        np.testing.assert_allclose(b.delta * c, a.delta, atol=1e-6)
        fa = np.sign(K @ (y * a.delta) + a.bias)
        fb = np.sign(c * K @ (y * b.delta) + b.bias)
        np.testing.assert_array_equal(fa, fb)

    def test_duplicate_points(self):
        K, y = gaussian_problem(9, n=10)
        idx = np.r_[np.arange(10), [0, 0, 3]]
        p = SvmMParams(c1=10, c2=3, epsilon=2.0)
        sol = solve_dual(K[np.ix_(idx, idx)], y[idx], p)
        assert sol.status == "converged" and sol.kkt_residual <= p.tol

    def test_mutually_exclusive_multipliers(self):
        for seed in range(10):
            K, y = gaussian_problem(seed + 50, n=12, sigma=0.5)
            p = SvmMParams(c1=10, c2=10 / 3, epsilon=0.5)
            sol = solve_dual(K, y, p)
            a_free = (sol.alpha > 0) & (sol.alpha < p.c1)
            b_free = (sol.beta > 0) & (sol.beta < p.c2)
            assert not np.any(a_free & b_free)

    def test_warm_start_reaches_same_optimum(self):
        K, y = gaussian_problem(11, n=30)
        lo = solve_dual(K, y, SvmMParams(c1=1, c2=1 / 3, epsilon=3))
        p = SvmMParams(c1=10, c2=10 / 3, epsilon=3)
        warm = solve_dual(K, y, p, init=(lo.alpha, lo.beta))
        cold = solve_dual(K, y, p)
        assert warm.objective == pytest.approx(cold.objective, rel=1e-9)

    def test_dual_objective_helper(self):
        assert dual_objective(PAIR_K, PAIR_Y, np.array([0.5, 0.5]), np.zeros(2), INF) == pytest.approx(0.5)


class TestErrors:
    def test_single_class(self):
        with pytest.raises(SolverError, match="both classes"):
            solve_dual(np.eye(2), np.ones(2), SvmMParams())

    def test_non_finite(self):
        with pytest.raises(SolverError, match="non-finite"):
            solve_dual(np.array([[1.0, np.nan], [np.nan, 1.0]]), PAIR_Y, SvmMParams())

    def test_shape(self):
        with pytest.raises(SolverError):
            solve_dual(np.eye(3), PAIR_Y, SvmMParams())

    def test_oracle_size_limit(self):
        with pytest.raises(SolverError, match="n <= 50"):
            oracle_solve(np.eye(52), np.r_[np.ones(26), -np.ones(26)], SvmMParams())

    @pytest.mark.parametrize("kw", [dict(c1=0), dict(c2=-1), dict(epsilon=-0.1), dict(tol=0)])
    def test_bad_params(self, kw):
        with pytest.raises(SolverError):
            SvmMParams(**kw)

    def test_infeasible_init(self):
        with pytest.raises(SolverError, match="equality"):
            solve_dual(PAIR_K, PAIR_Y, SvmMParams(), init=(np.array([1.0, 0.0]), np.zeros(2)))


@settings(max_examples=60, deadline=None)
@given(n=st.integers(2, 25), seed=st.integers(0, 100_000), c1=st.sampled_from([0.1, 1.0, 10.0, 100.0]),
       eps=st.sampled_from([0.0, 0.5, 3.0, INF]), kind=st.sampled_from(["linear", "poly:2", "gaussian:1"]))
def test_feasible_and_certified(n, seed, c1, eps, kind):
    from metric_svm.kernel import parse_kernel
    r = np.random.default_rng(seed)
    y = np.where(r.random(n) < 0.5, 1.0, -1.0)
    y[0], y[-1] = 1.0, -1.0
    X = r.standard_normal((n, 3))
    K = build_gram(parse_kernel(kind), X).values
    p = SvmMParams(c1=c1, c2=c1 / 3, epsilon=eps)
    sol = solve_dual(K, y, p)
    assert np.all(sol.alpha >= 0) and np.all(sol.alpha <= c1)
    assert np.all(sol.beta >= 0) and np.all(sol.beta <= p.c2_effective)
    assert abs(y @ sol.delta) <= p.tol
    assert sol.status == "converged" and sol.kkt_residual <= p.tol
