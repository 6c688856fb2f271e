from dataclasses import replace

import numpy as np
import pytest

from metric_svm.data import Dataset
from metric_svm.kernel import KernelSpec, build_bank, build_gram
from metric_svm.mkl import (MklParams, descent_direction, mkl_gradient, simplex_step, solve_mkl,
                            train_mkl)
from metric_svm.models import decision_value, model_from_dict, model_to_dict, train_svm_family
from metric_svm.qp import DualSolution, SvmMParams, solve_dual

from conftest import blobs, random_dataset

SVM_P = SvmMParams(c1=10, c2=10 / 3, epsilon=3.0)


def random_stack(n, m, seed):
    ds = random_dataset(n, 3, seed)
    specs = [KernelSpec("gaussian", sigma=s) for s in (0.5, 1.0, 2.0, 4.0)[:m]]
    return ds, build_bank(specs, ds).stack


def J(stack, y, mu, p=SVM_P):
    return solve_dual(np.tensordot(mu, stack, axes=1), y, replace(p, tol=1e-10)).objective


class TestGradient:
    def test_zero_delta(self):
        ds, stack = random_stack(8, 2, 0)
        zero = DualSolution(np.zeros(8), np.zeros(8), 0.0, 0.0, 0.0, 0, "converged")
        np.testing.assert_array_equal(mkl_gradient(stack, ds.labels, zero), np.zeros(2))

    def test_identical_grams(self):
        ds, stack = random_stack(10, 1, 1)
        stack = np.concatenate([stack, stack])
        sol = solve_dual(stack[0], ds.labels, SVM_P)
        g = mkl_gradient(stack, ds.labels, sol)
        assert g[0] == g[1]

    def test_finite_differences(self):
        ds, stack = random_stack(12, 3, 2)
        y = ds.labels.astype(float)
        mu = np.array([0.3, 0.5, 0.2])
        sol = solve_dual(np.tensordot(mu, stack, axes=1), y, replace(SVM_P, tol=1e-12))
        g = mkl_gradient(stack, y, sol)
        h = 1e-5
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            fd = (J(stack, y, mu + e) - J(stack, y, mu - e)) / (2 * h)
            assert abs(fd - g[k]) <= 1e-4 * abs(g[k])

    def test_dimension_mismatch(self):
        ds, stack = random_stack(8, 2, 0)
        bad = DualSolution(np.zeros(5), np.zeros(5), 0.0, 0.0, 0.0, 0, "converged")
        with pytest.raises(ValueError):
            mkl_gradient(stack, ds.labels[:5], bad)


class TestSimplexStep:
    def test_constant_gradient(self):
        mu = np.array([0.2, 0.5, 0.3])
        np.testing.assert_array_equal(simplex_step(mu, np.full(3, 7.0), 0.1), mu)

    def test_mass_moves_to_attractive(self):
        out = simplex_step(np.array([1.0, 0.0]), np.array([1.0, 0.0]), 0.3)
        assert out[1] > 0 and out.sum() == pytest.approx(1.0, abs=1e-12)

    def test_zero_weight_not_pushed_negative(self):
        d = descent_direction(np.array([0.0, 1.0, 0.0]), np.array([5.0, 0.0, -1.0]))
        assert d[0] == 0 and d[2] > 0 and d.sum() == pytest.approx(0.0, abs=1e-15)

    def test_reference_tie_lowest_index(self):
        d = descent_direction(np.array([0.5, 0.5]), np.array([0.0, 1.0]))
        assert d[1] < 0 and d[0] > 0

    def test_projection_contract(self):
        r = np.random.default_rng(0)
        for _ in range(500):
            m = int(r.integers(2, 8))
            mu = r.dirichlet(np.ones(m))
            mu[r.random(m) < 0.3] = 0.0
            if mu.sum() == 0:
                mu[0] = 1.0
            mu /= mu.sum()
            out = simplex_step(mu, r.standard_normal(m), float(r.exponential(2.0)))
            assert abs(out.sum() - 1) <= 1e-12 and out.min() >= 0

    def test_off_simplex(self):
        with pytest.raises(ValueError):
            simplex_step(np.array([0.6, 0.6]), np.zeros(2), 0.1)
        with pytest.raises(ValueError):
            simplex_step(np.array([0.5, 0.5]), np.zeros(2), 0.0)


class TestSolve:
    def test_identical_kernels(self):
        ds = random_dataset(20, 3, 3)
        spec = KernelSpec("gaussian", sigma=1.5)
        stack = build_bank([spec, spec], ds).stack
        sol = solve_mkl(stack, ds.labels, MklParams(svm=SVM_P))
        assert sol.iterations <= 2
        ref = solve_dual(stack[0], ds.labels, replace(SVM_P, tol=1e-8)).objective
        assert sol.objective_trace[-1] == pytest.approx(ref, rel=1e-8)

    def test_informative_kernel_wins(self):
        ds = blobs(20, sep=3.0, scale=0.5, seed=5)
        noise = np.random.default_rng(5).standard_normal((ds.n, 20))
        K_lin = build_gram(KernelSpec("linear"), ds).values
        K_noise = build_gram(KernelSpec("linear"), noise).values
        sol = solve_mkl(np.stack([K_lin, K_noise]), ds.labels, MklParams(svm=SVM_P))
        assert sol.mu[0] >= 0.9

    def test_vertex_start_equals_single_kernel(self):
        ds = random_dataset(20, 3, 6)
        specs = [KernelSpec("gaussian", sigma=1.0), KernelSpec("polynomial", degree=2)]
        bank = build_bank(specs, ds)
        p = MklParams(svm=SVM_P, mu_tol=1e9, outer_max_iter=1)
        m = train_mkl(ds, bank, p, kind="mkl_m", mu_init=np.array([0.0, 1.0]))
        single = train_svm_family(ds, specs[1], replace(SVM_P, tol=1e-8), kind="svm_m")
        grid = np.random.default_rng(0).standard_normal((30, 3))
        np.testing.assert_allclose(decision_value(m, grid), decision_value(single, grid), atol=1e-9)

    def test_singleton_bank_gamma_is_svm(self):
        ds = random_dataset(25, 3, 7)
        spec = KernelSpec("polynomial", degree=3)
        m = train_mkl(ds, [spec], MklParams(svm=SVM_P), kind="mkl_gamma")
        ref = train_svm_family(ds, spec, replace(SVM_P, tol=1e-8), kind="svm")
        np.testing.assert_allclose(decision_value(m, ds), decision_value(ref, ds), atol=1e-6)

    @pytest.mark.parametrize("kind", ["mkl_m", "eps_mkl", "mkl_gamma"])
    def test_trace_and_simplex(self, kind):
        ds = random_dataset(30, 3, 8)
        specs = [KernelSpec("gaussian", sigma=s) for s in (0.5, 1.0, 3.0)] + [KernelSpec("linear")]
        m = train_mkl(ds, specs, MklParams(svm=SVM_P), kind=kind)
        sol = m.diagnostics["mkl"]
        assert np.all(np.diff(sol.objective_trace) <= 1e-10)
        assert abs(sol.mu.sum() - 1) <= 1e-9 and sol.mu.min() >= 0
        assert sol.status in ("converged", "stalled", "max_iter")
        assert sol.inner.kkt_residual <= 1e-8
        if kind == "mkl_gamma":
            assert np.all(m.diagnostics["dual"].beta == 0)

    def test_model_round_trip(self):
        ds = random_dataset(20, 2, 9)
        specs = [KernelSpec("gaussian", sigma=1.0), KernelSpec("linear")]
        m = train_mkl(ds, specs, MklParams(svm=SVM_P))
        back = model_from_dict(model_to_dict(m))
        np.testing.assert_allclose(decision_value(back, ds), decision_value(m, ds), atol=1e-12)
        assert back.bank == m.bank

    def test_bad_mu_init(self):
        ds, stack = random_stack(10, 2, 10)
        with pytest.raises(ValueError):
            solve_mkl(stack, ds.labels, MklParams(), mu_init=np.array([1.0, 0.0, 0.0]))

    def test_params_validated(self):
        with pytest.raises(ValueError):
            MklParams(mu_tol=0)
        with pytest.raises(ValueError):
            MklParams(outer_max_iter=0)


def test_objective_convex_along_segments():
    r = np.random.default_rng(11)
    for seed in range(5):
        ds, stack = random_stack(15, 4, 20 + seed)
        y = ds.labels.astype(float)
        mu1, mu2 = r.dirichlet(np.ones(4)), r.dirichlet(np.ones(4))
        j1, j2 = J(stack, y, mu1), J(stack, y, mu2)
        for t in (0.25, 0.5, 0.75):
            assert J(stack, y, t * mu1 + (1 - t) * mu2) <= t * j1 + (1 - t) * j2 + 1e-6


def test_bank_size_mismatch():
    ds = random_dataset(10, 2, 0)
    bank = build_bank([KernelSpec("linear")], random_dataset(12, 2, 0))
    with pytest.raises(ValueError):
        train_mkl(ds, bank)


def test_data_object_not_mutated():
    ds = random_dataset(10, 2, 0)
    before = ds.features.copy()
    train_mkl(ds, [KernelSpec("linear"), KernelSpec("gaussian")], MklParams(svm=SVM_P))
    assert isinstance(ds, Dataset)
    np.testing.assert_array_equal(ds.features, before)
