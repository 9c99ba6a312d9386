import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from sem_el import el, sem
from sem_el.weights import WeightMatrix

from .conftest import random_weights


def bisect_scalar_lambda(w, iters=200):
    """Root of sum w_i / (1 + lam w_i) on the feasible interval, by bisection."""
    w = np.asarray(w, dtype=float)
    lo = -1.0 / w.max()
    hi = -1.0 / w.min()
    f = lambda lam: np.sum(w / (1.0 + lam * w))  # noqa: E731 - decreasing in lam
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def mp_chi2_quantile(df, alpha):
    """Bisection at 40 digits on the upper regularized incomplete gamma function."""
    with mpmath.workdps(40):
        a = mpmath.mpf(df) / 2
        tail = 1 - mpmath.mpf(alpha)
        lo, hi = mpmath.mpf(0), mpmath.mpf(1000)
        for _ in range(200):
            mid = (lo + hi) / 2
            if mpmath.gammainc(a, mid / 2, mpmath.inf, regularized=True) > tail:
                lo = mid
            else:
                hi = mid
        return float((lo + hi) / 2)


class TestOmega:
    def _inputs(self, n, k=1):
        rng = np.random.default_rng(n)
        w = WeightMatrix(random_weights(rng, n))
        d = sem.SemDesign(rng.normal(size=(n, k)), w)
        return d, rng

    def test_zero_eps(self):
        d, rng = self._inputs(6)
        a = sem.build_a(d.w, 0.3)
        _, gt = sem.g_matrices(d.w, 0.3)
        om = el.omega(d, gt, a, np.zeros(6), 2.0)
        assert_allclose(om[:, 0], 0.0)
        assert_allclose(om[:, 1], -np.diag(gt) * 2.0)
        assert_allclose(om[:, 2], -2.0)

    def test_hand_values(self):
        # a 3-unit design would break n > k + 2; a 4th unit with eps = 0 leaves rows 1-3 alone
        w4 = WeightMatrix(np.ones((4, 4)) - np.eye(4))
        d = sem.SemDesign(np.ones((4, 1)), w4)
        gt = np.eye(4)
        eps = np.array([1.0, 2.0, 3.0, 0.0])
        om = el.omega(d, gt, np.eye(4), eps, 1.0)
        assert_allclose(om[:3, 1], [0.0, 3.0, 8.0])
        assert_allclose(om[:, 2], [0.0, 3.0, 8.0, -1.0])
        assert_allclose(om[:, 0], eps)

    @pytest.mark.parametrize("n", [5, 20, 49])
    def test_column_sums(self, n):
        d, rng = self._inputs(n, k=2)
        rho = rng.uniform(-0.9, 0.9)
        a = sem.build_a(d.w, rho)
        _, gt = sem.g_matrices(d.w, rho)
        eps = rng.normal(size=n)
        s2 = rng.uniform(0.5, 2)
        om = el.omega(d, gt, a, eps, s2)
        assert om.shape == (n, 4)
        quad = sum(gt[i, j] * eps[i] * eps[j] for i in range(n) for j in range(n))
        assert_allclose(om[:, :2].sum(axis=0), d.x.T @ a @ eps, rtol=1e-10, atol=1e-12)
        assert_allclose(om[:, 2].sum(), quad - s2 * np.trace(gt), rtol=1e-10)
        assert_allclose(om[:, 3].sum(), eps @ eps - n * s2, rtol=1e-10)

    def test_sum_permutation_invariant(self, rng):
        n = 20
        d, _ = self._inputs(n)
        th = sem.Theta([1.5], 0.4, 1.2)
        y = rng.normal(size=n)
        perm = rng.permutation(n)
        w_p = WeightMatrix(d.w.values[np.ix_(perm, perm)])
        d_p = sem.SemDesign(d.x[perm], w_p)

        def total(design, yy):
            a = sem.build_a(design.w, th.rho)
            _, gt = sem.g_matrices(design.w, th.rho)
            eps = sem.residuals(design, yy, th)
            return el.omega(design, gt, a, eps, th.sigma2).sum(axis=0)

        assert_allclose(total(d_p, y[perm]), total(d, y), rtol=1e-10)

    def test_dimension_mismatch(self, design49):
        with pytest.raises(ValueError):
            el.omega(design49, np.eye(49), np.eye(49), np.zeros(48), 1.0)


class TestSolveLambda:
    def test_balanced_rows(self):
        v = np.array([1.0, -2.0, 0.5])
        om = np.vstack([v, -v, 2 * v, -2 * v, [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]])
        sol = el.solve_lambda(om)
        assert sol.converged and sol.iterations <= 1
        assert_allclose(sol.lam, 0.0, atol=1e-14)
        assert el.el_statistic(om).statistic == 0.0

    def test_hull_infeasible(self, rng):
        om = rng.normal(size=(30, 3))
        om[:, 0] = np.abs(om[:, 0]) + 0.1
        sol = el.solve_lambda(om)
        assert sol.status == el.HULL_INFEASIBLE
        assert el.el_statistic(om).statistic == math.inf

    def test_scalar_oracle(self):
        w = np.array([-1.0, -1.0, 1.0, 3.0])
        lam_ref = bisect_scalar_lambda(w)
        sol = el.solve_lambda(w)
        assert sol.converged
        assert_allclose(sol.lam[0], lam_ref, rtol=1e-10)
        stat = el.el_statistic(w).statistic
        assert_allclose(stat, 2 * np.sum(np.log1p(lam_ref * w)), rtol=1e-10)

    def test_weights_and_constraints(self, rng):
        om = rng.normal(size=(60, 3)) + [0.2, -0.1, 0.05]
        sol = el.solve_lambda(om)
        assert sol.converged
        p = el.el_weights(om, sol.lam)
        assert np.all(p > 0)
        assert abs(p.sum() - 1) < 1e-8
        assert np.abs(p @ om).max() < 1e-8

    def test_dual_monotone(self, rng):
        om = rng.standard_t(3, size=(80, 3)) + [0.3, 0.2, -0.2]
        sol = el.solve_lambda(om)
        h = np.array(sol.history)
        assert sol.converged and len(h) > 2
        assert np.all(np.diff(h) >= -1e-12 * (1 + np.abs(h[1:])))

    def test_affine_invariance(self, rng):
        om = rng.normal(size=(50, 3)) + [0.1, 0.0, -0.15]
        c = rng.normal(size=(3, 3)) + 3 * np.eye(3)
        a = el.el_statistic(om).statistic
        b = el.el_statistic(om @ c.T).statistic
        assert abs(a - b) < 1e-8

    def test_max_iter(self, rng):
        om = rng.normal(size=(40, 3)) + [0.4, 0.3, 0.2]
        sol = el.solve_lambda(om, el.SolverOptions(max_iter=1))
        assert sol.status == el.MAX_ITER and sol.iterations == 1
        res = el.el_statistic(om, el.SolverOptions(max_iter=1))
        assert res.status == el.MAX_ITER and math.isfinite(res.statistic)

    def test_too_few_rows(self):
        with pytest.raises(ValueError):
            el.solve_lambda(np.ones((3, 3)))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(5, 60), st.integers(0, 2**32 - 1))
    def test_converged_solution_properties(self, n, seed):
        rng = np.random.default_rng(seed)
        om = rng.normal(size=(n, 2)) + rng.normal(scale=0.3, size=2)
        sol = el.solve_lambda(om)
        if sol.status != el.CONVERGED:
            assert sol.status == el.HULL_INFEASIBLE
            return
        z = 1 + om @ sol.lam
        assert np.all(z > 0)
        assert sol.gradient_norm <= 1e-10 * (1 + np.linalg.norm(om.mean(axis=0)))


class TestElTest:
    def test_exact_fit_not_covered(self, design49):
        th = sem.Theta([3.5], 0.3, 1.0)
        rep = el.el_test(design49, design49.x @ th.beta, th, 0.95)
        assert rep.status == el.HULL_INFEASIBLE
        assert not rep.covered and rep.statistic == math.inf

    def test_alpha_monotone(self, design49):
        th = sem.Theta([3.5], 0.15, 1.0)
        for seed in range(30):
            y = sem.simulate(design49, th, "normal", seed).y
            lo = el.el_test(design49, y, th, 0.5)
            hi = el.el_test(design49, y, th, 0.99)
            assert lo.statistic == hi.statistic
            assert (not lo.covered) or hi.covered

    def test_report_fields(self, design49):
        th = sem.Theta([3.5], 0.15, 1.0)
        y = sem.simulate(design49, th, "normal", 1).y
        rep = el.el_test(design49, y, th, 0.95)
        assert rep.df == 3
        assert rep.threshold == pytest.approx(7.814727903251178, rel=1e-12)

    def test_bad_alpha(self, design49):
        with pytest.raises(ValueError):
            el.el_test(design49, np.zeros(49), sem.Theta([0.0], 0.0, 1.0), 1.0)


class TestChi2Quantile:
    def test_two_df_closed_form(self):
        assert el.chi2_quantile(2, 0.95) == pytest.approx(-2 * math.log(0.05), rel=1e-12)

    def test_three_df(self):
        assert el.chi2_quantile(3, 0.95) == pytest.approx(7.814727903251178, rel=1e-10)

    def test_one_sigma(self):
        alpha = math.erf(1 / math.sqrt(2))
        assert el.chi2_quantile(1, alpha) == pytest.approx(1.0, rel=1e-10)

    @pytest.mark.parametrize("df", [1, 2, 3, 4, 7, 30])
    @pytest.mark.parametrize("alpha", [1e-6, 0.05, 0.5, 0.6826894921, 0.95, 0.999, 1 - 1e-10])
    def test_against_high_precision(self, df, alpha):
        assert el.chi2_quantile(df, alpha) == pytest.approx(mp_chi2_quantile(df, alpha), rel=1e-10)

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1, 1.5])
    def test_bad_alpha(self, alpha):
        with pytest.raises(ValueError):
            el.chi2_quantile(3, alpha)

    def test_bad_df(self):
        with pytest.raises(ValueError):
            el.chi2_quantile(0, 0.5)
