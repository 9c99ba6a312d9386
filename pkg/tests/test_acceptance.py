"""
End-to-end acceptance checks. Each test records a one-line verdict that
the terminal summary prints as ``criterion N: PASS|FAIL ...``.

The Monte Carlo criteria (3-8) are marked ``slow``; together they take a
few minutes on one core.
"""

import math
import re
import subprocess
import sys

import numpy as np
import pytest

from sem_el import el, gaussian_ml, moments, montecarlo as mc, sem
from sem_el.weights import WeightMatrix, build_grid_queen, row_standardize

from .conftest import random_weights, record

BASE_SEED = 1
RHOS = (-0.85, -0.15, 0.15, 0.85)
GRIDS = {
    "grid49": mc.WeightsSpec(grid=(7, 7)),
    "grid100": mc.WeightsSpec(grid=(10, 10)),
    "grid169": mc.WeightsSpec(grid=(13, 13)),
    "I5xgrid49": mc.WeightsSpec(grid=(7, 7), pool=5),
}


def _coverage(label, rho, dist, reps=2000, sigma2=None):
    dist = sem.ErrorDistribution.parse(dist)
    s2 = dist.raw_variance if sigma2 is None else sigma2
    spec = mc.ExperimentSpec(GRIDS[label], sem.Theta([3.5], rho, s2), dist, reps=reps, base_seed=BASE_SEED)
    return mc.run_coverage(spec)


# --- 1: exact algebraic identities -------------------------------------------


def test_criterion_1_identities():
    rng = np.random.default_rng(2024)
    worst_mart = worst_cols = 0.0
    for t in range(100):
        n = (5, 20, 49)[t % 3]
        k = 1 + t % 2
        w = WeightMatrix(random_weights(rng, n))
        rho = rng.uniform(-0.95, 0.95)
        s2 = rng.uniform(0.2, 3.0)
        eps = rng.standard_t(5, size=n) * math.sqrt(s2)
        d = sem.SemDesign(rng.normal(size=(n, k)), w)
        a = sem.build_a(w, rho)
        _, gt = sem.g_matrices(w, rho)
        quad = eps @ gt @ eps - s2 * np.trace(gt)
        mart = moments.martingale_terms(gt, eps, s2).sum()
        worst_mart = max(worst_mart, abs(mart - quad) / max(abs(quad), 1e-300))
        om = el.omega(d, gt, a, eps, s2).sum(axis=0)
        target = np.concatenate([d.x.T @ a @ eps, [quad, eps @ eps - n * s2]])
        worst_cols = max(worst_cols, float(np.max(np.abs(om - target) / np.maximum(np.abs(target), 1e-300))))
    ok = worst_mart <= 1e-10 and worst_cols <= 1e-10
    record(1, ok, f"max rel err martingale sum {worst_mart:.2e}, omega column sums {worst_cols:.2e} (tol 1e-10)")
    assert ok


# --- 2: lambda solver against bisection --------------------------------------


def _bisect(w):
    lo, hi = -1.0 / w.max(), -1.0 / w.min()
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.sum(w / (1.0 + mid * w)) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_criterion_2_lambda_oracle():
    rng = np.random.default_rng(77)
    worst_lam = worst_sum = worst_mom = 0.0
    min_p = math.inf
    converged = 0
    for _ in range(1000):
        n = int(rng.integers(5, 200))
        w = rng.standard_t(4, size=n) + rng.normal(scale=0.5)
        if w.min() >= 0 or w.max() <= 0:
            w[0] = -np.sign(w[0]) * abs(w[0]) - 1.0
        sol = el.solve_lambda(w)
        if sol.status != el.CONVERGED:
            continue
        converged += 1
        ref = _bisect(w)
        worst_lam = max(worst_lam, abs(sol.lam[0] - ref) / max(1.0, abs(ref)))
        p = el.el_weights(w, sol.lam)
        min_p = min(min_p, p.min())
        worst_sum = max(worst_sum, abs(p.sum() - 1.0))
        worst_mom = max(worst_mom, abs(p @ w))
    ok = converged == 1000 and worst_lam <= 1e-8 and min_p > 0 and worst_sum <= 1e-8 and worst_mom <= 1e-8
    record(
        2,
        ok,
        f"{converged}/1000 converged; |lam - bisect| {worst_lam:.1e}, min p {min_p:.1e}, "
        f"|sum p - 1| {worst_sum:.1e}, |sum p w| {worst_mom:.1e}",
    )
    assert ok


# --- 3: moment oracles --------------------------------------------------------


@pytest.mark.slow
def test_criterion_3_moments():
    parts, ok = [], True
    for dist in sem.ErrorDistribution:
        spec = mc.ExperimentSpec(
            GRIDS["grid49"], sem.Theta([3.5], 0.15, dist.raw_variance), dist, reps=20_000, base_seed=BASE_SEED
        )
        err = mc.run_calibration(spec).sigma_rel_error
        ok &= err <= 0.05
        parts.append(f"{dist.value} {err:.3f}")

    rng = np.random.default_rng(5)
    reps = 1_000_000
    zmax = 0.0
    for dist in sem.ErrorDistribution:
        a = rng.normal(size=(5, 5))
        a = 0.5 * (a + a.T)
        b = rng.normal(size=5)
        m = moments.dist_moments(dist, 1.0)
        mean, var = moments.quadratic_variance(a, b, m)
        e = sem.error_draw(dist, 5 * reps, sem.make_rng(BASE_SEED)).reshape(reps, 5) / math.sqrt(dist.raw_variance)
        q = np.einsum("ri,ij,rj->r", e, a, e) + e @ b
        c = q - q.mean()
        z_mean = abs(q.mean() - mean) / (q.std() / math.sqrt(reps))
        z_var = abs(c @ c / (reps - 1) - var) / ((c * c).std() / math.sqrt(reps))
        zmax = max(zmax, z_mean, z_var)
    ok &= zmax <= 3.0

    d = sem.trend_design(row_standardize(build_grid_queen(7, 7)))
    a = sem.build_a(d.w, 0.15)
    _, gt = sem.g_matrices(d.w, 0.15)
    ident = 0.0
    for dist in sem.ErrorDistribution:
        m = moments.dist_moments(dist, 1.3)
        s = moments.sigma_matrix(d, a, gt, m)
        v22 = moments.quadratic_variance(gt, np.zeros(d.n), m)[1]
        v33 = moments.quadratic_variance(np.eye(d.n), np.zeros(d.n), m)[1]
        ident = max(ident, abs(s.s22 - v22) / v22, abs(s.s33 - v33) / v33)
    ok &= ident <= 1e-10
    record(
        3,
        ok,
        "Sigma rel Frobenius err " + ", ".join(parts) + f" (tol 0.05); quad form max |z| {zmax:.2f} (tol 3); "
        f"Sigma22/33 identity {ident:.1e}",
    )
    assert ok


# --- 4: chi-square calibration ------------------------------------------------


@pytest.mark.slow
def test_criterion_4_calibration():
    spec = mc.ExperimentSpec(
        GRIDS["grid169"], sem.Theta([3.5], 0.15, 1.0), "normal", reps=5000, base_seed=BASE_SEED, methods=("EL",)
    )
    cal = mc.run_calibration(spec, probs=(0.95,))
    p = float(cal.ecdf[0])
    ok = cal.ks_distance <= 0.05 and 0.9025 <= p <= 0.9625
    record(4, ok, f"KS {cal.ks_distance:.4f} (<= 0.05); P(stat <= 7.8147) = {p:.4f} in [0.9025, 0.9625]")
    assert ok


# --- 5: normal-error coverage cells ------------------------------------------


@pytest.mark.slow
def test_criterion_5_table_normal():
    checks = [
        ("grid49", 0.15, "EL", 0.8680),
        ("grid49", 0.15, "LR", 0.9290),
        ("grid49", -0.85, "LR", 0.9715),
        ("grid100", -0.15, "EL", 0.9045),
    ]
    cache, parts, ok = {}, [], True
    for label, rho, method, target in checks:
        if (label, rho) not in cache:
            cache[label, rho] = _coverage(label, rho, "normal", sigma2=1.0)
        res = cache[label, rho]
        got = res.el_coverage if method == "EL" else res.lr_coverage
        ok &= abs(got - target) <= 0.025
        parts.append(f"{label} rho={rho:g} {method} {got:.4f} vs {target}")
    record(5, ok, "; ".join(parts) + " (tol 0.025)")
    assert ok


# --- 6: non-normal degradation -----------------------------------------------


@pytest.fixture(scope="module")
def nonnormal_cells():
    return {
        (dist, label, rho): _coverage(label, rho, dist)
        for dist in ("t5", "chisq4")
        for label in GRIDS
        for rho in RHOS
    }


@pytest.mark.slow
def test_criterion_6_nonnormal(nonnormal_cells):
    bands = {"t5": (0.78, 0.88), "chisq4": (0.80, 0.89)}
    ok, parts, misses = True, [], []
    for dist, (lo, hi) in bands.items():
        lr = [r.lr_coverage for (d, _, _), r in nonnormal_cells.items() if d == dist]
        ok &= lo <= min(lr) and max(lr) <= hi
        parts.append(f"{dist} LR in [{min(lr):.4f}, {max(lr):.4f}] vs [{lo}, {hi}]")
    for (dist, label, rho), r in nonnormal_cells.items():
        if label in ("grid169", "I5xgrid49") and not r.el_coverage > r.lr_coverage:
            misses.append(f"{dist}/{label}/{rho:g}")
    ok &= not misses
    parts.append("EL > LR at n=169,245: " + ("all 16 cells" if not misses else "fails " + ",".join(misses)))
    record(6, ok, "; ".join(parts))
    assert ok


# --- 7: MLE sanity ------------------------------------------------------------


@pytest.mark.slow
def test_criterion_7_mle():
    d = sem.trend_design(GRIDS["grid169"].resolve())
    th = sem.Theta([3.5], 0.15, 1.0)
    lu = sem.lu_a(d.w, th.rho)
    rho_hat, beta_hat, lr_at_hat = [], [], []
    for r in range(1, 501):
        y = sem.simulate(d, th, "normal", BASE_SEED + r, lu=lu).y
        fit = gaussian_ml.mle(d, y)
        rho_hat.append(fit.theta_hat.rho)
        beta_hat.append(fit.theta_hat.beta[0])
        lr_at_hat.append(gaussian_ml.lr_statistic(d, y, fit.theta_hat, fit=fit))
    mr, mb = float(np.mean(rho_hat)), float(np.mean(beta_hat))
    ok = abs(mr - 0.15) <= 0.05 and abs(mb - 3.5) <= 0.05 and all(v == 0.0 for v in lr_at_hat)
    record(7, ok, f"mean rho_hat {mr:.4f}, mean beta_hat {mb:.4f} (tol 0.05); LR(theta_hat) == 0 in all 500")
    assert ok


# --- 8: determinism across worker counts --------------------------------------


@pytest.mark.slow
def test_criterion_8_determinism(tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text(
        "[experiment]\nweights = grid 7 7; grid 5 5 pool 2\nrho = -0.85, 0.15\n"
        "dist = chisq4\nreps = 120\nseed = 9\n"
    )
    outputs = []
    out = tmp_path / "table.csv"
    for threads in ("1", "3"):
        proc = subprocess.run(
            [sys.executable, "-m", "sem_el", "coverage", "--config", str(cfg), "--out", str(out), "--threads", threads],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
        outputs.append(re.sub(r"^# timestamp: .*\n", "", out.read_text(), flags=re.M).encode())
    ok = outputs[0] == outputs[1]
    record(8, ok, f"1 vs 3 workers: {'byte-identical' if ok else 'DIFFER'} ({len(outputs[0])} bytes, timestamp excluded)")
    assert ok
