"""
Empirical likelihood for the spatial error model.

For a parameter point ``theta = (beta, rho, sigma2)`` each unit contributes
an estimating-function vector of length ``k + 2``::

    omega_i = ( b_i eps_i,
                gt_ii (eps_i^2 - sigma2) + 2 eps_i sum_{j<i} gt_ij eps_j,
                eps_i^2 - sigma2 )

where ``b_i`` is column ``i`` of ``X' A(rho)`` and ``gt`` is the symmetric
part of ``W A(rho)^{-1}``. The middle entries are martingale differences
whose sum is the centred quadratic form ``eps' Gt eps - sigma2 tr(Gt)``.

The EL ratio statistic is ``2 sum log(1 + lambda' omega_i)`` where
``lambda`` maximises the concave dual ``sum log(1 + lambda' omega_i)``.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import sem

__all__ = [
    "ElResult",
    "LambdaSolution",
    "TestReport",
    "chi2_quantile",
    "el_statistic",
    "el_test",
    "el_weights",
    "omega",
    "solve_lambda",
]

CONVERGED = "converged"
HULL_INFEASIBLE = "hull-infeasible"
MAX_ITER = "max-iter"


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-10
    max_iter: int = 100
    lambda_bound: float = 1e8
    max_halvings: int = 60


DEFAULT_OPTIONS = SolverOptions()


@dataclass(frozen=True, eq=False)
class LambdaSolution:
    """
    Outcome of the dual maximisation.

    Attributes
    ----------
    lam : ndarray
        Multiplier vector (best iterate if not converged).
    status : str
        ``"converged"``, ``"hull-infeasible"`` or ``"max-iter"``.
    iterations : int
    gradient_norm : float
        ``|| n^-1 sum omega_i / (1 + lam' omega_i) ||`` at ``lam``.
    objective : float
        ``sum log(1 + lam' omega_i)`` at ``lam``.
    history : tuple of float
        Dual objective at every accepted iterate, starting from 0 at ``lam = 0``.
    """

    lam: np.ndarray
    status: str
    iterations: int
    gradient_norm: float
    objective: float
    history: tuple = field(default=(), repr=False)

    @property
    def converged(self):
        return self.status == CONVERGED


@dataclass(frozen=True, eq=False)
class ElResult:
    statistic: float
    solution: LambdaSolution
    df: int

    @property
    def status(self):
        return self.solution.status


@dataclass(frozen=True, eq=False)
class TestReport:
    """Result of checking whether a point lies in a confidence region."""

    statistic: float
    threshold: float
    covered: bool
    alpha: float
    df: int
    status: str = CONVERGED
    detail: object = field(default=None, repr=False)

    __test__ = False  # keep pytest from collecting this class


def omega(design, gtilde, a_rho, eps, sigma2):
    """
    Stack the estimating-function vectors as an ``n x (k + 2)`` array.

    Parameters
    ----------
    design : SemDesign
    gtilde : ndarray
        Symmetric ``n x n`` matrix ``(G + G') / 2``.
    a_rho : ndarray
        ``A(rho)``.
    eps : ndarray
        Innovations ``A(rho) (y - X beta)`` at the point being tested.
    sigma2 : float

    Returns
    -------
    ndarray
        Row ``i`` is ``omega_i``. Column sums are ``X' A eps``,
        ``eps' Gt eps - sigma2 tr(Gt)`` and ``eps' eps - n sigma2``.
    """
    eps = np.asarray(eps, dtype=float)
    gtilde = np.asarray(gtilde, dtype=float)
    a_rho = np.asarray(a_rho, dtype=float)
    n, k = design.n, design.k
    if eps.shape != (n,):
        raise ValueError(f"eps must have shape ({n},), got {eps.shape}")
    if gtilde.shape != (n, n) or a_rho.shape != (n, n):
        raise ValueError(f"gtilde and a_rho must be {n} x {n}")
    out = np.empty((n, k + 2))
    # row i of A'X is b_i'
    out[:, :k] = (a_rho.T @ design.x) * eps[:, None]
    sq = eps * eps - sigma2
    cross = np.tril(gtilde, -1) @ eps
    out[:, k] = np.diag(gtilde) * sq + 2.0 * eps * cross
    out[:, k + 1] = sq
    return out


def _dual(z):
    return float(np.sum(np.log(z)))


def solve_lambda(omegas, opts=DEFAULT_OPTIONS):
    """
    Solve ``sum omega_i / (1 + lam' omega_i) = 0`` by damped Newton ascent.

    The dual ``sum log(1 + lam' omega_i)`` is concave; each Newton step is
    halved until every ``1 + lam' omega_i >= 1/n^2`` and the step does not
    decrease the dual. Divergence of ``lam`` beyond ``opts.lambda_bound``,
    or a line search that cannot make progress, means zero is not inside
    the convex hull of the ``omega_i`` (status ``"hull-infeasible"``).
    """
    om = np.asarray(omegas, dtype=float)
    if om.ndim == 1:
        om = om[:, None]
    n, m = om.shape
    if n <= m:
        raise ValueError(f"need more rows than columns, got {n} x {m}")
    if not np.all(np.isfinite(om)):
        raise ValueError("omega contains non-finite entries")

    margin = 1.0 / n**2
    tol = opts.tol * (1.0 + np.linalg.norm(om.mean(axis=0)))
    ones = np.ones(n)
    lam = np.zeros(m)
    z = ones.copy()
    obj = 0.0
    history = [obj]
    status = MAX_ITER
    it = 0
    while True:
        score = om.T @ (1.0 / z)
        gnorm = float(np.linalg.norm(score) / n)
        if gnorm <= tol:
            status = CONVERGED
            break
        if it >= opts.max_iter:
            break
        jac = om / z[:, None]
        step = np.linalg.lstsq(jac, ones, rcond=None)[0]
        t = 1.0
        accepted = False
        for _ in range(opts.max_halvings):
            trial = lam + t * step
            zt = 1.0 + om @ trial
            if zt.min() >= margin:
                obj_t = _dual(zt)
                # concavity: a nonnegative slope at the trial point certifies ascent
                if obj_t >= obj or step @ (om.T @ (1.0 / zt)) >= 0.0:
                    accepted = True
                    break
            t *= 0.5
        it += 1
        if not accepted:
            status = HULL_INFEASIBLE
            break
        lam, z, obj = trial, zt, max(obj_t, obj)
        history.append(obj_t)
        if np.linalg.norm(lam) > opts.lambda_bound:
            status = HULL_INFEASIBLE
            score = om.T @ (1.0 / z)
            gnorm = float(np.linalg.norm(score) / n)
            break
    return LambdaSolution(
        lam=lam,
        status=status,
        iterations=it,
        gradient_norm=gnorm,
        objective=_dual(z),
        history=tuple(history),
    )


def el_weights(omegas, lam):
    """Implied probabilities ``p_i = 1 / (n (1 + lam' omega_i))``."""
    om = np.asarray(omegas, dtype=float)
    if om.ndim == 1:
        om = om[:, None]
    return 1.0 / (om.shape[0] * (1.0 + om @ np.atleast_1d(lam)))


def el_statistic(omegas, opts=DEFAULT_OPTIONS):
    """
    EL ratio statistic ``2 sum log(1 + lam' omega_i)``.

    ``+inf`` when the hull condition fails. A ``"max-iter"`` solution is
    returned with the statistic at the best iterate; callers should check
    ``result.status``.
    """
    om = np.asarray(omegas, dtype=float)
    if om.ndim == 1:
        om = om[:, None]
    sol = solve_lambda(om, opts)
    if sol.status == HULL_INFEASIBLE:
        stat = math.inf
    else:
        stat = max(0.0, 2.0 * float(np.sum(np.log1p(om @ sol.lam))))
    return ElResult(statistic=stat, solution=sol, df=om.shape[1])


def el_test(design, y, theta0, alpha, opts=DEFAULT_OPTIONS):
    """
    Is ``theta0`` inside the level-``alpha`` EL confidence region?

    Only a converged statistic at or below the chi-square quantile with
    ``k + 2`` degrees of freedom counts as covered.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    lu = sem.lu_a(design.w, theta0.rho)
    a = sem.build_a(design.w, theta0.rho, check=False)
    _, gt = sem.g_matrices(design.w, theta0.rho, lu=lu)
    eps = sem.residuals(design, y, theta0, a=a)
    res = el_statistic(omega(design, gt, a, eps, theta0.sigma2), opts)
    thr = chi2_quantile(res.df, alpha)
    covered = res.status == CONVERGED and res.statistic <= thr
    return TestReport(
        statistic=res.statistic,
        threshold=thr,
        covered=bool(covered),
        alpha=alpha,
        df=res.df,
        status=res.status,
        detail=res,
    )


def _chi2_pdf(x, a):
    return math.exp((a - 1.0) * math.log(x) - 0.5 * x - a * math.log(2.0) - special.gammaln(a))


def chi2_quantile(df, alpha, rtol=1e-12):
    """
    ``z`` with ``P(chi2_df <= z) = alpha``.

    Safeguarded Newton iteration on the regularized incomplete gamma
    function; the upper tail is used for ``alpha > 1/2`` to keep precision
    near one.

    Examples
    --------
    >>> round(chi2_quantile(2, 0.95), 10)
    5.9914645471
    """
    if not df >= 1:
        raise ValueError(f"df must be >= 1, got {df}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    a = 0.5 * df
    if alpha > 0.5:
        q = 1.0 - alpha

        def h(x):
            return q - special.gammaincc(a, 0.5 * x)

    else:

        def h(x):
            return special.gammainc(a, 0.5 * x) - alpha

    # Wilson-Hilferty start
    c = 2.0 / (9.0 * df)
    x = df * max(1.0 - c + float(special.ndtri(alpha)) * math.sqrt(c), 0.1) ** 3
    lo, hi = 0.0, None
    for _ in range(400):
        fx = float(h(x))
        if fx == 0.0:
            return x
        if fx < 0:
            lo = x
        else:
            hi = x
        pdf = _chi2_pdf(x, a)
        new = x - fx / pdf if pdf > 0 else math.nan
        inside = math.isfinite(new) and new > lo and (hi is None or new < hi)
        if not inside:
            new = 2.0 * x if hi is None else 0.5 * (lo + hi)
        if abs(new - x) <= rtol * new:
            return new
        if hi is not None and hi - lo <= rtol * hi:
            return 0.5 * (lo + hi)
        x = new
    raise RuntimeError("chi-square quantile iteration did not converge")
