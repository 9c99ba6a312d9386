"""
Gaussian likelihood, profile MLE and the likelihood-ratio baseline.

The MLE concentrates ``beta`` and ``sigma2`` out of the log-likelihood,
leaving a function of ``rho`` alone::

    Lc(rho) = -n/2 (log 2 pi + 1) - n/2 log s2(rho) + log det A(rho)

which is maximised over a 0.01-spaced grid on (-0.999, 0.999) and then
refined by golden-section search.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import sem
from .el import TestReport, chi2_quantile
from .exceptions import InconsistentFitError, NonConvergenceError

__all__ = ["MlFit", "MlOptions", "log_likelihood", "lr_statistic", "lr_test", "mle"]

LR_CLAMP = -1e-6
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class MlOptions:
    rho_bound: float = 0.999
    grid_step: float = 0.01
    xtol: float = 1e-8
    degenerate_rtol: float = 1e-12


DEFAULT_ML_OPTIONS = MlOptions()


@dataclass(frozen=True, eq=False)
class MlFit:
    """
    Result of :func:`mle`.

    ``theta_hat`` is None when ``converged`` is False.
    ``rho_profile`` holds ``(rho, Lc(rho))`` for every grid point.
    """

    theta_hat: object
    loglik: float
    rho_profile: list = field(repr=False)
    converged: bool
    message: str = ""


def log_likelihood(design, y, theta):
    """
    Gaussian log-likelihood of ``y`` at ``theta``.

    ``log det A(rho)`` comes from the LU pivots; a singular ``A`` or a
    nonpositive determinant raises.

    Examples
    --------
    >>> import numpy as np
    >>> from sem_el.weights import build_grid_queen
    >>> d = sem.trend_design(build_grid_queen(2, 3))
    >>> th = sem.Theta([1.0], 0.0, 1.0)
    >>> bool(np.isclose(log_likelihood(d, d.x @ th.beta, th), -3 * np.log(2 * np.pi)))
    True
    """
    n = design.n
    eps = sem.residuals(design, y, theta)
    logdet = sem.log_det_a(design.w, theta.rho)
    return float(
        -0.5 * n * math.log(2.0 * math.pi)
        - 0.5 * n * math.log(theta.sigma2)
        + logdet
        - 0.5 * float(eps @ eps) / theta.sigma2
    )


class _Profile:
    """Concentrated likelihood pieces for one (design, y) pair."""

    def __init__(self, design, y):
        x = design.x
        w = design.w.values
        self.n = design.n
        self.x, self.y = x, y
        self.wx, self.wy = w @ x, w @ y
        wx, wy = self.wx, self.wy
        # A(rho)' A(rho) moments are quadratic in rho
        self.m0, self.m1, self.m2 = x.T @ x, x.T @ wx + wx.T @ x, wx.T @ wx
        self.c0, self.c1, self.c2 = x.T @ y, x.T @ wy + wx.T @ y, wx.T @ wy
        self.s0, self.s1, self.s2 = y @ y, 2.0 * (y @ wy), wy @ wy
        self.eig = design.w_eigenvalues
        self.real_eig = np.isclose(self.eig.imag, 0.0)
        # row-standardised symmetric contiguity has a real spectrum
        self.eig_real = self.eig.real.copy() if np.all(self.real_eig) else None

    def logdet(self, rho):
        f = 1.0 - np.multiply.outer(np.atleast_1d(rho), self.eig)
        bad = np.any((f.real <= 0) & self.real_eig, axis=-1)
        out = np.sum(np.log(f), axis=-1).real
        return np.where(bad, -np.inf, out)

    def grid(self, rhos):
        r = rhos[:, None, None]
        m = self.m0 - r * self.m1 + r**2 * self.m2
        c = (self.c0 - r[:, :, 0] * self.c1 + r[:, :, 0] ** 2 * self.c2)[..., None]
        beta = np.linalg.solve(m, c)[..., 0]
        s = self.s0 - rhos * self.s1 + rhos**2 * self.s2
        ssr = s - np.einsum("gk,gk->g", beta, c[..., 0])
        return self._lc(ssr, rhos)

    def beta_ssr(self, rho):
        ax = self.x - rho * self.wx
        ay = self.y - rho * self.wy
        beta = np.linalg.lstsq(ax, ay, rcond=None)[0]
        e = ay - ax @ beta
        return beta, float(e @ e), ay

    def at(self, rho):
        if self.eig_real is None:
            return float(self.grid(np.array([rho]))[0])
        f = 1.0 - rho * self.eig_real
        if f.min() <= 0.0:
            return -math.inf
        m = self.m0 - rho * self.m1 + rho * rho * self.m2
        c = self.c0 - rho * self.c1 + rho * rho * self.c2
        beta = np.linalg.solve(m, c) if m.shape[0] > 1 else c / m[0, 0]
        ssr = float(self.s0 - rho * self.s1 + rho * rho * self.s2 - beta @ c)
        if not ssr > 0.0:
            return -math.inf
        n = self.n
        return (
            -0.5 * n * (math.log(2.0 * math.pi) + 1.0)
            - 0.5 * n * math.log(ssr / n)
            + float(np.sum(np.log(f)))
        )

    def _lc(self, ssr, rhos):
        n = self.n
        with np.errstate(divide="ignore", invalid="ignore"):
            val = (
                -0.5 * n * (math.log(2.0 * math.pi) + 1.0)
                - 0.5 * n * np.log(ssr / n)
                + self.logdet(rhos)
            )
        return np.where(np.isfinite(val) & (ssr > 0), val, -np.inf)


def _golden_max(f, a, b, xtol):
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > xtol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def mle(design, y, opts=DEFAULT_ML_OPTIONS):
    """
    Maximum likelihood estimate by profiling over ``rho``.

    Returns an :class:`MlFit`; degenerate data (zero residual variance) or
    a profile that is nowhere finite give ``converged=False``.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (design.n,):
        raise ValueError(f"y must have shape ({design.n},)")
    prof = _Profile(design, y)
    bound = opts.rho_bound
    steps = int(round(2 * math.floor(bound / opts.grid_step)))
    inner = np.linspace(-steps / 2 * opts.grid_step, steps / 2 * opts.grid_step, steps + 1)
    rhos = np.concatenate([[-bound], inner, [bound]])
    lc = prof.grid(rhos)
    profile = [(float(r), float(v)) for r, v in zip(rhos, lc)]
    if not np.any(np.isfinite(lc)):
        return MlFit(None, -math.inf, profile, False, "profile likelihood is nowhere finite")
    i = int(np.argmax(lc))
    lo, hi = rhos[max(i - 1, 0)], rhos[min(i + 1, rhos.size - 1)]
    rho_hat, _ = _golden_max(prof.at, lo, hi, opts.xtol)
    if prof.at(rho_hat) < lc[i]:
        rho_hat = float(rhos[i])
    beta, ssr, ay = prof.beta_ssr(rho_hat)
    if not ssr > opts.degenerate_rtol * float(ay @ ay):
        return MlFit(None, math.inf, profile, False, "zero residual variance")
    theta = sem.Theta(beta, rho_hat, ssr / design.n)
    return MlFit(theta, log_likelihood(design, y, theta), profile, True)


def lr_statistic(design, y, theta0, fit=None):
    """
    ``2 (L(theta_hat) - L(theta0))``, clamped at zero.

    Raises
    ------
    NonConvergenceError
        If the MLE did not converge.
    InconsistentFitError
        If the statistic is below ``-1e-6``.
    """
    fit = fit if fit is not None else mle(design, y)
    if not fit.converged:
        raise NonConvergenceError(f"MLE failed: {fit.message}")
    lr = 2.0 * (fit.loglik - log_likelihood(design, y, theta0))
    if lr < LR_CLAMP:
        raise InconsistentFitError(f"LR statistic {lr:.3e} < {LR_CLAMP}: optimiser failed")
    return max(lr, 0.0)


def lr_test(design, y, theta0, alpha, fit=None):
    """Is ``theta0`` inside the level-``alpha`` LR confidence region?"""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    df = design.k + 2
    thr = chi2_quantile(df, alpha)
    fit = fit if fit is not None else mle(design, y)
    if not fit.converged:
        return TestReport(math.inf, thr, False, alpha, df, status="mle-failure", detail=fit)
    stat = lr_statistic(design, y, theta0, fit=fit)
    return TestReport(stat, thr, bool(stat <= thr), alpha, df, detail=fit)
