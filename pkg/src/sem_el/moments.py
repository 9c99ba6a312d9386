"""
Exact moment formulas used for diagnostics and as test oracles.

* :func:`sigma_matrix` - covariance of ``sum_i omega_i`` at the true point.
* :func:`quadratic_variance` - mean and variance of ``eps' A eps + b' eps``
  for independent, possibly heterogeneous innovations.
* :func:`martingale_terms` - the martingale-difference split of the
  centred quadratic form ``eps' Gt eps - sigma2 tr(Gt)``.
"""

from dataclasses import dataclass

import numpy as np

from .sem import ErrorDistribution

__all__ = [
    "DistMoments",
    "SigmaBlocks",
    "dist_moments",
    "inv_sqrt",
    "martingale_terms",
    "quadratic_variance",
    "sigma_matrix",
]


@dataclass(frozen=True)
class DistMoments:
    """Second, third and fourth raw moments of a mean-zero innovation."""

    sigma2: float
    mu3: float
    mu4: float

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        if self.mu4 < self.sigma2**2 * (1 - 1e-12):
            raise ValueError("mu4 < sigma2^2 is impossible")


# (variance, mu3, mu4) of the unscaled innovations. For chi2_d - d the
# central moments are 2d, 8d and 12d^2 + 48d; Student t(5) has
# E t^4 = 3 nu^2 / ((nu - 2)(nu - 4)) = 25.
_RAW = {
    ErrorDistribution.NORMAL: (1.0, 0.0, 3.0),
    ErrorDistribution.T5: (5.0 / 3.0, 0.0, 25.0),
    ErrorDistribution.CHISQ4: (8.0, 32.0, 384.0),
}


def dist_moments(dist, sigma2_target=None):
    """
    Moments of ``dist`` rescaled to variance ``sigma2_target``.

    With ``sigma2_target=None`` the raw (unscaled) moments are returned.

    >>> dist_moments("chisq4", 8.0)
    DistMoments(sigma2=8.0, mu3=32.0, mu4=384.0)
    """
    dist = ErrorDistribution.parse(dist)
    var, mu3, mu4 = _RAW[dist]
    if sigma2_target is None:
        return DistMoments(var, mu3, mu4)
    if not sigma2_target > 0:
        raise ValueError("sigma2_target must be positive")
    c2 = sigma2_target / var
    return DistMoments(sigma2_target, mu3 * c2**1.5, mu4 * c2**2)


@dataclass(frozen=True, eq=False)
class SigmaBlocks:
    """``Cov(sum_i omega_i)`` with its blocks; order is (beta, rho, sigma2)."""

    full: np.ndarray
    s11: np.ndarray
    s12: np.ndarray
    s13: np.ndarray
    s22: float
    s23: float
    s33: float

    def scaled_eigen_range(self, n):
        """Extreme eigenvalues of ``full / n`` (reported, not enforced)."""
        ev = np.linalg.eigvalsh(self.full / n)
        return float(ev[0]), float(ev[-1])


def sigma_matrix(design, a_rho, gtilde, m):
    """
    Assemble the covariance of the summed estimating functions.

    Parameters
    ----------
    design : SemDesign
    a_rho : ndarray
        ``A(rho)`` at the true ``rho``.
    gtilde : ndarray
        Symmetric part of ``W A(rho)^{-1}``.
    m : DistMoments
        Innovation moments (variance, ``mu3``, ``mu4``).

    Returns
    -------
    SigmaBlocks
    """
    a_rho = np.asarray(a_rho, dtype=float)
    gtilde = np.asarray(gtilde, dtype=float)
    n, k = design.n, design.k
    if a_rho.shape != (n, n) or gtilde.shape != (n, n):
        raise ValueError(f"a_rho and gtilde must be {n} x {n}")
    s2, s4 = m.sigma2, m.sigma2**2
    b = design.x.T @ a_rho  # k x n, column i is b_i
    dg = np.diag(gtilde)
    s11 = s2 * (b @ b.T)
    s12 = m.mu3 * (b @ dg)
    s13 = m.mu3 * b.sum(axis=1)
    s22 = 2.0 * s4 * float(np.sum(gtilde * gtilde)) + (m.mu4 - 3.0 * s4) * float(dg @ dg)
    s23 = (m.mu4 - s4) * float(dg.sum())
    s33 = n * (m.mu4 - s4)
    full = np.empty((k + 2, k + 2))
    full[:k, :k] = s11
    full[:k, k] = full[k, :k] = s12
    full[:k, k + 1] = full[k + 1, :k] = s13
    full[k, k] = s22
    full[k, k + 1] = full[k + 1, k] = s23
    full[k + 1, k + 1] = s33
    full = 0.5 * (full + full.T)
    return SigmaBlocks(full, s11, s12, s13, s22, s23, s33)


def inv_sqrt(sigma, floor=1e-12):
    """Symmetric ``sigma^{-1/2}``; eigenvalues are floored at ``floor * max``."""
    sigma = np.asarray(sigma, dtype=float)
    ev, vec = np.linalg.eigh(0.5 * (sigma + sigma.T))
    ev = np.maximum(ev, floor * ev.max())
    return (vec / np.sqrt(ev)) @ vec.T


def quadratic_variance(a, b, m_per_unit):
    """
    Mean and variance of ``Q = sum_ij a_ij e_i e_j + sum_i b_i e_i``.

    Parameters
    ----------
    a : (n, n) array_like
        Symmetric coefficient matrix.
    b : (n,) array_like
    m_per_unit : DistMoments or sequence of DistMoments
        Moments of each independent ``e_i``; a single value is broadcast.

    Returns
    -------
    mean, variance : float
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n) or b.shape != (n,):
        raise ValueError("a must be n x n and b of length n")
    if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max())):
        raise ValueError("a must be symmetric")
    if isinstance(m_per_unit, DistMoments):
        m_per_unit = [m_per_unit] * n
    if len(m_per_unit) != n:
        raise ValueError(f"need {n} moment records, got {len(m_per_unit)}")
    s2 = np.array([m.sigma2 for m in m_per_unit])
    mu3 = np.array([m.mu3 for m in m_per_unit])
    mu4 = np.array([m.mu4 for m in m_per_unit])
    da = np.diag(a)
    mean = float(da @ s2)
    var = (
        2.0 * float(s2 @ (a * a) @ s2)
        + float((b * b) @ s2)
        + float(np.sum(da * da * (mu4 - 3.0 * s2 * s2) + 2.0 * b * da * mu3))
    )
    return mean, var


def martingale_terms(gtilde, eps, sigma2):
    """
    ``Y_i = gt_ii (eps_i^2 - sigma2) + 2 eps_i sum_{j<i} gt_ij eps_j``.

    The terms sum to ``eps' Gt eps - sigma2 tr(Gt)`` for symmetric ``Gt``.
    """
    gtilde = np.asarray(gtilde, dtype=float)
    eps = np.asarray(eps, dtype=float)
    n = eps.shape[0]
    if gtilde.shape != (n, n):
        raise ValueError(f"gtilde must be {n} x {n}")
    return np.diag(gtilde) * (eps * eps - sigma2) + 2.0 * eps * (np.tril(gtilde, -1) @ eps)
