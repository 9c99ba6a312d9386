"""
Linear regression with spatial autoregressive errors::

    y = X beta + u,    u = rho W u + eps,    eps iid, E eps = 0, Var eps = sigma2

so ``eps = A(rho) (y - X beta)`` with ``A(rho) = I - rho W``.

Random draws use numpy's PCG64 bit generator seeded with the integer seed,
so every sample is reproducible from ``(design, theta, dist, seed)``.
"""

import enum
import functools
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .exceptions import NonPositiveDeterminantError, SingularMatrixError
from .weights import WeightMatrix

__all__ = [
    "ErrorDistribution",
    "SemDesign",
    "SemSample",
    "Theta",
    "build_a",
    "error_draw",
    "g_matrices",
    "lu_a",
    "log_det_a",
    "make_rng",
    "residuals",
    "simulate",
    "trend_design",
]

PIVOT_TOL = 1e-12


class ErrorDistribution(enum.Enum):
    """Innovation laws. Raw draws have mean zero but not unit variance."""

    NORMAL = "normal"
    T5 = "t5"
    CHISQ4 = "chisq4"

    @property
    def raw_variance(self):
        return _RAW_VARIANCE[self]

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        aliases = {
            "normal": cls.NORMAL,
            "standardnormal": cls.NORMAL,
            "gaussian": cls.NORMAL,
            "t5": cls.T5,
            "studentt5": cls.T5,
            "t": cls.T5,
            "chisq4": cls.CHISQ4,
            "chi2": cls.CHISQ4,
            "chisq": cls.CHISQ4,
            "centeredchisquared4": cls.CHISQ4,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown error distribution {value!r}") from None


_RAW_VARIANCE = {
    ErrorDistribution.NORMAL: 1.0,
    ErrorDistribution.T5: 5.0 / 3.0,
    ErrorDistribution.CHISQ4: 8.0,
}


@dataclass(frozen=True, eq=False)
class SemDesign:
    """
    Regressors and weights. ``x`` is stored as a read-only ``n x k`` array.
    """

    x: np.ndarray
    w: WeightMatrix

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise ValueError("x must be a vector or an n x k matrix")
        n, k = x.shape
        if n != self.w.n:
            raise ValueError(f"x has {n} rows but W is {self.w.n} x {self.w.n}")
        if k < 1:
            raise ValueError("x needs at least one column")
        if n <= k + 2:
            raise ValueError(f"need n > k + 2, got n={n}, k={k}")
        if not np.all(np.isfinite(x)):
            raise ValueError("x contains non-finite entries")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def k(self):
        return self.x.shape[1]

    @functools.cached_property
    def w_eigenvalues(self):
        """Eigenvalues of W (complex in general); used for fast log-determinants."""
        return scipy.linalg.eigvals(self.w.values)


def trend_design(w):
    """Single regressor ``x_i = i / (n + 1)``, ``i = 1..n``."""
    n = w.n
    return SemDesign(np.arange(1, n + 1, dtype=float)[:, None] / (n + 1), w)


@dataclass(frozen=True, eq=False)
class Theta:
    """Parameter point ``(beta, rho, sigma2)``."""

    beta: np.ndarray
    rho: float
    sigma2: float

    def __post_init__(self):
        beta = np.atleast_1d(np.array(self.beta, dtype=float))
        if beta.ndim != 1:
            raise ValueError("beta must be a vector")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "rho", float(self.rho))
        object.__setattr__(self, "sigma2", float(self.sigma2))
        if not abs(self.rho) < 1:
            raise ValueError(f"need |rho| < 1, got {self.rho}")
        if not self.sigma2 > 0:
            raise ValueError(f"need sigma2 > 0, got {self.sigma2}")

    @property
    def k(self):
        return self.beta.size

    def as_vector(self):
        return np.concatenate([self.beta, [self.rho, self.sigma2]])

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=float)
        return cls(v[:-2], v[-2], v[-1])

    def __eq__(self, other):
        if not isinstance(other, Theta):
            return NotImplemented
        return np.array_equal(self.as_vector(), other.as_vector())

    __hash__ = None

    def __repr__(self):
        beta = ", ".join(f"{b:.6g}" for b in self.beta)
        return f"Theta(beta=[{beta}], rho={self.rho:.6g}, sigma2={self.sigma2:.6g})"


@dataclass(frozen=True, eq=False)
class SemSample:
    """A simulated response. ``eps`` keeps the innovation draw for replay checks."""

    y: np.ndarray
    theta_true: Theta
    seed: int
    dist: ErrorDistribution
    eps: np.ndarray


def _weights_array(w):
    return np.asarray(w.values if isinstance(w, WeightMatrix) else w, dtype=float)


def lu_a(w, rho):
    """
    LU factorisation (partial pivoting) of ``A(rho)`` with a pivot check.

    Returns ``(lu, piv)`` as produced by :func:`scipy.linalg.lu_factor`.

    Raises
    ------
    SingularMatrixError
        If some pivot is below ``1e-12`` times the max-norm of ``A(rho)``.
    """
    a = build_a(w, rho, check=False)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        with np.errstate(all="ignore"):
            lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
    pivots = np.diag(lu)
    scale = np.abs(a).max()
    i = int(np.argmin(np.abs(pivots)))
    if not abs(pivots[i]) > PIVOT_TOL * scale:
        raise SingularMatrixError(float(pivots[i]))
    return lu, piv


def build_a(w, rho, check=True):
    """
    ``A(rho) = I - rho W``.

    With ``check`` (the default) the matrix is LU-factorised and a
    :class:`SingularMatrixError` carrying the offending pivot is raised if
    it is numerically singular.
    """
    v = _weights_array(w)
    a = np.eye(v.shape[0]) - rho * v
    if check:
        lu_a(w, rho)
    return a


def log_det_a(w, rho, lu=None):
    """``log det A(rho)`` from the LU pivots; the determinant must be positive."""
    lu, piv = lu if lu is not None else lu_a(w, rho)
    d = np.diag(lu)
    swaps = np.count_nonzero(piv != np.arange(piv.size))
    sign = (-1) ** swaps * np.prod(np.sign(d))
    if sign <= 0:
        raise NonPositiveDeterminantError(f"det A({rho}) is not positive")
    return float(np.sum(np.log(np.abs(d))))


def g_matrices(w, rho, lu=None):
    """
    ``G = W A(rho)^{-1}`` and its symmetric part ``(G + G') / 2``.

    ``G`` is obtained from the solve ``A' G' = W'``; no inverse is formed.
    """
    v = _weights_array(w)
    lu = lu if lu is not None else lu_a(w, rho)
    g = scipy.linalg.lu_solve(lu, v.T, trans=1, check_finite=False).T
    gt = 0.5 * (g + g.T)
    return g, gt


def residuals(design, y, theta, a=None):
    """``eps = A(rho) (y - X beta)``. ``a`` may carry a precomputed ``A(rho)``."""
    y = np.asarray(y, dtype=float)
    if y.shape != (design.n,):
        raise ValueError(f"y must have shape ({design.n},), got {y.shape}")
    if theta.k != design.k:
        raise ValueError(f"beta has length {theta.k}, design has k={design.k}")
    u = y - design.x @ theta.beta
    if a is None:
        return u - theta.rho * (design.w.values @ u)
    return a @ u


def make_rng(seed):
    """PCG64-backed generator; the stream depends only on ``seed``."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def error_draw(dist, n, rng):
    """
    Raw iid innovations: N(0,1), Student t(5) or chi-square(4) - 4.

    Raw variances are 1, 5/3 and 8; see ``ErrorDistribution.raw_variance``.
    """
    dist = ErrorDistribution.parse(dist)
    if n < 1:
        raise ValueError("n must be >= 1")
    if dist is ErrorDistribution.NORMAL:
        return rng.standard_normal(n)
    if dist is ErrorDistribution.T5:
        return rng.standard_t(5, n)
    return rng.chisquare(4, n) - 4.0


def simulate(design, theta, dist, seed, lu=None):
    """
    Draw one response vector.

    Innovations are rescaled to variance ``theta.sigma2`` before solving
    ``A(rho) u = eps``. ``lu`` may carry a precomputed factorisation from
    :func:`lu_a` to avoid refactoring ``A(rho)`` on every replication.
    """
    dist = ErrorDistribution.parse(dist)
    if theta.k != design.k:
        raise ValueError(f"beta has length {theta.k}, design has k={design.k}")
    rng = make_rng(seed)
    eps = error_draw(dist, design.n, rng) * np.sqrt(theta.sigma2 / dist.raw_variance)
    lu = lu if lu is not None else lu_a(design.w, theta.rho)
    u = scipy.linalg.lu_solve(lu, eps, check_finite=False)
    y = design.x @ theta.beta + u
    y.setflags(write=False)
    eps.setflags(write=False)
    return SemSample(y=y, theta_true=theta, seed=int(seed), dist=dist, eps=eps)
