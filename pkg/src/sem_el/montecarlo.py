"""
Coverage-probability and calibration experiments.

Replication ``r`` (``r = 1..reps``) draws its sample with seed
``base_seed + r``, so any subset of replications can be rerun on its own
and the tallies do not depend on how work is split across processes.
"""

import configparser
import concurrent.futures
import csv
import io
import math
import os
import shlex
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from . import el, gaussian_ml, moments, sem
from ._io import atomic_write_text
from .exceptions import SemElError
from .weights import build_grid_queen, kronecker_pool, load_weights, row_standardize

__all__ = [
    "CalibrationReport",
    "CoverageResult",
    "ExperimentSpec",
    "WeightsSpec",
    "emit_table",
    "load_config",
    "run_calibration",
    "run_coverage",
]

TABLE_COLUMNS = (
    "rho",
    "weights_label",
    "lr_coverage",
    "el_coverage",
    "reps",
    "lr_se",
    "el_se",
    "el_infeasible",
    "mle_failures",
)
METHODS = ("EL", "LR")


@dataclass(frozen=True)
class WeightsSpec:
    """
    Where the weights come from: a ``rows x cols`` queen grid or a file,
    optionally row-standardised and then pooled as ``I_pool (x) W``.
    """

    grid: tuple = None
    path: str = None
    format: str = None
    pool: int = 1
    standardize: bool = True
    label: str = None

    def __post_init__(self):
        if (self.grid is None) == (self.path is None):
            raise ValueError("give exactly one of grid or path")
        if self.grid is not None:
            object.__setattr__(self, "grid", tuple(int(v) for v in self.grid))
        if int(self.pool) < 1:
            raise ValueError("pool must be >= 1")

    def resolve(self):
        if self.grid is not None:
            w = build_grid_queen(*self.grid)
        else:
            w = load_weights(self.path, self.format)
        if self.standardize:
            w = row_standardize(w)
        if self.pool > 1:
            w = kronecker_pool(self.pool, w)
        return w

    @property
    def name(self):
        if self.label:
            return self.label
        if self.grid is not None:
            base = f"grid{self.grid[0] * self.grid[1]}"
        else:
            base = os.path.splitext(os.path.basename(self.path))[0]
        return f"I{self.pool}x{base}" if self.pool > 1 else base


@dataclass(frozen=True)
class ExperimentSpec:
    weights: WeightsSpec
    theta0: sem.Theta
    dist: sem.ErrorDistribution
    reps: int = 2000
    alpha: float = 0.95
    base_seed: int = 0
    methods: tuple = METHODS

    def __post_init__(self):
        object.__setattr__(self, "dist", sem.ErrorDistribution.parse(self.dist))
        methods = tuple(m.upper() for m in self.methods)
        if not methods or any(m not in METHODS for m in methods):
            raise ValueError(f"methods must be a nonempty subset of {METHODS}")
        object.__setattr__(self, "methods", methods)
        if int(self.reps) < 1:
            raise ValueError("reps must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if int(self.base_seed) < 0:
            raise ValueError("base_seed must be nonnegative")


@dataclass(frozen=True)
class CoverageResult:
    """Tallies for one (weights, rho) cell. Coverage is None for methods not run."""

    rho: float
    weights_label: str
    reps: int
    el_covered: int = None
    lr_covered: int = None
    el_infeasible: int = 0
    el_maxiter: int = 0
    mle_failures: int = 0

    @staticmethod
    def _p(count, reps):
        return None if count is None else count / reps

    @staticmethod
    def _se(count, reps):
        if count is None:
            return None
        p = count / reps
        return math.sqrt(p * (1.0 - p) / reps)

    @property
    def el_coverage(self):
        return self._p(self.el_covered, self.reps)

    @property
    def lr_coverage(self):
        return self._p(self.lr_covered, self.reps)

    @property
    def el_se(self):
        return self._se(self.el_covered, self.reps)

    @property
    def lr_se(self):
        return self._se(self.lr_covered, self.reps)


class _Context:
    """Everything that is fixed across replications of one experiment."""

    def __init__(self, spec):
        self.spec = spec
        self.w = spec.weights.resolve()
        self.design = sem.trend_design(self.w)
        th = spec.theta0
        if th.k != self.design.k:
            raise ValueError(f"theta0 has k={th.k}, design has k={self.design.k}")
        self.lu = sem.lu_a(self.w, th.rho)
        self.a = sem.build_a(self.w, th.rho, check=False)
        _, self.gt = sem.g_matrices(self.w, th.rho, lu=self.lu)
        self.df = self.design.k + 2
        self.threshold = el.chi2_quantile(self.df, spec.alpha)

    def replicate(self, r):
        """Return (el_stat, el_status, lr_stat, omega_sum) for replication ``r``."""
        spec, th = self.spec, self.spec.theta0
        sample = sem.simulate(self.design, th, spec.dist, spec.base_seed + r, lu=self.lu)
        el_stat, status, lr_stat = math.nan, "", math.nan
        osum = None
        if "EL" in spec.methods:
            eps = sem.residuals(self.design, sample.y, th, a=self.a)
            om = el.omega(self.design, self.gt, self.a, eps, th.sigma2)
            osum = om.sum(axis=0)
            res = el.el_statistic(om)
            el_stat, status = res.statistic, res.status
        if "LR" in spec.methods:
            fit = gaussian_ml.mle(self.design, sample.y)
            if fit.converged:
                try:
                    lr_stat = gaussian_ml.lr_statistic(self.design, sample.y, th, fit=fit)
                except SemElError:
                    lr_stat = math.nan
        return el_stat, status, lr_stat, osum


def _run_chunk(spec, lo, hi):
    ctx = _Context(spec)
    return [ctx.replicate(r) for r in range(lo, hi)]


def _replications(spec, workers):
    reps = int(spec.reps)
    if workers is None:
        workers = os.cpu_count() or 1
    workers = max(1, min(int(workers), reps))
    if workers == 1:
        return _run_chunk(spec, 1, reps + 1)
    bounds = np.linspace(1, reps + 1, 4 * workers + 1).astype(int)
    chunks = [(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_chunk, spec, lo, hi) for lo, hi in chunks]
        out = []
        for fut in futures:
            out.extend(fut.result())
    return out


def _tally(spec, rows, label, threshold):
    el_cov = lr_cov = None
    infeasible = maxiter = mle_fail = 0
    if "EL" in spec.methods:
        el_cov = sum(1 for s, st, _, _ in rows if st == el.CONVERGED and s <= threshold)
        infeasible = sum(1 for _, st, _, _ in rows if st == el.HULL_INFEASIBLE)
        maxiter = sum(1 for _, st, _, _ in rows if st == el.MAX_ITER)
    if "LR" in spec.methods:
        lr_cov = sum(1 for _, _, s, _ in rows if not math.isnan(s) and s <= threshold)
        mle_fail = sum(1 for _, _, s, _ in rows if math.isnan(s))
    return CoverageResult(
        rho=spec.theta0.rho,
        weights_label=label,
        reps=int(spec.reps),
        el_covered=el_cov,
        lr_covered=lr_cov,
        el_infeasible=infeasible,
        el_maxiter=maxiter,
        mle_failures=mle_fail,
    )


def run_coverage(spec, workers=1):
    """
    Simulate ``spec.reps`` samples at ``spec.theta0`` and count how often
    each method's level-``alpha`` region contains ``theta0``.

    Hull-infeasible or unconverged EL solves and failed MLE fits count as
    not covered. The result does not depend on ``workers``.
    """
    ctx = _Context(spec)
    rows = _replications(spec, workers)
    return _tally(spec, rows, spec.weights.name, ctx.threshold)


@dataclass(frozen=True, eq=False)
class CalibrationReport:
    """
    EL statistics at the true point plus the moment comparison.

    ``statistics`` has ``+inf`` for replications without a converged solve.
    ``sigma_empirical`` is the sample covariance of ``sum_i omega_i``.
    """

    statistics: np.ndarray
    df: int
    probs: np.ndarray
    quantiles: np.ndarray
    ecdf: np.ndarray
    ks_distance: float
    sigma_theory: np.ndarray
    sigma_empirical: np.ndarray
    weights_label: str = ""
    rho: float = math.nan
    extra: dict = field(default_factory=dict, repr=False)

    @property
    def sigma_rel_error(self):
        return float(
            np.linalg.norm(self.sigma_empirical - self.sigma_theory)
            / np.linalg.norm(self.sigma_theory)
        )

    def qq_pairs(self):
        s = np.sort(self.statistics)
        m = s.size
        theo = np.array([el.chi2_quantile(self.df, (i - 0.5) / m) for i in range(1, m + 1)])
        return theo, s

    def summary_csv(self):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["prob", "chi2_quantile", "empirical_cdf"])
        for p, q, e in zip(self.probs, self.quantiles, self.ecdf):
            wr.writerow([_fmt(p), _fmt(q), _fmt(e)])
        wr.writerow(["ks_distance", _fmt(self.ks_distance), ""])
        return buf.getvalue()

    def sigma_csv(self):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["row", "col", "theoretical", "empirical"])
        m = self.sigma_theory.shape[0]
        for i in range(m):
            for j in range(m):
                wr.writerow([i, j, _fmt(self.sigma_theory[i, j]), _fmt(self.sigma_empirical[i, j])])
        wr.writerow(["rel_frobenius_error", "", _fmt(self.sigma_rel_error), ""])
        return buf.getvalue()

    def qq_csv(self):
        theo, s = self.qq_pairs()
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["chi2_quantile", "el_statistic"])
        for t, v in zip(theo, s):
            wr.writerow([_fmt(t), _fmt(v)])
        return buf.getvalue()


DEFAULT_PROBS = (0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99)


def run_calibration(spec, probs=DEFAULT_PROBS, workers=1):
    """
    Collect the EL statistic at ``theta0`` over all replications and
    compare it with chi-square(k + 2): empirical CDF at the quantiles for
    ``probs``, Kolmogorov-Smirnov distance and QQ pairs. Also compares
    the sample covariance of ``sum_i omega_i`` with :func:`moments.sigma_matrix`.
    """
    if "EL" not in spec.methods:
        raise ValueError("calibration needs the EL method")
    spec = replace(spec, methods=("EL",))
    ctx = _Context(spec)
    rows = _replications(spec, workers)
    stat = np.array([s if st == el.CONVERGED else math.inf for s, st, _, _ in rows])
    sums = np.array([o for _, _, _, o in rows])
    probs = np.asarray(probs, dtype=float)
    quant = np.array([el.chi2_quantile(ctx.df, p) for p in probs])
    ecdf = np.array([np.count_nonzero(stat <= q) / stat.size for q in quant])
    ks = stats.kstest(stat, "chi2", args=(ctx.df,)).statistic
    th = spec.theta0
    m = moments.dist_moments(spec.dist, th.sigma2)
    theory = moments.sigma_matrix(ctx.design, ctx.a, ctx.gt, m).full
    emp = np.cov(sums, rowvar=False) if sums.shape[0] > 1 else np.full_like(theory, np.nan)
    return CalibrationReport(
        statistics=stat,
        df=ctx.df,
        probs=probs,
        quantiles=quant,
        ecdf=ecdf,
        ks_distance=float(ks),
        sigma_theory=theory,
        sigma_empirical=np.atleast_2d(emp),
        weights_label=spec.weights.name,
        rho=th.rho,
    )


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".10g")


def _row(label, res):
    return [
        _fmt(res.rho),
        label,
        _fmt(res.lr_coverage),
        _fmt(res.el_coverage),
        _fmt(res.reps),
        _fmt(res.lr_se),
        _fmt(res.el_se),
        _fmt(res.el_infeasible),
        _fmt(res.mle_failures),
    ]


def emit_table(results, format="csv", path=None, header=()):
    """
    Render coverage results as a table, one row per (rho, weights) cell.

    Parameters
    ----------
    results : sequence of (label, CoverageResult)
    format : {"csv", "markdown"}
    path : str, optional
        Written atomically when given.
    header : sequence of str
        Comment lines placed above the table (``#`` in CSV, HTML comments
        in markdown).

    Returns
    -------
    str
        The rendered table.
    """
    results = list(results)
    if not results:
        raise ValueError("no results to emit")
    rows = [_row(label, res) for label, res in results]
    if format == "csv":
        buf = io.StringIO()
        for line in header:
            buf.write(f"# {line}\n")
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(TABLE_COLUMNS)
        wr.writerows(rows)
        text = buf.getvalue()
    elif format == "markdown":
        lines = [f"<!-- {line} -->" for line in header]
        lines.append("| " + " | ".join(TABLE_COLUMNS) + " |")
        lines.append("|" + "|".join("---" for _ in TABLE_COLUMNS) + "|")
        lines.extend("| " + " | ".join(r) + " |" for r in rows)
        text = "\n".join(lines) + "\n"
    else:
        raise ValueError(f"unknown table format {format!r}")
    if path is not None:
        atomic_write_text(path, text)
    return text


def read_table(text):
    """Parse :func:`emit_table` output (either format) back into string rows."""
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith(("#", "<!--"))]
    if lines and lines[0].startswith("|"):
        rows = [[c.strip() for c in ln.strip().strip("|").split("|")] for ln in lines]
        rows = [r for r in rows if not all(set(c) <= {"-"} for c in r)]
    else:
        rows = list(csv.reader(lines))
    return [dict(zip(rows[0], r)) for r in rows[1:]]


# --- experiment config files -------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    specs: tuple
    output: str = None
    format: str = "csv"
    workers: int = None


def _parse_weights_item(item, standardize, pool, base_dir):
    toks = shlex.split(item)
    grid = path = None
    fmt = None
    i = 0
    while i < len(toks):
        t = toks[i].lower()
        if t == "grid":
            grid = (int(toks[i + 1]), int(toks[i + 2]))
            i += 3
        elif t == "file":
            path = toks[i + 1]
            if base_dir and not os.path.isabs(path):
                path = os.path.join(base_dir, path)
            i += 2
        elif t == "pool":
            pool = int(toks[i + 1])
            i += 2
        elif t == "format":
            fmt = toks[i + 1]
            i += 2
        elif t == "raw":
            standardize = False
            i += 1
        else:
            raise ValueError(f"cannot parse weights entry {item!r}")
    return WeightsSpec(grid=grid, path=path, format=fmt, pool=pool, standardize=standardize)


def _floats(text):
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def load_config(path, overrides=None):
    """
    Read an experiment file (INI syntax, section ``[experiment]``).

    Keys::

        weights     = grid 7 7; grid 10 10; file w49.csv pool 5
        standardize = true          # default true
        beta        = 3.5           # comma list when k > 1
        rho         = -0.85, 0.15   # one table row per (weights, rho)
        sigma2      = 1             # default: raw variance of dist
        theta0      = 3.5, 0.15, 1  # alternative to beta/rho/sigma2 (one rho)
        dist        = normal        # normal | t5 | chisq4
        reps        = 2000
        alpha       = 0.95
        seed        = 1
        methods     = EL, LR
        output      = table.csv
        format      = csv           # csv | markdown
        workers     = 4

    ``overrides`` (a dict with the same keys) takes precedence over the file.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    with open(path) as fh:
        cp.read_file(fh)
    if "experiment" not in cp:
        raise ValueError(f"{path}: missing [experiment] section")
    sec = dict(cp["experiment"])
    for k, v in (overrides or {}).items():
        if v is not None:
            sec[k] = str(v)
    base_dir = os.path.dirname(os.path.abspath(path))
    std = sec.get("standardize", "true").strip().lower() in ("1", "true", "yes", "on")
    pool = int(sec.get("pool", 1))
    wspecs = [
        _parse_weights_item(item, std, pool, base_dir)
        for item in sec["weights"].split(";")
        if item.strip()
    ]
    dist = sem.ErrorDistribution.parse(sec.get("dist", "normal"))
    beta = _floats(sec.get("beta", "3.5"))
    sigma2 = float(sec["sigma2"]) if sec.get("sigma2") else dist.raw_variance
    rhos = _floats(sec.get("rho", "0.15"))
    if sec.get("theta0"):
        th = _floats(sec["theta0"])
        if len(th) < 3:
            raise ValueError("theta0 needs beta..., rho, sigma2")
        beta, rhos, sigma2 = th[:-2], [th[-2]], th[-1]
    methods = tuple(m.strip().upper() for m in sec.get("methods", "EL,LR").split(",") if m.strip())
    specs = tuple(
        ExperimentSpec(
            weights=ws,
            theta0=sem.Theta(beta, rho, sigma2),
            dist=dist,
            reps=int(sec.get("reps", 2000)),
            alpha=float(sec.get("alpha", 0.95)),
            base_seed=int(sec.get("seed", 0)),
            methods=methods,
        )
        for ws in wspecs
        for rho in rhos
    )
    workers = sec.get("workers")
    return ExperimentConfig(
        specs=specs,
        output=sec.get("output") or None,
        format=sec.get("format", "csv"),
        workers=int(workers) if workers else None,
    )
