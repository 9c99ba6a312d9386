"""
Command-line entry point: ``sem-el <subcommand> ...``.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure (a
line ``error=<kind>`` is written to stderr).
"""

import argparse
import csv
import datetime
import io
import shlex
import sys

import numpy as np

from . import __version__, el, gaussian_ml, montecarlo, sem
from ._io import atomic_write_text
from .exceptions import SemElError, WeightsFormatError
from .weights import (
    FORMATS,
    build_grid_queen,
    dumps_weights,
    kronecker_pool,
    load_weights,
    row_standardize,
    validate_weights,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _strip_threads(argv):
    # worker count never changes results, so keep it out of the provenance line
    out, skip = [], False
    for a in argv:
        if skip:
            skip = False
        elif a == "--threads":
            skip = True
        elif not a.startswith("--threads="):
            out.append(a)
    return out


def _provenance(argv):
    return [
        f"sem-el {__version__}",
        "invocation: sem-el " + " ".join(shlex.quote(a) for a in _strip_threads(argv)),
        "timestamp: " + datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
    ]


def _comment_block(argv):
    return "".join(f"# {line}\n" for line in _provenance(argv))


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"cannot parse number list {text!r}") from None


def _add_weights_args(p, required=True):
    src = p.add_mutually_exclusive_group(required=required)
    src.add_argument("--grid", nargs=2, type=int, metavar=("R", "C"), help="queen grid")
    src.add_argument("--weights", metavar="FILE", help="weights file (dense or triplet CSV)")
    p.add_argument("--standardize", action="store_true", help="row-standardise W")
    p.add_argument("--pool", type=int, default=1, metavar="B", help="use I_B (x) W")


def _weights_from(args, path_attr="weights"):
    path = getattr(args, path_attr, None)
    if args.grid is not None:
        w = build_grid_queen(*args.grid)
    else:
        w = load_weights(path)
    if args.standardize:
        w = row_standardize(w)
    if args.pool != 1:
        w = kronecker_pool(args.pool, w)
    return w


def _read_sample(path):
    with open(path) as fh:
        rows = [r for r in csv.reader(ln for ln in fh if ln.strip() and not ln.startswith("#"))]
    if not rows or rows[0][0] != "i" or rows[0][-1] != "y":
        raise UsageError(f"{path}: expected header 'i,x1,...,xk,y'")
    data = np.array(rows[1:], dtype=float)
    return data[:, 1:-1], data[:, -1]


def _theta_from(text, k=None):
    v = _floats(text)
    if len(v) < 3:
        raise UsageError("theta needs beta..., rho, sigma2")
    if k is not None and len(v) != k + 2:
        raise UsageError(f"theta needs {k} beta values plus rho and sigma2")
    return sem.Theta(v[:-2], v[-2], v[-1])


def _emit(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        atomic_write_text(path, text)


def _kv(pairs):
    return "".join(f"{k}={v}\n" for k, v in pairs)


def cmd_weights(args, argv):
    if args.grid is None and args.in_path is None:
        raise UsageError("weights: give --grid R C or --in FILE")
    w = _weights_from(args, "in_path")
    rep = validate_weights(w)
    if args.out:
        atomic_write_text(args.out, _comment_block(argv) + dumps_weights(w, args.format))
    sys.stdout.write(_kv([*rep.as_dict().items(), ("standardized", w.standardized)]))


def cmd_simulate(args, argv):
    w = _weights_from(args)
    dist = sem.ErrorDistribution.parse(args.dist)
    beta = _floats(args.beta)
    if args.x:
        x = np.loadtxt(args.x, delimiter=",", ndmin=2, comments="#")
    elif len(beta) == 1:
        x = sem.trend_design(w).x
    else:
        raise UsageError("simulate: --x FILE is required when beta has more than one entry")
    design = sem.SemDesign(x, w)
    sigma2 = args.sigma2 if args.sigma2 is not None else dist.raw_variance
    theta = sem.Theta(beta, args.rho, sigma2)
    sample = sem.simulate(design, theta, dist, args.seed)
    buf = io.StringIO()
    buf.write(_comment_block(argv))
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["i", *(f"x{j + 1}" for j in range(design.k)), "y"])
    for i in range(design.n):
        wr.writerow([i + 1, *(repr(float(v)) for v in design.x[i]), repr(float(sample.y[i]))])
    _emit(args.out, buf.getvalue())


def cmd_test(args, argv):
    x, y = _read_sample(args.sample)
    design = sem.SemDesign(x, _weights_from(args))
    theta0 = _theta_from(args.theta0, design.k)
    if args.method == "lr":
        rep = gaussian_ml.lr_test(design, y, theta0, args.alpha)
        pairs = [("method", "LR")]
        extra = []
    else:
        rep = el.el_test(design, y, theta0, args.alpha)
        sol = rep.detail.solution
        pairs = [("method", "EL")]
        extra = [
            ("lambda", ",".join(repr(float(v)) for v in sol.lam)),
            ("iterations", sol.iterations),
            ("gradient_norm", repr(sol.gradient_norm)),
        ]
    pairs += [
        ("statistic", repr(float(rep.statistic))),
        ("threshold", repr(rep.threshold)),
        ("df", rep.df),
        ("alpha", rep.alpha),
        ("covered", str(rep.covered).lower()),
        ("status", rep.status),
        *extra,
    ]
    sys.stdout.write(_kv(pairs))
    if args.row:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow([k for k, _ in pairs])
        wr.writerow([v for _, v in pairs])
        _emit(args.row, buf.getvalue())


def cmd_mle(args, argv):
    x, y = _read_sample(args.sample)
    design = sem.SemDesign(x, _weights_from(args))
    fit = gaussian_ml.mle(design, y)
    if args.profile_out:
        buf = io.StringIO()
        buf.write(_comment_block(argv))
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["rho", "concentrated_loglik"])
        for r, v in fit.rho_profile:
            wr.writerow([repr(r), repr(v)])
        atomic_write_text(args.profile_out, buf.getvalue())
    if not fit.converged:
        raise _NumericalFailure("non-convergence", fit.message)
    th = fit.theta_hat
    sys.stdout.write(
        _kv(
            [
                ("beta", ",".join(repr(float(b)) for b in th.beta)),
                ("rho", repr(th.rho)),
                ("sigma2", repr(th.sigma2)),
                ("loglik", repr(fit.loglik)),
                ("converged", "true"),
            ]
        )
    )


def cmd_coverage(args, argv):
    overrides = {"reps": args.reps, "seed": args.seed, "alpha": args.alpha}
    cfg = montecarlo.load_config(args.config, overrides)
    out = args.out or cfg.output
    fmt = args.format or cfg.format
    workers = args.threads if args.threads is not None else cfg.workers
    results = []
    for spec in cfg.specs:
        res = montecarlo.run_coverage(spec, workers=workers)
        results.append((spec.weights.name, res))
        print(
            f"{spec.weights.name} rho={spec.theta0.rho:g}: "
            f"LR={montecarlo._fmt(res.lr_coverage)} EL={montecarlo._fmt(res.el_coverage)}",
            file=sys.stderr,
        )
    text = montecarlo.emit_table(results, fmt, header=_provenance(argv))
    _emit(out, text)


def cmd_calibrate(args, argv):
    ws = montecarlo.WeightsSpec(
        grid=tuple(args.grid) if args.grid else None,
        path=args.weights,
        pool=args.pool,
        standardize=args.standardize,
    )
    dist = sem.ErrorDistribution.parse(args.dist)
    v = _floats(args.theta)
    if len(v) == 2:
        v.append(dist.raw_variance)
    theta = _theta_from(",".join(map(repr, v)))
    spec = montecarlo.ExperimentSpec(ws, theta, dist, reps=args.reps, base_seed=args.seed, methods=("EL",))
    rep = montecarlo.run_calibration(spec, workers=args.threads)
    head = _comment_block(argv)
    _emit(args.out, head + rep.summary_csv())
    if args.sigma_out:
        atomic_write_text(args.sigma_out, head + rep.sigma_csv())
    if args.qq_out:
        atomic_write_text(args.qq_out, head + rep.qq_csv())
    print(f"ks_distance={rep.ks_distance!r}", file=sys.stderr)
    print(f"sigma_rel_frobenius_error={rep.sigma_rel_error!r}", file=sys.stderr)


class _NumericalFailure(SemElError):
    def __init__(self, kind, message):
        self.kind = kind
        super().__init__(message)


def build_parser():
    p = _Parser(prog="sem-el", description=__doc__.strip().splitlines()[0])
    p.add_argument("--version", action="version", version=f"sem-el {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("weights", help="build, standardise, pool, validate or convert W")
    src = s.add_mutually_exclusive_group()
    src.add_argument("--grid", nargs=2, type=int, metavar=("R", "C"))
    src.add_argument("--in", dest="in_path", metavar="FILE")
    s.add_argument("--standardize", action="store_true")
    s.add_argument("--pool", type=int, default=1, metavar="B")
    s.add_argument("--out", metavar="FILE")
    s.add_argument("--format", choices=FORMATS, default="dense-csv")
    s.set_defaults(func=cmd_weights)

    s = sub.add_parser("simulate", help="draw one sample from the model")
    _add_weights_args(s)
    s.add_argument("--x", metavar="FILE", help="regressor CSV (default x_i = i/(n+1))")
    s.add_argument("--beta", required=True, help="comma-separated coefficients")
    s.add_argument("--rho", type=float, required=True)
    s.add_argument("--sigma2", type=float, help="innovation variance (default: raw variance)")
    s.add_argument("--dist", choices=["normal", "t5", "chisq4"], default="normal")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", metavar="FILE")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("test", help="EL (or LR) test of theta0 on a sample")
    s.add_argument("--sample", required=True, metavar="FILE")
    _add_weights_args(s)
    s.add_argument("--theta0", required=True, metavar="BETA,...,RHO,SIGMA2")
    s.add_argument("--alpha", type=float, default=0.95)
    s.add_argument("--method", choices=["el", "lr"], default="el")
    s.add_argument("--row", metavar="FILE", help="also write a one-row CSV ('-' for stdout)")
    s.set_defaults(func=cmd_test)

    s = sub.add_parser("mle", help="Gaussian maximum likelihood fit")
    s.add_argument("--sample", required=True, metavar="FILE")
    _add_weights_args(s)
    s.add_argument("--profile-out", metavar="FILE")
    s.set_defaults(func=cmd_mle)

    s = sub.add_parser("coverage", help="coverage-probability experiment from a config file")
    s.add_argument("--config", required=True, metavar="FILE")
    s.add_argument("--out", metavar="FILE")
    s.add_argument("--format", choices=["csv", "markdown"])
    s.add_argument("--threads", type=int, metavar="N")
    s.add_argument("--reps", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--alpha", type=float)
    s.set_defaults(func=cmd_coverage)

    s = sub.add_parser("calibrate", help="chi-square calibration of the EL statistic")
    _add_weights_args(s)
    s.add_argument("--theta", required=True, metavar="BETA,...,RHO[,SIGMA2]")
    s.add_argument("--dist", choices=["normal", "t5", "chisq4"], default="normal")
    s.add_argument("--reps", type=int, default=2000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threads", type=int, metavar="N")
    s.add_argument("--out", metavar="FILE", help="ECDF/KS summary CSV (default stdout)")
    s.add_argument("--sigma-out", metavar="FILE")
    s.add_argument("--qq-out", metavar="FILE")
    s.set_defaults(func=cmd_calibrate)
    return p


def dispatch(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args, argv)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (WeightsFormatError, ValueError, OSError) as exc:
        print(f"sem-el: error: {exc}", file=sys.stderr)
        return 1
    except SemElError as exc:
        print(f"error={exc.kind}", file=sys.stderr)
        print(f"sem-el: {exc}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(dispatch())
