"""
Spatial weight matrices.

Dense ``n x n`` storage throughout. Grid cells are numbered in row-major
order: cell ``(r, c)`` of an ``R x C`` grid is unit ``r * C + c``.

Triplet files use 1-based indices and start with an ``n=<int>`` header::

    n=3
    1,2,1
    2,1,1
"""

import csv
import io
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._io import atomic_write_text
from .exceptions import WeightsFormatError

__all__ = [
    "WeightMatrix",
    "WeightsReport",
    "build_grid_queen",
    "row_standardize",
    "kronecker_pool",
    "load_weights",
    "save_weights",
    "validate_weights",
]

FORMATS = ("dense-csv", "triplet-csv")


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """
    Spatial weights with provenance flags.

    Parameters
    ----------
    values : array_like
        ``n x n`` nonnegative matrix with zero diagonal.
    standardized : bool
        True once rows have been rescaled to sum to one.
    zero_rows : tuple of int
        Rows (0-based) that are entirely zero. Filled in automatically.
    """

    values: np.ndarray
    standardized: bool = False
    zero_rows: tuple = field(default=(), compare=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError(f"weights must be square, got shape {v.shape}")
        if v.shape[0] < 1:
            raise ValueError("weights must have at least one unit")
        if not np.all(np.isfinite(v)):
            raise ValueError("weights contain non-finite entries")
        if np.any(v < 0):
            raise ValueError("weights contain negative values")
        if np.any(np.diag(v) != 0):
            raise ValueError("weights must have a zero diagonal")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        zero = tuple(int(i) for i in np.flatnonzero(~v.any(axis=1)))
        object.__setattr__(self, "zero_rows", zero)

    @property
    def n(self):
        return self.values.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __eq__(self, other):
        if not isinstance(other, WeightMatrix):
            return NotImplemented
        return self.standardized == other.standardized and np.array_equal(
            self.values, other.values
        )

    __hash__ = None


@dataclass(frozen=True)
class WeightsReport:
    n: int
    max_row_sum: float
    max_col_sum: float
    zero_rows: int
    symmetric: bool

    def as_dict(self):
        return {
            "n": self.n,
            "max_row_sum": self.max_row_sum,
            "max_col_sum": self.max_col_sum,
            "zero_rows": self.zero_rows,
            "symmetric": self.symmetric,
        }


def build_grid_queen(rows, cols):
    """
    Binary queen-contiguity weights on a ``rows x cols`` regular grid.

    Two cells are neighbours when they share an edge or a corner.

    Examples
    --------
    >>> build_grid_queen(1, 2).values
    array([[0., 1.],
           [1., 0.]])
    """
    rows, cols = int(rows), int(cols)
    if rows < 1 or cols < 1:
        raise ValueError(f"grid dimensions must be positive, got {rows}x{cols}")
    if rows * cols < 2:
        raise ValueError("a grid needs at least two cells")
    n = rows * cols
    w = np.zeros((n, n))
    r, c = np.divmod(np.arange(n), cols)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            rr, cc = r + dr, c + dc
            ok = (rr >= 0) & (rr < rows) & (cc >= 0) & (cc < cols)
            w[np.flatnonzero(ok), rr[ok] * cols + cc[ok]] = 1.0
    return WeightMatrix(w)


def row_standardize(w):
    """
    Divide every row by its row sum.

    Zero rows are left as they are; their indices end up in the result's
    ``zero_rows`` and a ``UserWarning`` is issued.
    """
    v = np.asarray(w.values, dtype=float)
    sums = v.sum(axis=1)
    nonzero = sums != 0
    out = v.copy()
    out[nonzero] /= sums[nonzero, None]
    result = WeightMatrix(out, standardized=True)
    if result.zero_rows:
        rows = ", ".join(str(i + 1) for i in result.zero_rows)
        warnings.warn(f"zero rows left unstandardized: {rows}", UserWarning, stacklevel=2)
    return result


def kronecker_pool(blocks, w):
    """Block-diagonal ``I_blocks (x) W``; keeps the ``standardized`` flag."""
    blocks = int(blocks)
    if blocks < 1:
        raise ValueError("blocks must be >= 1")
    return WeightMatrix(np.kron(np.eye(blocks), w.values), standardized=w.standardized)


def validate_weights(w):
    """Summaries related to the bounded row/column sum condition. Never mutates ``w``."""
    v = np.asarray(w.values if isinstance(w, WeightMatrix) else w, dtype=float)
    a = np.abs(v)
    return WeightsReport(
        n=v.shape[0],
        max_row_sum=float(a.sum(axis=1).max()),
        max_col_sum=float(a.sum(axis=0).max()),
        zero_rows=int(np.count_nonzero(~v.any(axis=1))),
        symmetric=bool(np.array_equal(v, v.T)),
    )


def _detect_format(text):
    for line in text.splitlines():
        s = line.strip()
        if s and not s.startswith("#"):
            return "triplet-csv" if s.lower().startswith("n=") else "dense-csv"
    raise WeightsFormatError("empty weights file")


def _parse_float(token, lineno):
    try:
        return float(token)
    except ValueError:
        raise WeightsFormatError(f"cannot parse {token!r} as a number", lineno) from None


def _parse_dense(text):
    rows = []
    linenos = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        rows.append([_parse_float(t.strip(), lineno) for t in s.split(",")])
        linenos.append(lineno)
    n = len(rows)
    for row, lineno in zip(rows, linenos):
        if len(row) != n:
            raise WeightsFormatError(
                f"dense matrix is not square: {len(row)} columns, {n} rows", lineno
            )
    return np.array(rows, dtype=float)


def _parse_triplet(text):
    w = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if w is None:
            if not s.lower().startswith("n="):
                raise WeightsFormatError("expected header 'n=<int>'", lineno)
            try:
                n = int(s[2:].strip())
            except ValueError:
                raise WeightsFormatError(f"bad header {s!r}", lineno) from None
            if n < 1:
                raise WeightsFormatError("n must be positive", lineno)
            w = np.zeros((n, n))
            continue
        parts = [t.strip() for t in s.split(",")]
        if len(parts) != 3:
            raise WeightsFormatError(f"expected 'i,j,value', got {s!r}", lineno)
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            raise WeightsFormatError(f"bad index in {s!r}", lineno) from None
        value = _parse_float(parts[2], lineno)
        if not (1 <= i <= n and 1 <= j <= n):
            raise WeightsFormatError(f"index ({i},{j}) out of range 1..{n}", lineno)
        w[i - 1, j - 1] = value
    if w is None:
        raise WeightsFormatError("missing header 'n=<int>'")
    return w


def load_weights(path, format=None):
    """
    Read a weights file.

    Parameters
    ----------
    path : str or path-like
    format : {"dense-csv", "triplet-csv"}, optional
        Detected from the first non-comment line when omitted (a leading
        ``n=`` means triplet).

    Returns
    -------
    WeightMatrix
        Never standardized. A nonzero diagonal is zeroed with a warning.

    Raises
    ------
    WeightsFormatError
        On parse errors, non-square dense input or out-of-range indices.
    """
    with open(path) as fh:
        text = fh.read()
    fmt = format or _detect_format(text)
    if fmt == "dense-csv":
        v = _parse_dense(text)
    elif fmt == "triplet-csv":
        v = _parse_triplet(text)
    else:
        raise ValueError(f"unknown weights format {fmt!r}; expected one of {FORMATS}")
    if v.size == 0:
        raise WeightsFormatError("no matrix entries found")
    if np.any(v < 0):
        i, j = np.argwhere(v < 0)[0]
        raise WeightsFormatError(f"negative weight at ({i + 1},{j + 1})")
    diag = np.flatnonzero(np.diag(v))
    if diag.size:
        warnings.warn(
            f"{os.fspath(path)}: nonzero diagonal at units "
            f"{', '.join(str(i + 1) for i in diag)} set to 0",
            UserWarning,
            stacklevel=2,
        )
        np.fill_diagonal(v, 0.0)
    return WeightMatrix(v)


def dumps_weights(w, format="dense-csv"):
    v = np.asarray(w.values, dtype=float)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if format == "dense-csv":
        for row in v:
            writer.writerow([repr(float(x)) for x in row])
    elif format == "triplet-csv":
        buf.write(f"n={v.shape[0]}\n")
        for i, j in np.argwhere(v != 0):
            writer.writerow([i + 1, j + 1, repr(float(v[i, j]))])
    else:
        raise ValueError(f"unknown weights format {format!r}; expected one of {FORMATS}")
    return buf.getvalue()


def save_weights(w, path, format="dense-csv"):
    """Write ``w``; floats are written with ``repr`` so a reload is bit-exact."""
    atomic_write_text(path, dumps_weights(w, format))
