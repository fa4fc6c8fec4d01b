"""CSV and JSON input/output.

One dialect everywhere: comma separator, mandatory header row, UTF-8, '.'
decimal point, LF line endings, no locale dependence.  Missing values are
written as empty fields and read back as NaN.  Floats are written with
`repr`, the shortest representation that round-trips the exact double, so
identical results serialize to identical bytes.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .estimator import CateCurve
from .nuisance import Dataset, NuisanceFit

__all__ = [
    "ParseError",
    "SchemaError",
    "read_dataset",
    "write_dataset",
    "write_nuisance",
    "write_curve",
    "read_curve",
    "write_replications",
    "write_summary",
    "read_summary",
    "write_vd_grid",
    "write_variance_bias",
    "write_manifest",
    "read_manifest",
    "read_table",
]

SUMMARY_COLUMNS = ("x1", "bias", "sam-SD", "MSE", "P0.05", "P0.95")
CURVE_COLUMNS = ("x1", "tau_hat", "f_hat", "v_hat", "ci_lo", "ci_hi", "n_eff")


class ParseError(ValueError):
    """Malformed file content; carries row/column position when known."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        loc = ""
        if row is not None:
            loc = f" (row {row}"
            loc += f", column {column})" if column is not None else ")"
        super().__init__(message + loc)
        self.row = row
        self.column = column


class SchemaError(ValueError):
    """Well-formed file whose content violates the expected schema."""


def _fmt(value) -> str:
    if value is None:
        return ""
    value = float(value)
    if np.isnan(value):
        return ""
    return repr(value)


def _parse_float(token: str, row: int, column: str) -> float:
    token = token.strip()
    if token == "":
        return float("nan")
    try:
        return float(token)
    except ValueError:
        raise ParseError(f"expected a number, got {token!r}", row, column) from None


def _open_rows(path) -> list[list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty file, expected a header row")
    return rows


def read_table(path) -> dict[str, np.ndarray]:
    """Generic reader: header row plus numeric columns, empties as NaN."""
    rows = _open_rows(path)
    header = [c.strip() for c in rows[0]]
    if len(set(header)) != len(header) or any(not h for h in header):
        raise ParseError(f"{path}: header must list distinct nonempty names")
    width = len(header)
    columns = {name: [] for name in header}
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise ParseError(f"{path}: expected {width} fields, got {len(row)}", row=i)
        for name, token in zip(header, row):
            columns[name].append(_parse_float(token, i, name))
    return {name: np.asarray(vals, dtype=float) for name, vals in columns.items()}


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def read_dataset(path, x1_columns: tuple[str, ...] = ("x1",)) -> Dataset:
    """Read a dataset CSV: covariate columns, then `y` and `d`.

    Covariates are every column other than `y`/`d`, in file order; the
    conditioning subvector is selected by name via `x1_columns`.  A `d`
    entry outside {0, 1} is a schema violation, reported with its row.
    """
    rows = _open_rows(path)
    header = [c.strip() for c in rows[0]]
    if len(set(header)) != len(header):
        raise ParseError(f"{path}: duplicate column names in header")
    for required in ("y", "d"):
        if required not in header:
            raise SchemaError(f"{path}: missing required column {required!r}")
    cov_names = [c for c in header if c not in ("y", "d")]
    if not cov_names:
        raise SchemaError(f"{path}: no covariate columns")
    missing = [c for c in x1_columns if c not in cov_names]
    if missing:
        raise SchemaError(f"{path}: conditioning columns {missing} not among covariates {cov_names}")
    if len(rows) == 1:
        raise ParseError(f"{path}: no data rows")

    width = len(header)
    y_pos = header.index("y")
    d_pos = header.index("d")
    cov_pos = [header.index(c) for c in cov_names]
    X = np.empty((len(rows) - 1, len(cov_names)))
    Y = np.empty(len(rows) - 1)
    D = np.empty(len(rows) - 1, dtype=np.int8)
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise ParseError(f"{path}: expected {width} fields, got {len(row)}", row=i)
        for j, pos in enumerate(cov_pos):
            X[i - 2, j] = _parse_float(row[pos], i, cov_names[j])
        Y[i - 2] = _parse_float(row[y_pos], i, "y")
        d_val = _parse_float(row[d_pos], i, "d")
        if d_val not in (0.0, 1.0):
            raise SchemaError(f"{path}: treatment column 'd' must be 0 or 1, got {row[d_pos]!r} (row {i})")
        D[i - 2] = int(d_val)
    if np.isnan(X).any() or np.isnan(Y).any():
        raise SchemaError(f"{path}: dataset cells must not be empty")
    x1_indices = tuple(cov_names.index(c) for c in x1_columns)
    return Dataset(X=X, x1_indices=x1_indices, Y=Y, D=D)


def write_dataset(path, data: Dataset) -> None:
    header = [f"x{j + 1}" for j in range(data.d)] + ["y", "d"]
    rows = (
        [_fmt(v) for v in data.X[i]] + [_fmt(data.Y[i]), str(int(data.D[i]))]
        for i in range(data.n)
    )
    _write_rows(path, header, rows)


def write_nuisance(path, fit: NuisanceFit) -> None:
    """Fitted values per observation, 1-based index."""
    rows = (
        [str(i + 1), _fmt(fit.p_hat[i]), _fmt(fit.m1_hat[i]), _fmt(fit.m0_hat[i])]
        for i in range(len(fit.p_hat))
    )
    _write_rows(path, ("i", "p_hat", "m1_hat", "m0_hat"), rows)


def write_curve(path, curve: CateCurve, z: float = 1.96) -> None:
    """Effect-curve export with normal confidence bounds.

    Grid points where estimation was impossible keep their x1 and a zero
    n_eff but leave every estimate field empty.
    """
    lo, hi = curve.confidence_bounds(z)
    rows = []
    for g in range(curve.grid.shape[0]):
        x1 = curve.grid[g]
        x1_txt = _fmt(x1[0]) if x1.size == 1 else " ".join(_fmt(v) for v in x1)
        rows.append(
            [
                x1_txt,
                _fmt(curve.tau_hat[g]),
                _fmt(curve.f_hat[g]),
                _fmt(curve.v_hat[g]),
                _fmt(lo[g]),
                _fmt(hi[g]),
                str(int(curve.n_eff[g])),
            ]
        )
    _write_rows(path, CURVE_COLUMNS, rows)


def read_curve(path) -> dict[str, np.ndarray]:
    table = read_table(path)
    missing = [c for c in CURVE_COLUMNS if c not in table]
    if missing:
        raise SchemaError(f"{path}: curve file missing columns {missing}")
    return table


def write_replications(path, x1_grid, tau_hat: np.ndarray, t_stat: np.ndarray) -> None:
    """Long-format per-replication records (r, x1, tau_hat, T), r 1-based."""
    grid = np.asarray(x1_grid, dtype=float)
    R, G = tau_hat.shape
    rows = (
        [str(r + 1), _fmt(grid[g]), _fmt(tau_hat[r, g]), _fmt(t_stat[r, g])]
        for r in range(R)
        for g in range(G)
    )
    _write_rows(path, ("r", "x1", "tau_hat", "T"), rows)


def write_summary(path, report) -> None:
    rows = (
        [
            _fmt(report.x1[g]),
            _fmt(report.bias[g]),
            _fmt(report.sam_sd[g]),
            _fmt(report.mse[g]),
            _fmt(report.p05[g]),
            _fmt(report.p95[g]),
        ]
        for g in range(report.x1.size)
    )
    _write_rows(path, SUMMARY_COLUMNS, rows)


def read_summary(path) -> dict[str, np.ndarray]:
    table = read_table(path)
    missing = [c for c in SUMMARY_COLUMNS if c not in table]
    if missing:
        raise SchemaError(f"{path}: summary file missing columns {missing}")
    return table


def write_vd_grid(path, p1_values, p2_values, vd_values, gap_values=None) -> None:
    """Pairwise design-variance factor over a (p1, p2) grid.

    With `gap_values` an extra column carries the homoscedastic variance
    difference at each pair.
    """
    p1 = np.asarray(p1_values, dtype=float)
    p2 = np.asarray(p2_values, dtype=float)
    vd_arr = np.asarray(vd_values, dtype=float)
    header = ["p1", "p2", "vd"]
    if gap_values is not None:
        header.append("var_gap")
        gap = np.asarray(gap_values, dtype=float)
    rows = []
    for i in range(p1.size):
        row = [_fmt(p1[i]), _fmt(p2[i]), _fmt(vd_arr[i])]
        if gap_values is not None:
            row.append(_fmt(gap[i]))
        rows.append(row)
    _write_rows(path, header, rows)


def write_variance_bias(path, table: dict) -> None:
    """Limiting variance curves v1..v4 and the bias curve on an x1 grid."""
    header = ("x1", "v1", "v2", "v3", "v4", "bias")
    n = len(table["x1"])
    rows = ([_fmt(table[c][g]) for c in header] for g in range(n))
    _write_rows(path, header, rows)


def write_manifest(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
