"""Delimited file formats used by the command-line interface.

Summary-statistics files are UTF-8, tab-separated, with a required header
row ``variant, beta_x1, se_x1, ..., beta_xK, se_xK, beta_y, se_y`` in that
order. Missing values are hard errors; nothing is imputed. JSON output
carries 17 significant digits (round-trip exact), TSV output 6.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .data import SummaryDataset
from .errors import InputError

_Z95 = 1.96


def _read_rows(path) -> list[list[str]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise InputError(f"cannot read {path}: {err}") from err
    rows = [line.split("\t") for line in text.splitlines() if line.strip() != ""]
    if not rows:
        raise InputError(f"{path}: file is empty")
    return rows


def _parse_float(token: str, path, row: int, column: str) -> float:
    token = token.strip()
    if token == "":
        raise InputError(f"{path}: row {row}: missing value in column {column!r}")
    try:
        return float(token)
    except ValueError as err:
        raise InputError(
            f"{path}: row {row}: cannot parse {token!r} in column {column!r}") from err


def summary_columns(n_exposures: int) -> list[str]:
    cols = ["variant"]
    for k in range(1, n_exposures + 1):
        cols += [f"beta_x{k}", f"se_x{k}"]
    return cols + ["beta_y", "se_y"]


def read_summary_dataset(path) -> SummaryDataset:
    """Parse a summary-statistics TSV into a SummaryDataset.

    The number of exposures is inferred from the header. Column order is
    enforced and every cell must parse as a number; offending rows and
    columns are named in the error.
    """
    rows = _read_rows(path)
    header = [h.strip() for h in rows[0]]
    n_exposures = (len(header) - 3) // 2
    expected = summary_columns(max(n_exposures, 1))
    if n_exposures < 1 or header != expected:
        missing = [c for c in expected if c not in header]
        if missing:
            raise InputError(f"{path}: header is missing column {missing[0]!r} "
                             f"(expected {expected})")
        raise InputError(f"{path}: unexpected header {header} (expected {expected})")
    if len(rows) == 1:
        raise InputError(f"{path}: no data rows")

    ids, beta_x, se_x, beta_y, se_y = [], [], [], [], []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise InputError(f"{path}: row {i}: expected {len(header)} fields, got {len(row)}")
        ids.append(row[0].strip())
        if not ids[-1]:
            raise InputError(f"{path}: row {i}: missing value in column 'variant'")
        values = [_parse_float(tok, path, i, col) for tok, col in zip(row[1:], header[1:])]
        beta_x.append(values[0:-2:2])
        se_x.append(values[1:-2:2])
        beta_y.append(values[-2])
        se_y.append(values[-1])
    return SummaryDataset.from_arrays(ids, np.array(beta_x), np.array(se_x),
                                      np.array(beta_y), np.array(se_y))


def write_summary_dataset(dataset: SummaryDataset, path) -> None:
    """Write a dataset back to the summary-statistics TSV format."""
    cols = summary_columns(dataset.n_exposures)
    lines = ["\t".join(cols)]
    se_x = dataset.se_x
    for j in range(dataset.n_variants):
        fields = [dataset.variant_ids[j]]
        for k in range(dataset.n_exposures):
            fields += [repr(float(dataset.beta_x[j, k])), repr(float(se_x[j, k]))]
        fields += [repr(float(dataset.beta_y[j])), repr(float(dataset.se_y[j]))]
        lines.append("\t".join(fields))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_trait_correlation(path) -> np.ndarray:
    """Parse a K x K numeric TSV (no header) as a trait correlation matrix."""
    rows = _read_rows(path)
    k = len(rows)
    matrix = np.empty((k, k))
    for i, row in enumerate(rows):
        if len(row) != k:
            raise InputError(f"{path}: row {i + 1}: expected {k} fields, got {len(row)}")
        for jcol, tok in enumerate(row):
            matrix[i, jcol] = _parse_float(tok, path, i + 1, f"column {jcol + 1}")
    return matrix


def read_effects_table(path) -> dict[str, tuple[float, float]]:
    """Parse precomputed total/direct effects with their 95% CI bounds.

    Expected header: ``effect  estimate  ci_lower  ci_upper``; rows named
    ``total`` and ``direct``. Returns {name: (estimate, se)} with the
    standard error backed out of the interval half-width. Bounds that do
    not bracket the estimate are rejected.
    """
    rows = _read_rows(path)
    header = [h.strip() for h in rows[0]]
    if header != ["effect", "estimate", "ci_lower", "ci_upper"]:
        raise InputError(f"{path}: expected header 'effect estimate ci_lower ci_upper', "
                         f"got {header}")
    out = {}
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != 4:
            raise InputError(f"{path}: row {i}: expected 4 fields, got {len(row)}")
        name = row[0].strip().lower()
        if name not in ("total", "direct"):
            raise InputError(f"{path}: row {i}: effect must be 'total' or 'direct', got {name!r}")
        est = _parse_float(row[1], path, i, "estimate")
        lo = _parse_float(row[2], path, i, "ci_lower")
        hi = _parse_float(row[3], path, i, "ci_upper")
        if not lo <= est <= hi:
            raise InputError(f"{path}: row {i}: malformed CI bounds "
                             f"({lo!r}, {hi!r}) do not bracket estimate {est!r}")
        out[name] = (est, (hi - lo) / (2.0 * _Z95))
    for required in ("total", "direct"):
        if required not in out:
            raise InputError(f"{path}: missing row for {required!r} effect")
    return out


def format_cell(value, fmt: str = ".6g") -> str:
    if value is None:
        return "NA"
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), fmt)
    return str(value)


def format_tsv(columns, rows, formats=None) -> str:
    """Render rows (dicts keyed by column) as TSV with 6 significant digits.

    ``formats`` optionally overrides the float format per column (the
    p-value column uses scientific notation, for instance).
    """
    formats = formats or {}
    lines = ["\t".join(columns)]
    for row in rows:
        lines.append("\t".join(
            format_cell(row.get(c), formats.get(c, ".6g")) for c in columns))
    return "\n".join(lines) + "\n"


def _json_value(value) -> str:
    if value is None:
        return "null"
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if not math.isfinite(v):
            return "null"
        return format(v, ".17g")
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, np.ndarray):
        return _json_value(value.tolist())
    if isinstance(value, dict):
        items = (f"{json.dumps(str(k))}: {_json_value(v)}" for k, v in value.items())
        return "{" + ", ".join(items) + "}"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_json_value(v) for v in value) + "]"
    raise InputError(f"cannot serialize {type(value).__name__} to JSON")


def format_json(command: str, rows, extra: dict | None = None) -> str:
    """Versioned JSON document with floats at 17 significant digits."""
    payload = {"schema_version": 1, "command": command}
    if extra:
        payload.update(extra)
    payload["rows"] = list(rows)
    return _json_value(payload) + "\n"
