"""File formats.

Response CSV: first header row holds item names, second holds kinds
("binary", "ordinal:L", "continuous"), then one row per respondent.
Numbers are written with 17 significant digits so that a write/read
cycle reproduces every double exactly.
"""
from __future__ import annotations

import csv
import json
import os

import numpy as np

from .errors import DataError, ParameterError
from .model import ItemKind, ModelParams, ResponseMatrix

__all__ = ["fmt", "write_responses", "read_responses", "write_matrix", "read_matrix",
           "save_params", "load_params", "write_json", "read_json"]


def fmt(x) -> str:
    x = float(x)
    if np.isnan(x):
        return "nan"
    return format(x, ".17g")


def write_responses(path, data: ResponseMatrix):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(data.names)
        w.writerow([str(k) for k in data.kinds])
        for row in data.values:
            w.writerow([fmt(v) for v in row])


def read_responses(path) -> ResponseMatrix:
    """Parse a response CSV; errors carry the 1-based file line."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise DataError("response file needs a name row and a kind row", line=len(rows) + 1)
    names = [s.strip() for s in rows[0]]
    if len(set(names)) != len(names):
        raise DataError("duplicate item names", line=1)
    try:
        kinds = [ItemKind.parse(s) for s in rows[1]]
    except ParameterError as exc:
        raise DataError(str(exc), line=2) from None
    if len(kinds) != len(names):
        raise DataError(f"{len(kinds)} kinds for {len(names)} items", line=2)
    vals = []
    for ln, row in enumerate(rows[2:], start=3):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(names):
            raise DataError(f"expected {len(names)} fields, found {len(row)}", line=ln)
        out = []
        for c, cell in enumerate(row):
            s = cell.strip()
            if s == "" or s.lower() in ("na", "nan"):
                raise DataError("missing value", line=ln, col=names[c])
            try:
                out.append(float(s))
            except ValueError:
                raise DataError(f"not a number: {s!r}", line=ln, col=names[c]) from None
        vals.append(out)
    if not vals:
        raise DataError("response file has no data rows", line=3)
    try:
        return ResponseMatrix(np.array(vals), kinds, names)
    except DataError as exc:
        if exc.row is not None:
            raise DataError(str(exc).rsplit(" (", 1)[0], row=exc.row, col=exc.col, line=exc.row + 2) from None
        raise


def write_matrix(path, M, header=None, row_names=None):
    M = np.atleast_2d(np.asarray(M, float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header is not None:
            w.writerow(([""] if row_names is not None else []) + list(header))
        for i, row in enumerate(M):
            lead = [row_names[i]] if row_names is not None else []
            w.writerow(lead + [fmt(v) for v in row])


def read_matrix(path, header=True, row_names=False):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if header:
        rows = rows[1:]
    try:
        return np.array([[float(x) for x in (r[1:] if row_names else r)] for r in rows if r])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, ItemKind):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc.msg})", line=exc.lineno) from None


def save_params(path, params: ModelParams, kinds=None):
    d = params.to_dict()
    if kinds is not None:
        d["kinds"] = [str(k) for k in kinds]
    write_json(path, d)


def load_params(path) -> ModelParams:
    d = read_json(path)
    try:
        return ModelParams.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed parameter file ({exc})") from None
