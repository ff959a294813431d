"""Parsers for the experiment CSV schemas and the run manifest."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

TRACE_COLUMNS = ("trial", "s", "J_exact", "gap", "grad_norm_exact",
                 "G_norm", "E_norm", "tau_flag", "diverged")
SWEEP_COLUMNS = ("eps", "delta_max", "success_rate", "trials", "infeasible")


class ParseError(Exception):
    pass


def _float(field: str) -> float:
    if field == "":
        return math.nan
    return float(field)


def _check_header(header, expected, path):
    for column in expected:
        if column not in header:
            raise ParseError(f"{path}: missing column {column!r}")
    if list(header) != list(expected):
        raise ParseError(f"{path}: unexpected column order {header!r}")


def read_trace(path) -> dict:
    """Trace CSV -> {trial: [(s, J_exact), ...]} in file order."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        _check_header(header, TRACE_COLUMNS, path)
        series: dict[int, list[tuple[int, float]]] = {}
        for row in reader:
            if len(row) != len(TRACE_COLUMNS):
                raise ParseError(f"{path}: row with {len(row)} fields, expected {len(TRACE_COLUMNS)}")
            try:
                trial = int(row[0])
                s = int(row[1])
                j_exact = _float(row[2])
            except ValueError as exc:
                raise ParseError(f"{path}: bad value in column trial/s/J_exact: {exc}") from exc
            series.setdefault(trial, []).append((s, j_exact))
    if not series:
        raise ParseError(f"{path}: no data rows")
    return series


def read_sweep(path) -> list[dict]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        _check_header(header, SWEEP_COLUMNS, path)
        rows = []
        for row in reader:
            if len(row) != len(SWEEP_COLUMNS):
                raise ParseError(f"{path}: row with {len(row)} fields, expected {len(SWEEP_COLUMNS)}")
            try:
                rows.append({
                    "eps": float(row[0]),
                    "delta_max": _float(row[1]),
                    "success_rate": _float(row[2]),
                    "trials": int(row[3]),
                    "infeasible": row[4] == "1",
                })
            except ValueError as exc:
                raise ParseError(f"{path}: bad value: {exc}") from exc
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return rows


def read_manifest_level(path) -> float | None:
    """Optimal-cost reference level from a manifest, if recorded."""
    doc = json.loads(Path(path).read_text())
    dare = doc.get("dare") or {}
    for key in ("j_star_sigma0", "j_star_trace"):
        value = dare.get(key)
        if value is not None:
            return float(value)
    return None


def read_manifest_slope(path) -> float | None:
    doc = json.loads(Path(path).read_text())
    fit = doc.get("sweep_fit") or {}
    return fit.get("slope")
