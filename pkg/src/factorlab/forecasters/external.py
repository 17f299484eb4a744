"""File adapter for forecasts produced outside the library.

Exchange CSV schema: ``target_period,factor_id,level,value`` where ``level``
is a quantile level in (0, 1) or the literal ``central``.  The central
forecast is taken from the 0.5 level when present, otherwise from the
``central`` row.
"""
from __future__ import annotations

import csv
import warnings

from ..core import fmt12
from ..errors import MalformedRow, MissingFactor, NonMonotoneQuantiles
from . import QuantileForecast

HEADER = ["target_period", "factor_id", "level", "value"]


def write_forecast_csv(forecasts: list[QuantileForecast], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(HEADER)
        for fc in forecasts:
            for level in sorted(fc.quantiles):
                writer.writerow([fc.target_period, fc.factor_id, fmt12(level),
                                 fmt12(fc.quantiles[level])])
            writer.writerow([fc.target_period, fc.factor_id, "central", fmt12(fc.central)])


def external_forecast_load(path, expected_factors, target_period: int) -> list[QuantileForecast]:
    """Load one QuantileForecast per expected factor for ``target_period``.

    Rows may appear in any order.  Non-monotone quantile values are sorted
    with a :class:`NonMonotoneQuantiles` warning.
    """
    levels: dict[int, dict[float, float]] = {}
    centrals: dict[int, float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != HEADER:
            raise MalformedRow(f"{path}: expected header {','.join(HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise MalformedRow(f"{path}: line {lineno}: expected 4 fields, got {len(row)}")
            try:
                period = int(row[0])
                fid = int(row[1])
                value = float(row[3])
            except ValueError as exc:
                raise MalformedRow(f"{path}: line {lineno}: {exc}") from exc
            if period != target_period:
                continue
            if row[2] == "central":
                centrals[fid] = value
            else:
                try:
                    level = float(row[2])
                except ValueError as exc:
                    raise MalformedRow(f"{path}: line {lineno}: bad level {row[2]!r}") from exc
                if not 0.0 < level < 1.0:
                    raise MalformedRow(f"{path}: line {lineno}: level {level} outside (0, 1)")
                levels.setdefault(fid, {})[level] = value

    out = []
    for fid in expected_factors:
        if fid not in levels:
            raise MissingFactor(f"{path}: no quantile rows for factor {fid} at period {target_period}")
        qs = levels[fid]
        if 0.5 in qs:
            central = qs[0.5]
        elif fid in centrals:
            central = centrals[fid]
        else:
            raise MalformedRow(f"{path}: factor {fid}: neither level 0.5 nor a central row")
        ordered = [qs[a] for a in sorted(qs)]
        if any(b < a for a, b in zip(ordered, ordered[1:])):
            warnings.warn(f"factor {fid} at period {target_period}: quantiles not "
                          f"monotone, sorting", NonMonotoneQuantiles)
        out.append(QuantileForecast(fid, target_period, central, qs))
    return out
