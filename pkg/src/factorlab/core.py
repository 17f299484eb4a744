"""Shared data model, linear-algebra helpers and deterministic RNG streams.

Returns are plain decimals (0.01 = 1%) and dates are integer month indexes,
so nothing in the numeric core knows about calendars.  Characteristics are
rank-normalized to [-1, 1] per cross-section.
"""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import SingularDesign

# Condition-number threshold above which the normal equations get a ridge.
RIDGE_CONDITION_LIMIT = 1e10
RIDGE_SCALE = 1e-6


def fmt12(x: float) -> str:
    """Format a number with 12 significant digits (file output convention)."""
    return format(float(x), ".12g")


# ---------------------------------------------------------------------------
# Deterministic, splittable RNG
# ---------------------------------------------------------------------------

def _key_to_ints(key) -> list[int]:
    """Map an arbitrary str/int key to a stable list of 32-bit ints."""
    if isinstance(key, (int, np.integer)):
        return [int(key) & 0xFFFFFFFF, (int(key) >> 32) & 0xFFFFFFFF]
    digest = hashlib.sha256(str(key).encode("utf-8")).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


@dataclass
class RngStream:
    """Named, splittable random stream.

    Identical (seed, path) pairs produce bitwise-identical draw sequences on
    every platform.  Streams are single-owner: parallel work derives child
    streams instead of sharing one generator.
    """

    seed: int
    path: tuple = ()
    algorithm: str = "pcg64"
    _generator: np.random.Generator | None = field(default=None, repr=False, compare=False)

    def derive(self, *keys) -> "RngStream":
        """Child stream whose sequence depends on (seed, path + keys) only."""
        return RngStream(self.seed, self.path + tuple(keys))

    def generator(self) -> np.random.Generator:
        if self._generator is None:
            entropy = [self.seed & 0xFFFFFFFFFFFFFFFF]
            for key in self.path:
                entropy.extend(_key_to_ints(key))
            self._generator = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence(entropy)))
        return self._generator


# ---------------------------------------------------------------------------
# Panel data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PanelData:
    """Aligned per-period cross-sections of excess returns and lagged
    characteristics.

    ``returns[s]`` and ``characteristics[s]`` are aligned to ``assets[s]``;
    the characteristic rows stored under period ``s`` are dated ``s - 1``
    (already lagged by the generator/reader).
    """

    periods: tuple[int, ...]
    assets: dict[int, tuple[str, ...]]
    returns: dict[int, np.ndarray]          # period -> (N_s,)
    characteristics: dict[int, np.ndarray]  # period -> (N_s, P)
    n_characteristics: int

    def __post_init__(self):
        for s in self.periods:
            r = self.returns[s]
            z = self.characteristics[s]
            if r.shape[0] != len(self.assets[s]) or z.shape != (r.shape[0], self.n_characteristics):
                raise ValueError(f"period {s}: misaligned returns/characteristics")
            if not np.all(np.isfinite(r)) or not np.all(np.isfinite(z)):
                raise ValueError(f"period {s}: non-finite values")
            if z.size and (z.min() < -1.0 - 1e-12 or z.max() > 1.0 + 1e-12):
                raise ValueError(f"period {s}: characteristics outside [-1, 1]")

    @property
    def first_period(self) -> int:
        return self.periods[0]

    @property
    def last_period(self) -> int:
        return self.periods[-1]


@dataclass(frozen=True)
class FactorSeries:
    """Historical return series of one latent factor."""

    factor_id: int
    periods: tuple[int, ...]
    values: np.ndarray

    def __post_init__(self):
        if len(self.periods) != self.values.shape[0]:
            raise ValueError("periods and values misaligned")

    def up_to(self, t: int) -> np.ndarray:
        """Values with period <= t (expanding history at decision time t)."""
        idx = np.searchsorted(np.asarray(self.periods), t, side="right")
        return self.values[:idx]


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------

def cross_sectional_ols(Z: np.ndarray, r: np.ndarray, allow_ridge: bool = True) -> np.ndarray:
    """OLS projection b = (Z'Z)^-1 Z'r of one return cross-section on the
    characteristics matrix.

    When Z'Z is ill-conditioned (cond > 1e10) a small ridge
    delta = 1e-6 * trace(Z'Z) / P is added; with ``allow_ridge=False`` that
    situation raises :class:`SingularDesign` instead.
    """
    Z = np.asarray(Z, dtype=float)
    r = np.asarray(r, dtype=float)
    if Z.ndim != 2 or r.ndim != 1 or Z.shape[0] != r.shape[0]:
        raise ValueError(f"shape mismatch: Z {Z.shape}, r {r.shape}")
    gram = Z.T @ Z
    rhs = Z.T @ r
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > RIDGE_CONDITION_LIMIT:
        if not allow_ridge:
            raise SingularDesign(f"Z'Z condition number {cond:.3e} exceeds {RIDGE_CONDITION_LIMIT:.0e}")
        p = gram.shape[0]
        gram = gram + (RIDGE_SCALE * np.trace(gram) / p) * np.eye(p)
    try:
        return np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularDesign(str(exc)) from exc


def projection_operator(Z: np.ndarray) -> np.ndarray:
    """Z (Z'Z)^-1 with the same ridge fallback as :func:`cross_sectional_ols`."""
    Z = np.asarray(Z, dtype=float)
    gram = Z.T @ Z
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > RIDGE_CONDITION_LIMIT:
        p = gram.shape[0]
        gram = gram + (RIDGE_SCALE * np.trace(gram) / p) * np.eye(p)
    try:
        return Z @ np.linalg.inv(gram)
    except np.linalg.LinAlgError as exc:
        raise SingularDesign(str(exc)) from exc


def rank_normalize(raw, fill_missing: bool = True) -> np.ndarray:
    """Map one period's raw characteristic values to [-1, 1] by rank.

    The value for rank k among n is 2*(k - 0.5)/n - 1; ties share the average
    rank.  Missing values (NaN) are imputed to the cross-sectional median of
    the observed values before ranking, which lands them at ~0.
    """
    x = np.asarray(raw, dtype=float).copy()
    n = x.shape[0]
    if n < 2:
        raise ValueError("rank_normalize needs at least 2 values")
    missing = ~np.isfinite(x)
    if missing.any():
        if not fill_missing or missing.all():
            raise ValueError("cannot rank all-missing cross-section")
        x[missing] = np.median(x[~missing])
    order = np.argsort(x, kind="stable")
    ranks = np.empty(n, dtype=float)
    ranks[order] = np.arange(1, n + 1, dtype=float)
    # average the ranks inside each tie group
    sorted_x = x[order]
    i = 0
    while i < n:
        j = i
        while j + 1 < n and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        if j > i:
            ranks[order[i:j + 1]] = 0.5 * (i + 1 + j + 1)
        i = j + 1
    return 2.0 * (ranks - 0.5) / n - 1.0


# ---------------------------------------------------------------------------
# Panel CSV (long form: period,asset_id,ret,c_1..c_P)
# ---------------------------------------------------------------------------

def write_panel_csv(panel: PanelData, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["period", "asset_id", "ret"]
                        + [f"c_{j + 1}" for j in range(panel.n_characteristics)])
        for s in panel.periods:
            rs = panel.returns[s]
            zs = panel.characteristics[s]
            for i, asset in enumerate(panel.assets[s]):
                writer.writerow([s, asset, fmt12(rs[i])] + [fmt12(v) for v in zs[i]])


def read_panel_csv(path) -> PanelData:
    """Read a long-form panel CSV.  Empty characteristic fields are imputed
    to 0 (the post-normalization cross-sectional median)."""
    from .errors import MalformedRow

    periods: dict[int, list] = {}
    n_chars = None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:3] != ["period", "asset_id", "ret"]:
            raise MalformedRow(f"{path}: expected header period,asset_id,ret,c_1,...")
        n_chars = len(header) - 3
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3 + n_chars:
                raise MalformedRow(f"{path}: line {lineno}: expected {3 + n_chars} fields, got {len(row)}")
            try:
                s = int(row[0])
                ret = float(row[1 + 1])
                chars = [float(v) if v != "" else 0.0 for v in row[3:]]
            except ValueError as exc:
                raise MalformedRow(f"{path}: line {lineno}: {exc}") from exc
            periods.setdefault(s, []).append((row[1], ret, chars))
    ordered = tuple(sorted(periods))
    assets = {}
    returns = {}
    characteristics = {}
    for s in ordered:
        rows = periods[s]
        assets[s] = tuple(a for a, _, _ in rows)
        returns[s] = np.array([r for _, r, _ in rows], dtype=float)
        characteristics[s] = np.array([c for _, _, c in rows], dtype=float)
    return PanelData(ordered, assets, returns, characteristics, n_chars)


def write_factor_series_csv(series: list[FactorSeries], path) -> None:
    """Export factor histories in the bridge exchange layout."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["period", "factor_id", "value"])
        for fs in series:
            for s, v in zip(fs.periods, fs.values):
                writer.writerow([s, fs.factor_id, fmt12(v)])


def read_factor_series_csv(path) -> list[FactorSeries]:
    from .errors import MalformedRow

    data: dict[int, list[tuple[int, float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["period", "factor_id", "value"]:
            raise MalformedRow(f"{path}: expected header period,factor_id,value")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                data.setdefault(int(row[1]), []).append((int(row[0]), float(row[2])))
            except (ValueError, IndexError) as exc:
                raise MalformedRow(f"{path}: line {lineno}: {exc}") from exc
    out = []
    for fid in sorted(data):
        rows = sorted(data[fid])
        out.append(FactorSeries(fid, tuple(s for s, _ in rows),
                                np.array([v for _, v in rows], dtype=float)))
    return out
