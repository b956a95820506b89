"""OHLCV loading, month-end resampling, universe alignment and IS/OOS splits."""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DataError,
    EmptyInput,
    InvalidBar,
    MissingColumn,
    NonMonotoneDates,
    NonPositivePrice,
    UnparseableRow,
    ValidationError,
    WindowTooShort,
)

log = logging.getLogger(__name__)

COLUMNS = ("date", "open", "high", "low", "adj_close", "volume")
PRICE_FIELDS = ("open", "high", "low", "adj_close")


@dataclass(frozen=True)
class OhlcvBar:
    date: dt.date
    open: float
    high: float
    low: float
    adj_close: float
    volume: float


def _as_array(x) -> np.ndarray:
    a = np.array(x, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class AssetSeries:
    """Bars of one asset stored column-wise; ``returns`` has one entry fewer than the bars."""

    ticker: str
    dates: np.ndarray  # datetime64[D]
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    adj_close: np.ndarray
    volume: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dates", np.array(self.dates, dtype="datetime64[D]"))
        for name in PRICE_FIELDS + ("volume",):
            object.__setattr__(self, name, _as_array(getattr(self, name)))
        n = len(self.dates)
        if any(len(getattr(self, f)) != n for f in PRICE_FIELDS + ("volume",)):
            raise DataError(f"{self.ticker}: column lengths differ")

    def __len__(self) -> int:
        return len(self.dates)

    @property
    def returns(self) -> np.ndarray:
        p = self.adj_close
        return p[1:] / p[:-1] - 1.0

    @property
    def bars(self) -> tuple[OhlcvBar, ...]:
        return tuple(
            OhlcvBar(d.astype(dt.date), float(o), float(h), float(lo), float(c), float(v))
            for d, o, h, lo, c, v in zip(
                self.dates, self.open, self.high, self.low, self.adj_close, self.volume
            )
        )

    @classmethod
    def from_bars(cls, ticker: str, bars: Sequence[OhlcvBar]) -> "AssetSeries":
        return cls(
            ticker,
            [b.date for b in bars],
            [b.open for b in bars],
            [b.high for b in bars],
            [b.low for b in bars],
            [b.adj_close for b in bars],
            [b.volume for b in bars],
        )

    def take(self, idx) -> "AssetSeries":
        return AssetSeries(
            self.ticker, self.dates[idx], self.open[idx], self.high[idx],
            self.low[idx], self.adj_close[idx], self.volume[idx],
        )

    def equals(self, other: "AssetSeries") -> bool:
        return self.ticker == other.ticker and all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("dates",) + PRICE_FIELDS + ("volume",)
        )


def validate_bars(series: AssetSeries) -> None:
    for name in PRICE_FIELDS:
        bad = np.flatnonzero(~(getattr(series, name) > 0))
        if bad.size:
            raise NonPositivePrice(
                f"{series.ticker}: {name} not positive on {series.dates[bad[0]]}"
            )
    if np.any(~(series.volume >= 0)):
        raise InvalidBar(f"{series.ticker}: negative volume")
    bad = np.flatnonzero((series.low > series.open) | (series.open > series.high))
    if bad.size:
        raise InvalidBar(f"{series.ticker}: open outside [low, high] on {series.dates[bad[0]]}")
    if len(series) > 1 and np.any(np.diff(series.dates.astype(np.int64)) <= 0):
        raise NonMonotoneDates(f"{series.ticker}: dates not strictly increasing")


def load_ohlcv(
    path: str | Path,
    schema: Mapping[str, str] | None = None,
    ticker: str | None = None,
) -> AssetSeries:
    """Read one ticker's CSV.

    ``schema`` maps canonical column names (``date``, ``open``, ...) to the
    headers used in the file; unmapped names are expected verbatim.
    """
    path = Path(path)
    schema = dict(schema or {})
    cols = {c: schema.get(c, c) for c in COLUMNS}
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyInput(f"{path}: empty file") from None
        missing = [cols[c] for c in COLUMNS if cols[c] not in header]
        if missing:
            raise MissingColumn(f"{path}: missing column(s) {', '.join(missing)}")
        pos = {c: header.index(cols[c]) for c in COLUMNS}
        for line, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            try:
                date = dt.date.fromisoformat(rec[pos["date"]].strip()[:10])
                vals = [float(rec[pos[c]]) for c in COLUMNS[1:]]
            except (ValueError, IndexError) as exc:
                raise UnparseableRow(line, str(exc)) from None
            if not all(math.isfinite(v) for v in vals):
                raise UnparseableRow(line, "non-finite value")
            rows.append((date, *vals))
    if not rows:
        raise EmptyInput(f"{path}: no data rows")
    rows.sort(key=lambda r: r[0])
    for a, b in zip(rows, rows[1:]):
        if a[0] == b[0]:
            raise NonMonotoneDates(f"{path}: duplicate date {a[0]}")
    cols_t = list(zip(*rows))
    series = AssetSeries(ticker or path.stem, *cols_t)
    validate_bars(series)
    return series


def write_ohlcv(series: AssetSeries, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for b in series.bars:
            w.writerow([b.date.isoformat(), repr(b.open), repr(b.high), repr(b.low),
                        repr(b.adj_close), repr(b.volume)])


def monthly_last(daily: AssetSeries) -> AssetSeries:
    """Keep the final bar of every calendar month."""
    if len(daily) == 0:
        raise EmptyInput(f"{daily.ticker}: no bars")
    months = daily.dates.astype("datetime64[M]")
    last = np.flatnonzero(np.r_[months[1:] != months[:-1], True])
    return daily.take(last)


def simple_return(p_now: float, p_prev: float) -> float:
    if not p_prev > 0:
        raise NonPositivePrice(f"previous price must be positive, got {p_prev}")
    return p_now / p_prev - 1.0


@dataclass(frozen=True, eq=False)
class Universe:
    """Month-aligned panel of assets; arrays are (months, assets), tickers sorted."""

    tickers: tuple[str, ...]
    months: np.ndarray  # datetime64[M]
    dates: np.ndarray  # (T, K) datetime64[D], actual last trading day
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    adj_close: np.ndarray
    volume: np.ndarray
    rejected: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if len(self.tickers) < 2:
            raise DataError(f"universe needs at least 2 assets, got {len(self.tickers)}")
        if list(self.tickers) != sorted(self.tickers):
            raise ValidationError("universe tickers must be sorted")
        for name in PRICE_FIELDS + ("volume",):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        object.__setattr__(self, "months", np.array(self.months, dtype="datetime64[M]"))
        object.__setattr__(self, "dates", np.array(self.dates, dtype="datetime64[D]"))

    @property
    def n_assets(self) -> int:
        return len(self.tickers)

    @property
    def n_months(self) -> int:
        return len(self.months)

    @property
    def common_window(self) -> tuple[str, str]:
        return str(self.months[0]), str(self.months[-1])

    @property
    def returns(self) -> np.ndarray:
        """``returns[t]`` is the simple return realized from month t to t+1."""
        p = self.adj_close
        return p[1:] / p[:-1] - 1.0

    def asset(self, ticker: str) -> AssetSeries:
        j = self.tickers.index(ticker)
        return AssetSeries(
            ticker, self.dates[:, j], self.open[:, j], self.high[:, j],
            self.low[:, j], self.adj_close[:, j], self.volume[:, j],
        )

    @property
    def assets(self) -> list[AssetSeries]:
        return [self.asset(t) for t in self.tickers]

    def truncate(self, n_months: int) -> "Universe":
        """First ``n_months`` months only."""
        s = slice(0, n_months)
        return Universe(
            self.tickers, self.months[s], self.dates[s], self.open[s], self.high[s],
            self.low[s], self.adj_close[s], self.volume[s], self.rejected,
        )

    def select(self, tickers: Iterable[str]) -> "Universe":
        keep = sorted(set(tickers))
        missing = [t for t in keep if t not in self.tickers]
        if missing:
            raise DataError(f"unknown ticker(s): {', '.join(missing)}")
        idx = [self.tickers.index(t) for t in keep]
        return Universe(
            tuple(keep), self.months, self.dates[:, idx], self.open[:, idx],
            self.high[:, idx], self.low[:, idx], self.adj_close[:, idx],
            self.volume[:, idx], self.rejected,
        )

    def equals(self, other: "Universe") -> bool:
        return self.tickers == other.tickers and all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("months", "dates") + PRICE_FIELDS + ("volume",)
        )

    def save(self, path: str | Path) -> None:
        with Path(path).open("wb") as fh:
            np.savez(
                fh,
                format_version=np.array(1),
                tickers=np.array(self.tickers),
                rejected=np.array(self.rejected, dtype=str),
                months=self.months.astype(np.int64),
                dates=self.dates.astype(np.int64),
                open=self.open, high=self.high, low=self.low,
                adj_close=self.adj_close, volume=self.volume,
            )

    @classmethod
    def load(cls, path: str | Path) -> "Universe":
        with np.load(Path(path), allow_pickle=False) as z:
            if int(z["format_version"]) != 1:
                raise DataError(f"{path}: unsupported universe format")
            return cls(
                tuple(str(t) for t in z["tickers"]),
                z["months"].astype("datetime64[M]"),
                z["dates"].astype("datetime64[D]"),
                z["open"], z["high"], z["low"], z["adj_close"], z["volume"],
                tuple(str(t) for t in z["rejected"]),
            )


def _month(s: str | None):
    return None if s is None else np.datetime64(s, "M")


def build_universe(
    series: Iterable[AssetSeries],
    start: str | None = None,
    end: str | None = None,
) -> Universe:
    """Align monthly series on their common window.

    Assets whose bars skip a month inside the window are rejected (logged),
    never forward-filled.
    """
    by_ticker = {}
    for s in series:
        if s.ticker in by_ticker:
            raise DataError(f"duplicate ticker {s.ticker}")
        by_ticker[s.ticker] = s
    if not by_ticker:
        raise EmptyInput("no assets")

    months = {t: s.dates.astype("datetime64[M]") for t, s in by_ticker.items()}
    for t, m in months.items():
        if len(m) == 0:
            raise EmptyInput(f"{t}: no bars")
        if np.any(np.diff(m.astype(np.int64)) == 0):
            raise DataError(f"{t}: more than one bar per month; resample first")
    lo = max(m[0] for m in months.values())
    hi = min(m[-1] for m in months.values())
    if start is not None:
        lo = max(lo, _month(start))
    if end is not None:
        hi = min(hi, _month(end))
    if hi < lo:
        raise WindowTooShort(f"no common window (start {lo}, end {hi})")
    window = np.arange(lo, hi + 1, dtype="datetime64[M]")

    kept, rejected, cols = [], [], []
    for t in sorted(by_ticker):
        m = months[t]
        sel = (m >= lo) & (m <= hi)
        if sel.sum() != len(window) or not np.array_equal(m[sel], window):
            missing = np.setdiff1d(window, m[sel])
            log.warning("rejecting %s: %d missing month(s), first %s", t, len(missing),
                        missing[0] if len(missing) else "?")
            rejected.append(t)
            continue
        kept.append(t)
        cols.append(by_ticker[t].take(np.flatnonzero(sel)))
    if len(kept) < 2:
        raise DataError(f"fewer than 2 assets cover {lo}..{hi} (rejected: {rejected})")

    def stack(name):
        return np.column_stack([getattr(c, name) for c in cols])

    return Universe(
        tuple(kept), window, stack("dates"), stack("open"), stack("high"),
        stack("low"), stack("adj_close"), stack("volume"), tuple(rejected),
    )


def load_directory(
    directory: str | Path,
    tickers: Sequence[str] | None = None,
    schema: Mapping[str, str] | None = None,
) -> list[AssetSeries]:
    """Load ``<TICKER>.csv`` files and resample each to month-end bars."""
    directory = Path(directory)
    if tickers is None:
        paths = sorted(directory.glob("*.csv"))
    else:
        paths = [directory / f"{t}.csv" for t in tickers]
    if not paths:
        raise EmptyInput(f"no CSV files in {directory}")
    out = []
    for p in sorted(paths, key=lambda p: p.stem):
        if not p.exists():
            raise DataError(f"missing data file {p}")
        out.append(monthly_last(load_ohlcv(p, schema)))
    return out


@dataclass(frozen=True)
class SplitPlan:
    is_fraction: float = 0.70
    train_fraction_of_is: float = 0.50
    min_months: int = 10

    def __post_init__(self):
        if not 0 < self.is_fraction < 1 or not 0 < self.train_fraction_of_is < 1:
            raise ValidationError("split fractions must lie strictly inside (0, 1)")


@dataclass(frozen=True)
class SplitBoundaries:
    train: range
    validation: range
    test: range

    @property
    def in_sample(self) -> range:
        return range(self.train.start, self.validation.stop)

    def as_dict(self) -> dict:
        return {k: [getattr(self, k).start, getattr(self, k).stop]
                for k in ("train", "validation", "test")}


def split(n_months: int | Universe, plan: SplitPlan = SplitPlan()) -> SplitBoundaries:
    """Chronological train / validation / test month ranges.

    Both cuts round down, so leftover months fall into the later window.
    """
    T = n_months.n_months if isinstance(n_months, Universe) else int(n_months)
    if T < plan.min_months:
        raise WindowTooShort(f"window of {T} months is shorter than {plan.min_months}")
    n_is = math.floor(Fraction(str(plan.is_fraction)) * T)
    n_train = math.floor(Fraction(str(plan.train_fraction_of_is)) * n_is)
    return SplitBoundaries(range(0, n_train), range(n_train, n_is), range(n_is, T))
