"""Binary technical trading signals and the feature matrix built from them.

Every signal takes values in {-1, +1}; ties resolve to +1.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    InsufficientHistory,
    InsufficientWarmup,
    InvalidSpec,
    LengthMismatch,
)
from .market_data import Universe


@dataclass(frozen=True)
class SignalSpec:
    kind: str  # "MOM", "MA" or "VOL"
    m: int = 0
    s: int = 0
    l: int = 0

    def __post_init__(self):
        if self.kind == "MOM":
            if self.m < 1:
                raise InvalidSpec(f"MOM look-back must be >= 1, got {self.m}")
        elif self.kind in ("MA", "VOL"):
            if not 1 <= self.s < self.l:
                raise InvalidSpec(f"{self.kind} needs 1 <= s < l, got s={self.s}, l={self.l}")
        else:
            raise InvalidSpec(f"unknown signal kind {self.kind!r}")

    @property
    def name(self) -> str:
        if self.kind == "MOM":
            return f"MOM({self.m}M)"
        return f"{self.kind}({self.s}M-{self.l}M)"

    @property
    def first_valid(self) -> int:
        """Smallest month index at which the signal is defined."""
        if self.kind == "MOM":
            return self.m
        if self.kind == "MA":
            return self.l - 1
        # OBV starts at index 1, so its l-window needs t - l + 1 >= 1
        return self.l

    @classmethod
    def parse(cls, name: str) -> "SignalSpec":
        m = re.fullmatch(r"\s*MOM\((\d+)M\)\s*", name)
        if m:
            return cls("MOM", m=int(m.group(1)))
        m = re.fullmatch(r"\s*(MA|VOL)\((\d+)M-(\d+)M\)\s*", name)
        if m:
            return cls(m.group(1), s=int(m.group(2)), l=int(m.group(3)))
        raise InvalidSpec(f"cannot parse signal name {name!r}")


DEFAULT_SPECS: tuple[SignalSpec, ...] = (
    *(SignalSpec("MOM", m=m) for m in (1, 3, 6, 9, 12)),
    *(SignalSpec("MA", s=s, l=l) for s in (1, 2, 3) for l in (9, 12)),
    *(SignalSpec("VOL", s=s, l=l) for s in (1, 2, 3) for l in (9, 12)),
)

WARMUP_MONTHS = 12


def warmup(specs: Sequence[SignalSpec]) -> int:
    return max(WARMUP_MONTHS, max(s.first_valid for s in specs))


def _sign(cond: bool) -> int:
    return 1 if cond else -1


def mom_signal(prices, m: int, t: int) -> int:
    if t - m < 0 or t >= len(prices):
        raise InsufficientHistory(f"MOM({m}) undefined at t={t}")
    return _sign(prices[t] >= prices[t - m])


def _window_mean(x, j: int, t: int) -> float:
    return float(np.mean(np.asarray(x[t - j + 1 : t + 1], dtype=float)))


def ma_signal(prices, s: int, l: int, t: int) -> int:
    if t - l + 1 < 0 or t >= len(prices):
        raise InsufficientHistory(f"MA({s},{l}) undefined at t={t}")
    return _sign(_window_mean(prices, s, t) >= _window_mean(prices, l, t))


def obv(prices, volumes) -> np.ndarray:
    """On-balance volume for k = 1..n-1 (the first bar has no direction)."""
    p = np.asarray(prices, dtype=float)
    v = np.asarray(volumes, dtype=float)
    if p.shape != v.shape:
        raise LengthMismatch(f"{len(p)} prices vs {len(v)} volumes")
    if len(p) < 2:
        raise LengthMismatch("OBV needs at least two observations")
    d = np.where(p[1:] >= p[:-1], 1.0, -1.0)
    return np.cumsum(v[1:] * d)


def vol_signal(prices, volumes, s: int, l: int, t: int) -> int:
    series = obv(prices, volumes)
    # series[k - 1] holds OBV_k
    if t - l + 1 < 1 or t >= len(prices):
        raise InsufficientHistory(f"VOL({s},{l}) undefined at t={t}")
    return _sign(_window_mean(series, s, t - 1) >= _window_mean(series, l, t - 1))


def _rolling_mean(x: np.ndarray, j: int) -> np.ndarray:
    """Trailing j-mean aligned to the window end; NaN before index j-1."""
    out = np.full(len(x), np.nan)
    if len(x) >= j:
        win = np.lib.stride_tricks.sliding_window_view(x, j)
        out[j - 1 :] = win.mean(axis=1)
    return out


def signal_series(spec: SignalSpec, prices, volumes) -> np.ndarray:
    """Signal at every index; 0 where history is insufficient."""
    p = np.asarray(prices, dtype=float)
    n = len(p)
    out = np.zeros(n, dtype=np.int8)
    if spec.kind == "MOM":
        if n > spec.m:
            out[spec.m :] = np.where(p[spec.m :] >= p[: n - spec.m], 1, -1)
        return out
    if spec.kind == "MA":
        short, long_ = _rolling_mean(p, spec.s), _rolling_mean(p, spec.l)
    else:
        o = np.r_[np.nan, obv(p, volumes)]
        short, long_ = _rolling_mean(o, spec.s), _rolling_mean(o, spec.l)
    ok = np.arange(n) >= spec.first_valid
    out[ok] = np.where(short[ok] >= long_[ok], 1, -1)
    return out


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Rows ordered by (ticker, month); ``target`` is NaN where the next month is absent."""

    names: tuple[str, ...]
    tickers: np.ndarray  # per-row ticker (str)
    months: np.ndarray  # per-row month index into the universe
    dates: np.ndarray  # per-row datetime64[M]
    X: np.ndarray  # (rows, signals), entries in {-1, +1}
    target: np.ndarray

    def __len__(self) -> int:
        return len(self.target)

    @property
    def n_features(self) -> int:
        return len(self.names)

    def subset(self, mask) -> "FeatureMatrix":
        return FeatureMatrix(self.names, self.tickers[mask], self.months[mask],
                             self.dates[mask], self.X[mask], self.target[mask])

    def labelled(self) -> "FeatureMatrix":
        """Rows whose 1-month-ahead target is known."""
        return self.subset(np.isfinite(self.target))

    def months_in(self, months: range) -> "FeatureMatrix":
        return self.subset((self.months >= months.start) & (self.months < months.stop))

    def for_ticker(self, ticker: str) -> "FeatureMatrix":
        return self.subset(self.tickers == ticker)

    def at_month(self, t: int, tickers: Sequence[str]) -> np.ndarray:
        """Feature rows for month ``t`` in the order of ``tickers``."""
        sel = np.flatnonzero(self.months == t)
        lookup = {tk: i for tk, i in zip(self.tickers[sel], sel)}
        missing = [tk for tk in tickers if tk not in lookup]
        if missing:
            raise InsufficientHistory(f"no features at month {t} for {missing}")
        return self.X[[lookup[tk] for tk in tickers]]

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["ticker", "date", *self.names, "target"])
            for i in range(len(self)):
                tgt = "" if not np.isfinite(self.target[i]) else repr(float(self.target[i]))
                w.writerow([self.tickers[i], str(self.dates[i]),
                            *(int(v) for v in self.X[i]), tgt])


def build_features(
    universe: Universe,
    specs: Sequence[SignalSpec] = DEFAULT_SPECS,
    window: range | None = None,
) -> FeatureMatrix:
    """One row per (asset, month in ``window``) with the next month's return as target."""
    specs = tuple(specs)
    if not specs:
        raise InvalidSpec("no signals requested")
    T = universe.n_months
    lead = warmup(specs)
    if window is None:
        window = range(lead, T)
    if window.start < lead:
        raise InsufficientWarmup(
            f"window starts at month {window.start}; {lead} months of history required"
        )
    if window.stop > T or len(window) == 0:
        raise InsufficientWarmup(f"window {window.start}..{window.stop} outside data (T={T})")

    idx = np.arange(window.start, window.stop)
    fwd = universe.returns
    blocks = []
    for j, ticker in enumerate(universe.tickers):
        p, v = universe.adj_close[:, j], universe.volume[:, j]
        sig = np.column_stack([signal_series(s, p, v) for s in specs])[idx]
        tgt = np.array([fwd[t, j] if t + 1 < T else np.nan for t in idx])
        blocks.append((ticker, sig, tgt))

    n = len(idx)
    return FeatureMatrix(
        names=tuple(s.name for s in specs),
        tickers=np.repeat(np.array(universe.tickers), n),
        months=np.tile(idx, len(blocks)),
        dates=np.tile(universe.months[idx], len(blocks)),
        X=np.vstack([b[1] for b in blocks]).astype(float),
        target=np.concatenate([b[2] for b in blocks]),
    )
