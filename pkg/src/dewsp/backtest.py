"""Frictionless month-end rebalancing backtests.

A strategy decides weights at the close of month t using information up to
t; the weights then earn the asset returns from t to t+1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import InvalidSubsetSize, MissingForecast, ShapeMismatch, ValidationError
from .market_data import Universe
from .portfolio import (
    FAMILIES,
    HIST_SCOPES,
    CovarianceMatrix,
    PortfolioWeights,
    ReturnForecast,
    equal_whole,
    msrp_weights,
    mvp_weights,
    random_subset,
    rank_assets,
    subset_equal_weights,
)


def portfolio_period_return(w, asset_returns) -> float:
    w = np.asarray(getattr(w, "w", w), dtype=float)
    r = np.asarray(asset_returns, dtype=float)
    if w.shape != r.shape:
        raise ShapeMismatch(f"{w.shape} weights vs {r.shape} returns")
    return float(w @ r)


class ForecastBook:
    """Forecasts keyed by decision month; a static book answers every month."""

    def __init__(self, by_month: Mapping[int, ReturnForecast] | None = None,
                 static: ReturnForecast | None = None):
        self.by_month = dict(by_month or {})
        self.static = static

    def get(self, t: int, date=None) -> ReturnForecast:
        if self.static is not None:
            return self.static
        try:
            return self.by_month[t]
        except KeyError:
            raise MissingForecast(date if date is not None else t) from None


@dataclass
class BacktestContext:
    """Everything a family needs to form weights; all of it fitted on in-sample data."""

    tickers: tuple[str, ...]
    deep: ForecastBook | None = None
    hist: Mapping[str, ForecastBook] = field(default_factory=dict)
    covariance: Callable[[int], CovarianceMatrix] | None = None
    seed: int = 0
    rewsp_redraw: bool = False

    @property
    def n_assets(self) -> int:
        return len(self.tickers)


@dataclass
class Strategy:
    family: str
    N: int | None
    context: BacktestContext
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown family {self.family!r}")
        N0 = self.context.n_assets
        if self.family in ("EWWP", "MSRP", "MVP"):
            self.N = N0
        elif self.N is None or not 1 <= self.N <= N0:
            raise InvalidSubsetSize(f"{self.family}: subset size {self.N} outside 1..{N0}")

    @property
    def label(self) -> str:
        return self.family

    def weights_at(self, t: int, date=None) -> PortfolioWeights:
        ctx, N0 = self.context, self.context.n_assets
        fam = self.family
        if fam == "EWWP":
            return equal_whole(N0, date)
        if fam == "DEWSP":
            if ctx.deep is None:
                raise MissingForecast(date if date is not None else t)
            order = rank_assets(ctx.deep.get(t, date))
            return subset_equal_weights(order, self.N, N0, date, fam)
        if fam in HIST_SCOPES:
            book = ctx.hist.get(fam)
            if book is None:
                raise MissingForecast(date if date is not None else t)
            return subset_equal_weights(rank_assets(book.get(t, date)), self.N, N0, date, fam)
        if fam == "REWSP":
            seed = int(np.random.SeedSequence([ctx.seed, self.N] + ([t] if ctx.rewsp_redraw else []))
                       .generate_state(1)[0])
            pw = random_subset(self.N, N0, seed, date)
            return pw
        if ctx.covariance is None:
            raise ValidationError(f"{fam} needs a covariance estimate")
        sigma = ctx.covariance(t)
        if fam == "MVP":
            key = id(sigma)
            if key not in self._cache:
                self._cache[key] = (sigma, mvp_weights(sigma).w)
            return PortfolioWeights(date, self._cache[key][1], "MVP", N0)
        if ctx.deep is None:
            raise MissingForecast(date if date is not None else t)
        return PortfolioWeights(date, msrp_weights(ctx.deep.get(t, date), sigma).w, "MSRP", N0)


@dataclass
class BacktestResult:
    family: str
    N: int | None
    months: np.ndarray  # decision month indices
    dates: np.ndarray  # month in which each return is realized
    portfolio_returns: np.ndarray
    weights: list[PortfolioWeights] = field(default_factory=list, repr=False)

    @property
    def realized_mean(self) -> float:
        return float(np.mean(self.portfolio_returns))

    @property
    def realized_vol(self) -> float:
        r = self.portfolio_returns
        return float(np.std(r, ddof=1)) if len(r) > 1 else 0.0

    @property
    def sharpe(self) -> float:
        vol = self.realized_vol
        return self.realized_mean / vol if vol > 0 else float("nan")


def run_backtest(universe: Universe, strategy: Strategy, window: range,
                 keep_weights: bool = False) -> BacktestResult:
    """Rebalance at every decision month in ``window`` and earn the next month's return."""
    if window.start < 0 or window.stop > universe.n_months - 1 or len(window) == 0:
        raise ValidationError(
            f"decision window {window.start}..{window.stop} needs the following month's data"
        )
    fwd = universe.returns
    out, kept = [], []
    for t in window:
        pw = strategy.weights_at(t, universe.months[t])
        out.append(portfolio_period_return(pw.w, fwd[t]))
        if keep_weights:
            kept.append(pw)
    months = np.arange(window.start, window.stop)
    return BacktestResult(strategy.family, strategy.N, months, universe.months[months + 1],
                          np.array(out), kept)


@dataclass
class PerformanceCurve:
    family: str
    N: np.ndarray
    r: np.ndarray
    sigma: np.ndarray
    sr: np.ndarray
    results: list[BacktestResult] = field(default_factory=list, repr=False)

    @classmethod
    def from_results(cls, family: str, results: Sequence[BacktestResult]) -> "PerformanceCurve":
        return cls(
            family,
            np.array([r.N for r in results]),
            np.array([r.realized_mean for r in results]),
            np.array([r.realized_vol for r in results]),
            np.array([r.sharpe for r in results]),
            list(results),
        )


def sweep_sizes(universe: Universe, family: str, window: range, context: BacktestContext,
                keep_weights: bool = False) -> PerformanceCurve:
    """Backtest one subset family at every size N = 1..N0."""
    results = [
        run_backtest(universe, Strategy(family, N, context), window, keep_weights)
        for N in range(1, context.n_assets + 1)
    ]
    return PerformanceCurve.from_results(family, results)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_returns(results: Iterable[BacktestResult], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["family", "N", "date", "return"])
        for res in results:
            for d, r in zip(res.dates, res.portfolio_returns):
                w.writerow([res.family, res.N, str(d), _fmt(r)])


def write_summary(results: Iterable[BacktestResult], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["family", "N", "r", "sigma", "SR"])
        for res in results:
            w.writerow([res.family, res.N, _fmt(res.realized_mean), _fmt(res.realized_vol),
                        _fmt(res.sharpe)])


def read_summary(path: str | Path) -> dict[str, PerformanceCurve]:
    rows: dict[str, list] = {}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            rows.setdefault(row["family"], []).append(
                (int(row["N"]), float(row["r"]), float(row["sigma"]), float(row["SR"]))
            )
    curves = {}
    for fam, pts in rows.items():
        pts.sort()
        n, r, s, sr = map(np.array, zip(*pts))
        curves[fam] = PerformanceCurve(fam, n, r, s, sr)
    return curves
