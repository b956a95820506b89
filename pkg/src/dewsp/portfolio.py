"""Portfolio construction: ranked equal-weight subsets and long-only optimizers."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    EmptyWindow,
    InvalidSubsetSize,
    NonFiniteForecast,
    SolverDiverged,
    ValidationError,
    WindowTooShort,
)
from .market_data import SplitBoundaries

log = logging.getLogger(__name__)

SUBSET_FAMILIES = ("DEWSP", "HEWSP-TV", "HEWSP-T", "HEWSP-V", "REWSP")
WHOLE_FAMILIES = ("EWWP", "MSRP", "MVP")
FAMILIES = SUBSET_FAMILIES + WHOLE_FAMILIES
HIST_SCOPES = {"HEWSP-TV": "train+validation", "HEWSP-T": "train", "HEWSP-V": "validation"}

RIDGE_THRESHOLD = 1e-10


@dataclass(frozen=True, eq=False)
class ReturnForecast:
    date: object
    mu: np.ndarray
    source: str = "deep"
    tickers: tuple[str, ...] | None = None

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).reshape(-1)
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        if self.tickers is not None and len(self.tickers) != len(mu):
            raise ValidationError("forecast length does not match tickers")

    @property
    def names(self) -> tuple[str, ...]:
        if self.tickers is not None:
            return self.tickers
        width = len(str(len(self.mu)))
        return tuple(f"asset{i:0{width}d}" for i in range(len(self.mu)))


@dataclass(frozen=True, eq=False)
class CovarianceMatrix:
    sigma: np.ndarray
    estimation_window: range | None = None
    ridge: float = 0.0


@dataclass(frozen=True, eq=False)
class PortfolioWeights:
    date: object
    w: np.ndarray
    kind: str
    N: int | None = None

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "w", w)


def rank_assets(forecast: ReturnForecast) -> np.ndarray:
    """Asset indices by descending forecast; ties go to the lexicographically smaller ticker."""
    mu = forecast.mu
    if not np.all(np.isfinite(mu)):
        raise NonFiniteForecast(f"non-finite forecast on {forecast.date}")
    names = np.array(forecast.names)
    return np.lexsort((names, -mu))


def subset_equal_weights(ordering: Sequence[int], N: int, N0: int, date=None,
                         kind: str = "DEWSP") -> PortfolioWeights:
    if not 1 <= N <= N0:
        raise InvalidSubsetSize(f"subset size {N} outside 1..{N0}")
    w = np.zeros(N0)
    w[np.asarray(ordering[:N], dtype=int)] = 1.0 / N
    return PortfolioWeights(date, w, kind, N)


def equal_whole(N0: int, date=None) -> PortfolioWeights:
    return PortfolioWeights(date, np.full(N0, 1.0 / N0), "EWWP", N0)


def random_subset(N: int, N0: int, seed: int, date=None) -> PortfolioWeights:
    if not 1 <= N <= N0:
        raise InvalidSubsetSize(f"subset size {N} outside 1..{N0}")
    rng = np.random.default_rng(seed)
    pick = rng.choice(N0, size=N, replace=False)
    w = np.zeros(N0)
    w[pick] = 1.0 / N
    return PortfolioWeights(date, w, "REWSP", N)


def scope_returns(returns: np.ndarray, split: SplitBoundaries, scope: str) -> np.ndarray:
    """Rows of ``returns`` realized into the months of an in-sample scope.

    ``returns[t]`` is the return from month t to t+1, so month m's own
    return is ``returns[m - 1]``.
    """
    months = {
        "train+validation": split.in_sample,
        "train": split.train,
        "validation": split.validation,
    }.get(scope)
    if months is None:
        raise ValidationError(f"unknown scope {scope!r}")
    lo, hi = max(months.start, 1), months.stop
    return returns[lo - 1 : hi - 1]


def historical_mean_forecast(returns, scope: str = "train+validation", date=None,
                             tickers: tuple[str, ...] | None = None) -> ReturnForecast:
    """Per-asset arithmetic mean over an already-sliced window of returns."""
    r = np.asarray(returns, dtype=float)
    if r.ndim == 1:
        r = r[:, None]
    if r.shape[0] == 0:
        raise EmptyWindow(f"no returns in scope {scope!r}")
    return ReturnForecast(date, r.mean(axis=0), f"hist_{scope}", tickers)


def sample_covariance(returns, window: range | None = None) -> CovarianceMatrix:
    """Unbiased sample covariance; a ridge is added only when it is not positive definite."""
    r = np.asarray(returns, dtype=float)
    if r.ndim == 1:
        r = r[:, None]
    if r.shape[0] < 2:
        raise WindowTooShort("covariance needs at least two observations")
    dev = r - r.mean(axis=0)
    s = dev.T @ dev / (r.shape[0] - 1)
    s = 0.5 * (s + s.T)
    lam = float(np.linalg.eigvalsh(s)[0])
    ridge = 0.0
    if lam < RIDGE_THRESHOLD:
        ridge = max(RIDGE_THRESHOLD, 1e-6 * float(np.mean(np.diag(s)))) - lam
        s = s + ridge * np.eye(len(s))
        log.warning("covariance not positive definite (min eigenvalue %.3g); ridge %.3g added",
                    lam, ridge)
    return CovarianceMatrix(s, window, ridge)


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {w : w >= 0, sum w = 1}."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, len(v) + 1)
    rho = np.flatnonzero(u - css / k > 0)[-1]
    return np.maximum(v - css[rho] / (rho + 1), 0.0)


def _ascend(f, grad, x0, max_iter: int = 20000, xtol: float = 1e-13,
            ftol: float = 1e-15) -> tuple[np.ndarray, float]:
    """Monotone projected gradient ascent with Barzilai-Borwein steps and backtracking.

    Stops when the projected step falls below ``xtol`` or the relative
    objective change stays below ``ftol`` for three consecutive iterations.
    """
    x = project_simplex(x0)
    fx, g = f(x), grad(x)
    t = 1.0 / max(np.abs(g).max(), 1e-12)
    quiet = 0
    for _ in range(max_iter):
        while True:
            x_new = project_simplex(x + t * g)
            d = x_new - x
            f_new = f(x_new)
            if f_new >= fx + g @ d - (d @ d) / (2 * t) or t < 1e-300:
                break
            t *= 0.5
        if not np.isfinite(f_new):
            raise SolverDiverged("objective became non-finite")
        g_new = grad(x_new)
        step = np.abs(d).max()
        change = abs(f_new - fx)
        x, fx_old, fx = x_new, fx, f_new
        if step <= xtol:
            break
        quiet = quiet + 1 if change <= ftol * max(abs(fx_old), 1e-300) else 0
        if quiet >= 3:
            break
        y = g - g_new
        sy = d @ y
        t = (d @ d) / sy if sy > 0 else 2.0 * t
        t = min(max(t, 1e-12), 1e12)
        g = g_new
    return x, fx


def _multistart(f, grad, n: int, n_starts: int = 5, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    starts = [np.full(n, 1.0 / n)] + [rng.dirichlet(np.ones(n)) for _ in range(n_starts - 1)]
    best_x, best_f = None, -np.inf
    for x0 in starts:
        x, fx = _ascend(f, grad, x0)
        if fx > best_f:
            best_x, best_f = x, fx
    if best_x is None or not np.isfinite(best_f):
        raise SolverDiverged("no start produced a finite objective")
    w = np.maximum(best_x, 0.0)
    return w / w.sum()


def _check_sigma(sigma) -> np.ndarray:
    s = np.asarray(getattr(sigma, "sigma", sigma), dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1] or not np.all(np.isfinite(s)):
        raise ValidationError("covariance must be a finite square matrix")
    return s


def msrp_weights(mu, sigma, date=None) -> PortfolioWeights:
    """Long-only maximum Sharpe ratio weights (zero risk-free rate)."""
    m = np.asarray(getattr(mu, "mu", mu), dtype=float)
    s = _check_sigma(sigma)
    if m.shape != (s.shape[0],):
        raise ValidationError("forecast and covariance sizes differ")
    if not np.all(np.isfinite(m)):
        raise NonFiniteForecast("non-finite expected returns")
    if np.all(m <= 0):
        warnings.warn("all expected returns are non-positive; returning the least negative "
                      "Sharpe portfolio", RuntimeWarning, stacklevel=2)

    def f(w):
        return (w @ m) / np.sqrt(w @ s @ w)

    def grad(w):
        sw = s @ w
        var = w @ sw
        return m / np.sqrt(var) - (w @ m) * sw / var ** 1.5

    return PortfolioWeights(date, _multistart(f, grad, len(m)), "MSRP", len(m))


def mvp_weights(sigma, date=None) -> PortfolioWeights:
    """Long-only minimum variance weights."""
    s = _check_sigma(sigma)
    w = _multistart(lambda w: -(w @ s @ w), lambda w: -2.0 * (s @ w), len(s))
    return PortfolioWeights(date, w, "MVP", len(s))


def sharpe_of(w, mu, sigma) -> float:
    s = _check_sigma(sigma)
    return float((w @ np.asarray(mu)) / np.sqrt(w @ s @ w))


def write_weights(rows: Iterable[PortfolioWeights], tickers: Sequence[str],
                  path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "kind", "N", *tickers])
        for pw in rows:
            w.writerow([str(pw.date), pw.kind, "" if pw.N is None else pw.N,
                        *(repr(float(x)) for x in pw.w)])
