"""Synthetic monthly OHLCV markets with planted, indicator-visible predictability.

Return of asset i into month t::

    r[i, t] = alpha[i] + momentum * D[i, t-1] + trend * S[i, t-1]
              + noise * (beta[i] * f[t] + vol[i] * e[i, t])

where D is the sign of the previous month's return (the MOM(1M) signal) and
S is the 12-month momentum sign (MOM(12M)), both with ties to +1; ``f`` is a
common market factor and ``e`` idiosyncratic noise.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import InvalidSpec
from .market_data import Universe


@dataclass(frozen=True)
class SynthSpec:
    n_assets: int = 12
    n_months: int = 420
    start: str = "1985-01"
    alpha_low: float = 0.002
    alpha_high: float = 0.008
    momentum: float = 0.012
    trend: float = 0.006
    noise: float = 1.0
    vol_low: float = 0.04
    vol_high: float = 0.09
    market_vol: float = 0.035
    volume_base: float = 1e6
    ticker_prefix: str = "S"

    def __post_init__(self):
        if self.n_assets < 2:
            raise InvalidSpec("need at least 2 assets")
        if self.n_months < 14:
            raise InvalidSpec("need at least 14 months")
        if self.alpha_high < self.alpha_low or self.vol_high < self.vol_low:
            raise InvalidSpec("ranges must satisfy low <= high")
        if min(self.noise, self.vol_low, self.market_vol, self.volume_base) < 0:
            raise InvalidSpec("scales must be non-negative")
        try:
            np.datetime64(self.start, "M")
        except ValueError:
            raise InvalidSpec(f"bad start month {self.start!r}") from None

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_dict(self) -> dict:
        return asdict(self)


def _month_ends(start: str, n: int) -> np.ndarray:
    months = np.datetime64(start, "M") + np.arange(n)
    return (months + 1).astype("datetime64[D]") - 1


def synth_market(spec: SynthSpec = SynthSpec(), seed: int = 0) -> Universe:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2024]))
    K, T = spec.n_assets, spec.n_months
    width = len(str(K))
    tickers = tuple(f"{spec.ticker_prefix}{i + 1:0{width}d}" for i in range(K))

    alpha = np.linspace(spec.alpha_low, spec.alpha_high, K)[rng.permutation(K)]
    vol = rng.uniform(spec.vol_low, spec.vol_high, K)
    beta = rng.uniform(0.6, 1.4, K)
    factor = rng.normal(0.0, spec.market_vol, T)
    eps = rng.normal(0.0, 1.0, (T, K))

    price = np.empty((T, K))
    price[0] = rng.uniform(20.0, 200.0, K)
    ret = np.zeros((T, K))
    for t in range(1, T):
        d = np.where(ret[t - 1] >= 0, 1.0, -1.0) if t > 1 else np.ones(K)
        s = np.where(price[t - 1] >= price[max(t - 13, 0)], 1.0, -1.0)
        r = (alpha + spec.momentum * d + spec.trend * s
             + spec.noise * (beta * factor[t] + vol * eps[t]))
        ret[t] = np.maximum(r, -0.9)
        price[t] = price[t - 1] * (1.0 + ret[t])

    gap = np.exp(rng.normal(0.0, 0.01 * spec.noise, (T, K)))
    open_ = np.vstack([price[:1], price[:-1]]) * gap
    wick_hi = 1.0 + np.abs(rng.normal(0.0, 0.02, (T, K)))
    wick_lo = 1.0 - np.minimum(np.abs(rng.normal(0.0, 0.02, (T, K))), 0.5)
    high = np.maximum(open_, price) * wick_hi
    low = np.minimum(open_, price) * wick_lo
    volume = np.round(
        spec.volume_base * np.exp(rng.normal(0.0, 0.3, (T, K))) * (1.0 + 5.0 * np.abs(ret))
    )

    ends = _month_ends(spec.start, T)
    return Universe(
        tickers, ends.astype("datetime64[M]"), np.repeat(ends[:, None], K, axis=1),
        open_, high, low, price, volume,
    )
