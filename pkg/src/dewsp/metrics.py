"""Sharpe ratio, average percent change across subset sizes, and Sharpe improvement rate."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import DegenerateSeries, DivisionByZero, ValidationError


def sharpe(returns) -> float:
    """Mean over sample standard deviation (T-1 denominator), zero risk-free rate."""
    r = np.asarray(returns, dtype=float)
    if r.size < 2:
        raise DegenerateSeries("Sharpe ratio needs at least two returns")
    sd = float(np.std(r, ddof=1))
    if not sd > 0:
        raise DegenerateSeries("zero-variance return series")
    return float(np.mean(r)) / sd


def apc(curve) -> float:
    """Average of (x^N - x^{N+1}) / x^{N+1} over N = 1..N0-1; ``curve[0]`` is N = 1."""
    x = np.asarray(curve, dtype=float)
    if x.size < 2:
        raise ValidationError("APC needs N0 >= 2")
    zero = np.flatnonzero(x[1:] == 0)
    if zero.size:
        raise DivisionByZero(int(zero[0]) + 2)
    return float(np.mean((x[:-1] - x[1:]) / x[1:]))


def asrir(dewsp_sr, benchmark_sr) -> float:
    """Average of (SR_dewsp^N - SR_bench^N) / SR_bench^N over N = 1..N0."""
    a = np.asarray(dewsp_sr, dtype=float)
    b = np.asarray(benchmark_sr, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size == 0:
        raise ValidationError("Sharpe curves must be non-empty and of equal length")
    zero = np.flatnonzero(b == 0)
    if zero.size:
        raise DivisionByZero(int(zero[0]) + 1)
    return float(np.mean((a - b) / b))


def _finite_or_none(x: float) -> float | None:
    return x if x is not None and math.isfinite(x) else None


@dataclass
class MetricsReport:
    """Percentages, as in the published tables; ``None`` marks an undefined entry."""

    period: str
    family: str = "DEWSP"
    apc_r: float | None = None
    apc_sigma: float | None = None
    apc_ratio: float | None = None
    asrir: dict[str, float | None] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)
    conventions: dict[str, str] = field(default_factory=lambda: {
        "risk_free_rate": "0",
        "std_denominator": "T-1",
        "units": "percent",
    })

    def as_dict(self) -> dict:
        return asdict(self)


def build_report(period: str, curves: Mapping[str, object], family: str = "DEWSP",
                 benchmarks=("HEWSP-TV", "HEWSP-T", "HEWSP-V")) -> MetricsReport:
    """Table-style metrics for ``family`` from per-family performance curves."""
    rep = MetricsReport(period, family)
    cur = curves[family]
    for name, values in (("apc_r", cur.r), ("apc_sigma", cur.sigma)):
        try:
            setattr(rep, name, 100.0 * apc(values))
        except DivisionByZero as exc:
            rep.flags.append(f"{name} undefined: zero value at N={exc.n}")
    if rep.apc_r is not None and rep.apc_sigma not in (None, 0.0):
        rep.apc_ratio = rep.apc_r / rep.apc_sigma
    elif rep.apc_sigma == 0.0:
        rep.flags.append("apc_ratio undefined: APC_sigma is 0")
    for bench in benchmarks:
        if bench not in curves:
            continue
        b = curves[bench].sr
        if np.any(~np.isfinite(b)) or np.any(~np.isfinite(cur.sr)):
            rep.asrir[bench] = None
            rep.flags.append(f"ASRIR vs {bench} undefined: non-finite Sharpe ratio")
            continue
        try:
            rep.asrir[bench] = 100.0 * asrir(cur.sr, b)
        except DivisionByZero as exc:
            rep.asrir[bench] = None
            rep.flags.append(f"ASRIR vs {bench} undefined: zero benchmark SR at N={exc.n}")
            continue
        if np.any(b <= 0):
            rep.flags.append(f"ASRIR vs {bench}: benchmark SR <= 0 for some N; sign ambiguous")
    rep.apc_r, rep.apc_sigma, rep.apc_ratio = (
        _finite_or_none(rep.apc_r), _finite_or_none(rep.apc_sigma), _finite_or_none(rep.apc_ratio)
    )
    return rep


def write_report(reports, path: str | Path, extra: Mapping | None = None) -> None:
    doc = {"reports": [r.as_dict() for r in reports]}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
