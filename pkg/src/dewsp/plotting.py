"""Risk-return scatter of every (family, N) point, one panel per evaluation period."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

COLORS = {
    "DEWSP": "tab:red",
    "HEWSP-TV": "tab:blue",
    "HEWSP-T": "tab:cyan",
    "HEWSP-V": "tab:purple",
    "REWSP": "tab:gray",
    "EWWP": "black",
    "MSRP": "tab:green",
    "MVP": "tab:orange",
}


def _points(results) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """``results`` is a list of BacktestResult or a mapping family -> PerformanceCurve."""
    pts: dict[str, list] = {}
    if isinstance(results, Mapping):
        return {fam: (np.asarray(c.sigma), np.asarray(c.r)) for fam, c in results.items()}
    for res in results:
        pts.setdefault(res.family, []).append((res.realized_vol, res.realized_mean))
    return {fam: tuple(np.array(v) for v in zip(*p)) for fam, p in pts.items()}


def risk_return_plot(periods: Mapping[str, Sequence], path: str | Path) -> Path:
    plt.rcParams["svg.hashsalt"] = "dewsp"
    fig, axes = plt.subplots(1, len(periods), figsize=(5.5 * len(periods), 4.5), squeeze=False)
    for ax, (period, results) in zip(axes[0], periods.items()):
        pts = _points(results)
        best_sr = -np.inf
        for fam, (vol, ret) in pts.items():
            ax.scatter(vol, ret, s=18, color=COLORS.get(fam, "k"), label=fam,
                       marker="o" if len(vol) > 1 else "D")
            ok = vol > 0
            if ok.any():
                best_sr = max(best_sr, float(np.max(ret[ok] / vol[ok])))
        if np.isfinite(best_sr):
            xmax = ax.get_xlim()[1]
            ax.plot([0, xmax], [0, best_sr * xmax], ":", color="0.4", lw=1)
            ax.set_xlim(0, xmax)
        ax.set_title(f"{period}")
        ax.set_xlabel("realized volatility (monthly)")
        ax.set_ylabel("realized return (monthly)")
        ax.legend(fontsize=7, loc="best")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
