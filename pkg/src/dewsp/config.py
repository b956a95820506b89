"""Flat TOML run configuration."""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .indicators import DEFAULT_SPECS, SignalSpec
from .portfolio import FAMILIES
from .synth import SynthSpec

SYNTH_PREFIX = "synth_"


@dataclass
class RunConfig:
    source: str = "synthetic"
    data_dir: str = ""
    tickers: list[str] = field(default_factory=list)
    start: str = ""
    end: str = ""
    synth: SynthSpec = field(default_factory=SynthSpec)
    synth_seed: int = 0
    is_fraction: float = 0.70
    train_fraction_of_is: float = 0.50
    min_months: int = 10
    indicators: list[str] = field(default_factory=lambda: [s.name for s in DEFAULT_SPECS])
    hpo_evals: int = 50
    hpo_startup: int = 10
    hpo_gamma: float = 0.25
    hpo_candidates: int = 24
    max_epochs: int = 100
    patience: int = 10
    training_mode: str = "pooled"
    seed: int = 0
    families: list[str] = field(
        default_factory=lambda: ["DEWSP", "HEWSP-TV", "HEWSP-T", "HEWSP-V", "REWSP",
                                 "EWWP", "MSRP", "MVP"]
    )
    subset_sizes: list[int] = field(default_factory=list)
    covariance: str = "static"
    rewsp_redraw: bool = False
    write_weights: bool = True
    out_dir: str = "runs/default"
    base_dir: str = field(default=".", repr=False)

    @classmethod
    def keys(cls) -> set[str]:
        plain = {f.name for f in dataclasses.fields(cls)} - {"synth", "base_dir"}
        return plain | {SYNTH_PREFIX + k for k in SynthSpec.field_names()}

    @classmethod
    def from_dict(cls, raw: dict[str, Any], base_dir: str | Path = ".") -> "RunConfig":
        unknown = sorted(set(raw) - cls.keys())
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        synth_kw = {k[len(SYNTH_PREFIX):]: v for k, v in raw.items()
                    if k.startswith(SYNTH_PREFIX) and k != "synth_seed"}
        kw = {k: v for k, v in raw.items()
              if not k.startswith(SYNTH_PREFIX) or k == "synth_seed"}
        try:
            cfg = cls(**kw, synth=SynthSpec(**synth_kw), base_dir=str(base_dir))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            raw = tomllib.loads(path.read_text())
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(raw, path.parent)

    def to_dict(self) -> dict[str, Any]:
        out = {k: getattr(self, k) for k in self.keys() if not k.startswith(SYNTH_PREFIX)}
        out["synth_seed"] = self.synth_seed
        out.update({SYNTH_PREFIX + k: v for k, v in self.synth.as_dict().items()})
        return dict(sorted(out.items()))

    @property
    def signal_specs(self) -> tuple[SignalSpec, ...]:
        return tuple(SignalSpec.parse(n) for n in self.indicators)

    def data_path(self) -> Path:
        p = Path(self.data_dir)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def expected_assets(self) -> int | None:
        """Universe size known without loading any data, if determinable."""
        if self.tickers:
            return len(set(self.tickers))
        if self.source == "synthetic":
            return self.synth.n_assets
        d = self.data_path()
        return len(list(d.glob("*.csv"))) if d.is_dir() else None

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.source in ("synthetic", "csv"), "source must be 'synthetic' or 'csv'")
        if self.source == "csv":
            need(bool(self.data_dir), "csv source needs data_dir")
        for key in ("start", "end"):
            v = getattr(self, key)
            if v:
                try:
                    np.datetime64(v, "M")
                except ValueError:
                    raise ConfigError(f"{key} must be YYYY-MM, got {v!r}") from None
        need(0 < self.is_fraction < 1 and 0 < self.train_fraction_of_is < 1,
             "split fractions must lie in (0, 1)")
        need(self.min_months >= 2, "min_months must be >= 2")
        need(bool(self.indicators), "at least one indicator required")
        try:
            self.signal_specs
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        need(self.hpo_evals >= 1 and self.hpo_startup >= 1 and self.hpo_candidates >= 1,
             "hpo counts must be >= 1")
        need(0 < self.hpo_gamma < 1, "hpo_gamma must lie in (0, 1)")
        need(self.max_epochs >= 1 and self.patience >= 1, "max_epochs and patience must be >= 1")
        need(self.training_mode in ("pooled", "per_asset"),
             "training_mode must be 'pooled' or 'per_asset'")
        unknown = [f for f in self.families if f not in FAMILIES]
        need(not unknown, f"unknown families: {unknown}")
        need(len(set(self.families)) == len(self.families), "duplicate families")
        need(self.covariance in ("static", "expanding"),
             "covariance must be 'static' or 'expanding'")
        need(all(isinstance(n, int) and n >= 1 for n in self.subset_sizes),
             "subset_sizes must be positive integers")
        n0 = self.expected_assets()
        if n0 is not None:
            too_big = [n for n in self.subset_sizes if n > n0]
            need(not too_big, f"subset sizes {too_big} exceed the universe size {n0}")
        if self.tickers and self.source == "synthetic":
            need(len(self.tickers) >= 2, "need at least two tickers")
