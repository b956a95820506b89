"""Tree-structured Parzen Estimator over a purely categorical search space.

With every dimension finite, each Parzen estimator is a smoothed histogram:
``p(c) = (count(c) + 1) / (n + K)``. Candidates are drawn from the "good"
estimator ``l`` and the one maximizing ``l(x) / g(x)`` is proposed.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import NumericError, ValidationError
from .neural import SPACE, Hyperparameters, Model, init_model, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Trial:
    params: Mapping[str, object]
    loss: float
    seed: int
    wall_time: float = 0.0


@dataclass
class SearchState:
    space: Mapping[str, Sequence] = field(default_factory=lambda: dict(SPACE))
    history: list[Trial] = field(default_factory=list)
    n_startup: int = 10
    gamma: float = 0.25
    n_candidates: int = 24

    def __post_init__(self):
        if self.n_startup < 1:
            raise ValidationError("n_startup must be >= 1")
        if not 0 < self.gamma < 1:
            raise ValidationError("gamma must lie in (0, 1)")
        if self.n_candidates < 1:
            raise ValidationError("n_candidates must be >= 1")

    @property
    def best(self) -> int | None:
        """Index of the earliest trial with minimal loss."""
        if not self.history:
            return None
        losses = [t.loss for t in self.history]
        return int(np.argmin(losses))

    def best_losses(self) -> list[float]:
        return list(np.minimum.accumulate([t.loss for t in self.history]))


def _rng(seed: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *extra]))


def trial_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index, 7]).generate_state(1)[0])


def _histogram(values, choices, weight=1.0) -> np.ndarray:
    counts = np.array([sum(v == c for v in values) for c in choices], dtype=float)
    return (counts + weight) / (len(values) + weight * len(choices))


def tpe_suggest(state: SearchState, seed: int) -> dict:
    """Next point to evaluate, as a mapping from dimension name to value."""
    rng = _rng(seed, len(state.history))
    space = state.space
    if len(state.history) < state.n_startup:
        return {k: choices[rng.integers(len(choices))] for k, choices in space.items()}

    order = sorted(range(len(state.history)), key=lambda i: (state.history[i].loss, i))
    n_good = max(1, math.ceil(state.gamma * len(order)))
    good = [state.history[i].params for i in order[:n_good]]
    bad = [state.history[i].params for i in order[n_good:]]

    l_dens, g_dens = {}, {}
    for k, choices in space.items():
        l_dens[k] = _histogram([p[k] for p in good], choices)
        g_dens[k] = _histogram([p[k] for p in bad], choices)

    best_idx, best_score = None, -math.inf
    for _ in range(state.n_candidates):
        idx = {k: int(rng.choice(len(space[k]), p=l_dens[k])) for k in space}
        score = sum(math.log(l_dens[k][i]) - math.log(g_dens[k][i]) for k, i in idx.items())
        if score > best_score:
            best_idx, best_score = idx, score
    return {k: space[k][i] for k, i in best_idx.items()}


def minimize(
    objective: Callable[[dict, int], float],
    n_evals: int,
    seed: int,
    state: SearchState | None = None,
    on_trial: Callable[[int, Trial], None] | None = None,
) -> SearchState:
    """Sequential TPE loop; ``objective(params, trial_seed)`` returns a loss.

    Non-finite losses are recorded as ``+inf`` and never selected as best.
    """
    if n_evals < 1:
        raise ValidationError("n_evals must be >= 1")
    state = state or SearchState()
    for i in range(n_evals):
        params = tpe_suggest(state, seed)
        ts = trial_seed(seed, len(state.history))
        t0 = time.perf_counter()
        loss = float(objective(params, ts))
        if not math.isfinite(loss) or loss < 0:
            loss = math.inf
        trial = Trial(params, float(loss), ts, time.perf_counter() - t0)
        state.history.append(trial)
        if on_trial:
            on_trial(len(state.history) - 1, trial)
    return state


@dataclass
class SearchResult:
    model: Model | None
    trials: list[Trial]
    state: SearchState

    @property
    def best_trial(self) -> Trial:
        return self.trials[self.state.best]


def run_search(
    train_set,
    val_set,
    n_evals: int = 50,
    seed: int = 0,
    n_startup: int = 10,
    gamma: float = 0.25,
    n_candidates: int = 24,
    fixed: Mapping[str, object] | None = None,
    log_path: str | Path | None = None,
) -> SearchResult:
    """Tune the network on (train, validation) and keep the best trained model.

    ``fixed`` overrides non-searched fields such as ``max_epochs``.
    """
    fixed = dict(fixed or {})
    n_inputs = train_set.n_features if hasattr(train_set, "n_features") else \
        np.asarray(train_set[0]).shape[1]
    state = SearchState(dict(SPACE), n_startup=n_startup, gamma=gamma,
                        n_candidates=n_candidates)
    best: dict = {"loss": math.inf, "model": None}
    writer = _TrialLog(log_path) if log_path else None

    def objective(params, ts):
        hp = Hyperparameters(**params, **fixed)
        try:
            model, report = train(init_model(hp, n_inputs, ts), train_set, val_set)
        except NumericError as exc:
            log.info("trial diverged: %s", exc)
            return math.inf
        loss = report.best_val_mse
        if loss < best["loss"]:
            best["loss"], best["model"] = loss, model
        return loss

    def on_trial(i, trial):
        log.info("trial %d loss=%.6g %s", i, trial.loss, dict(trial.params))
        if writer:
            writer.write(i, trial)

    try:
        minimize(objective, n_evals, seed, state, on_trial)
    finally:
        if writer:
            writer.close()
    return SearchResult(best["model"], list(state.history), state)


class _TrialLog:
    def __init__(self, path):
        self.fh = Path(path).open("w", newline="")
        self.w = csv.writer(self.fh, lineterminator="\n")
        self.w.writerow(["trial", "loss", "wall_time", *SPACE])
        self.fh.flush()

    def write(self, i: int, trial: Trial):
        self.w.writerow([i, repr(trial.loss), f"{trial.wall_time:.6f}",
                         *(trial.params[k] for k in SPACE)])
        self.fh.flush()

    def close(self):
        self.fh.close()


def read_trials(path: str | Path) -> list[Trial]:
    out = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            params = {}
            for k, choices in SPACE.items():
                raw = row[k]
                params[k] = next(c for c in choices if str(c) == raw)
            out.append(Trial(params, float(row["loss"]), 0, float(row["wall_time"])))
    return out
