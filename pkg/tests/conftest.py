import numpy as np
import pytest

from dewsp.market_data import Universe
from dewsp.synth import SynthSpec, synth_market

_ACCEPTANCE = []


def make_universe(prices, volumes=None, tickers=None, start="2000-01"):
    """Universe from a (T, K) price matrix; OHLC collapse onto the close."""
    p = np.asarray(prices, dtype=float)
    T, K = p.shape
    v = np.full((T, K), 1000.0) if volumes is None else np.asarray(volumes, dtype=float)
    tickers = tickers or tuple(f"A{i}" for i in range(K))
    months = np.datetime64(start, "M") + np.arange(T)
    ends = (months + 1).astype("datetime64[D]") - 1
    dates = np.repeat(ends[:, None], K, axis=1)
    return Universe(tuple(tickers), months, dates, p, p, p, p, v)


def prices_from_returns(returns, p0=100.0):
    r = np.asarray(returns, dtype=float)
    return p0 * np.vstack([np.ones((1, r.shape[1])), np.cumprod(1 + r, axis=0)])


@pytest.fixture(scope="session")
def small_market():
    return synth_market(SynthSpec(n_assets=5, n_months=120), seed=11)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker and (rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed")):
        _ACCEPTANCE.append((marker.args[0], marker.args[1], item.name, rep.outcome,
                            getattr(item, "acceptance_detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid, text, name, outcome, detail in sorted(_ACCEPTANCE):
        status = "PASS" if outcome == "passed" else "FAIL"
        line = f"[{status}] criterion {cid:>2}: {text}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)


def planted_objective(target):
    """Categorical test objective: number of dimensions differing from ``target``."""
    def objective(params, seed=0):
        return float(sum(params[k] != v for k, v in target.items()))
    return objective


def planted_target(space, seed):
    rng = np.random.default_rng([seed, 99])
    return {k: c[rng.integers(len(c))] for k, c in space.items()}


def random_search_best(objective, space, n_evals, seed):
    rng = np.random.default_rng([seed, 123])
    best = np.inf
    for _ in range(n_evals):
        best = min(best, objective({k: c[rng.integers(len(c))] for k, c in space.items()}))
    return best


def simplex_grid(step=1e-3):
    """Every 3-asset long-only weight vector on a lattice of the given step."""
    n = int(round(1 / step))
    i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    keep = i + j <= n
    i, j = i[keep], j[keep]
    return np.column_stack([i, j, n - i - j]) / n


def grid_msrp(mu, sigma, grid):
    sr = grid @ mu / np.sqrt(np.einsum("ij,jk,ik->i", grid, sigma, grid))
    k = int(np.argmax(sr))
    return grid[k], sr[k]


def grid_mvp(sigma, grid):
    var = np.einsum("ij,jk,ik->i", grid, sigma, grid)
    k = int(np.argmin(var))
    return grid[k], var[k]


def random_problem(rng, n=3):
    a = rng.normal(size=(n, n))
    vols = rng.uniform(0.03, 0.12, n)
    corr = a @ a.T + n * np.eye(n)
    d = np.sqrt(np.diag(corr))
    corr = corr / np.outer(d, d)
    sigma = corr * np.outer(vols, vols)
    mu = rng.uniform(-0.005, 0.02, n)
    if mu.max() <= 0:
        mu[0] = 0.01
    return mu, sigma


def naive_apc(x):
    total = 0.0
    for n in range(len(x) - 1):
        total += (x[n] - x[n + 1]) / x[n + 1]
    return total / (len(x) - 1)


def naive_asrir(a, b):
    total = 0.0
    for n in range(len(a)):
        total += (a[n] - b[n]) / b[n]
    return total / len(a)


def series_with_moments(mean, sd, n=120, seed=0):
    """Return series whose sample mean and (T-1) standard deviation are exactly as given."""
    z = np.random.default_rng(seed).normal(size=n)
    z = (z - z.mean()) / z.std(ddof=1)
    return mean + sd * z
