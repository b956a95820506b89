"""Acceptance criteria, one test per criterion.

Run ``pytest tests/test_acceptance.py`` for the pass/fail table printed at
the end of the session.
"""

import shutil
import subprocess
import sys
import time

import numpy as np
import pytest

from conftest import (
    grid_msrp,
    grid_mvp,
    naive_apc,
    naive_asrir,
    planted_objective,
    planted_target,
    random_problem,
    random_search_best,
    series_with_moments,
    simplex_grid,
)
from dewsp.backtest import Strategy
from dewsp.config import RunConfig
from dewsp.hpo import minimize
from dewsp.indicators import build_features, warmup
from dewsp.metrics import apc, asrir, sharpe
from dewsp.neural import SPACE, Hyperparameters, forward, gradient_check, init_model, train
from dewsp.pipeline import build_context, fit_models, run_pipeline
from dewsp.portfolio import (
    SUBSET_FAMILIES,
    ReturnForecast,
    equal_whole,
    msrp_weights,
    mvp_weights,
    rank_assets,
    sharpe_of,
    subset_equal_weights,
)

acceptance = pytest.mark.acceptance


@acceptance(1, "Sharpe convention reproduces 0.65 and 0.44 within 0.005")
def test_c01_sharpe_convention(request):
    a = sharpe(series_with_moments(0.026, 0.040))
    b = sharpe(series_with_moments(0.014, 0.032))
    request.node.acceptance_detail = f"{a:.4f}, {b:.4f}"
    assert abs(a - 0.65) <= 0.005
    assert abs(b - 0.44) <= 0.005


@acceptance(2, "apc and asrir match naive loops to 1e-12 on 1000 random curves")
def test_c02_metric_oracles(request):
    rng = np.random.default_rng(0)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(1000):
        n0 = int(rng.integers(2, 31))
        x = rng.uniform(0.001, 0.05, n0)
        a = rng.normal(0.2, 0.2, n0)
        b = rng.normal(0.2, 0.2, n0)
        b[np.abs(b) < 1e-3] = 1e-3
        worst = max(worst, abs(apc(x) - naive_apc(x)), abs(asrir(a, b) - naive_asrir(a, b)))
    elapsed = time.perf_counter() - t0
    request.node.acceptance_detail = f"max gap {worst:.1e}, {elapsed:.2f}s"
    assert worst <= 1e-12
    assert elapsed < 1.0


@acceptance(3, "MSRP/MVP match a 1e-3 simplex grid on 100 random 3-asset problems")
def test_c03_optimizer_grid_oracle(request):
    grid = simplex_grid(1e-3)
    rng = np.random.default_rng(7)
    w_err = obj_err = 0.0
    t0 = time.perf_counter()
    for _ in range(100):
        mu, sigma = random_problem(rng)
        wg, var_g = grid_mvp(sigma, grid)
        w = mvp_weights(sigma).w
        w_err = max(w_err, np.abs(w - wg).max())
        # positive gap means the solver is worse than the grid
        obj_err = max(obj_err, (w @ sigma @ w - var_g) / var_g)
        wg, sr_g = grid_msrp(mu, sigma, grid)
        w = msrp_weights(mu, sigma).w
        w_err = max(w_err, np.abs(w - wg).max())
        obj_err = max(obj_err, (sr_g - sharpe_of(w, mu, sigma)) / abs(sr_g))
    elapsed = time.perf_counter() - t0
    request.node.acceptance_detail = (
        f"weight Linf {w_err:.1e}, worst relative objective shortfall {obj_err:.1e}, {elapsed:.1f}s")
    assert w_err <= 2e-3
    assert obj_err <= 1e-6
    assert elapsed < 30


@acceptance(4, "closed-form MVP diag(1,4) and two-asset tangency within 1e-6")
def test_c04_closed_forms(request):
    mvp = mvp_weights(np.diag([1.0, 4.0])).w
    tan = msrp_weights(np.array([0.10, 0.05]), np.diag([0.04, 0.04])).w
    request.node.acceptance_detail = f"MVP {mvp.round(8)}, MSRP {tan.round(8)}"
    assert np.abs(mvp - [0.8, 0.2]).max() <= 1e-6
    assert np.abs(tan - [2 / 3, 1 / 3]).max() <= 1e-6


@acceptance(5, "analytic vs central-difference gradients within 1e-4 on every architecture")
def test_c05_gradient_fidelity(request):
    worst = 0.0
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    for act in ("tanh", "sigmoid"):
        for layers in SPACE["n_hidden_layers"]:
            for k, units in enumerate(SPACE["n_hidden_units"]):
                std = SPACE["init_std"][(k + layers) % len(SPACE["init_std"])]
                hp = Hyperparameters(n_hidden_layers=layers, n_hidden_units=units,
                                     init_std=std, hidden_activation=act)
                m = init_model(hp, 17, seed=int(rng.integers(1 << 30)))
                for _ in range(30):  # populate the running statistics used in infer mode
                    forward(m, rng.choice([-1.0, 1.0], size=(64, 17)), "train", rng)
                X = rng.choice([-1.0, 1.0], size=(16, 17))
                y = rng.normal(0, 0.05, 16)
                for mode in ("infer", "batch"):
                    worst = max(worst, gradient_check(m, X, y, 1e-5, mode=mode))
    elapsed = time.perf_counter() - t0
    request.node.acceptance_detail = f"max relative error {worst:.1e}, {elapsed:.1f}s"
    assert worst <= 1e-4
    assert elapsed < 10


@acceptance(6, "early stopping: adversarial split stops by 1+patience; learnable target improves")
def test_c06_early_stopping(request):
    rng = np.random.default_rng(0)
    X = rng.choice([-1.0, 1.0], size=(300, 17))
    hp = Hyperparameters(optimizer="sgd", patience=10, max_epochs=100)
    _, adv = train(init_model(hp, 17, 0, init_std=0.0), (X, np.ones(300)), (X, -np.ones(300)))
    hp = Hyperparameters(optimizer="adam", batch_size=28, max_epochs=40, patience=10)
    y = 0.1 * X[:, 0]
    _, rep = train(init_model(hp, 17, 1), (X[:200], y[:200]), (X[200:], y[200:]))
    best = np.minimum.accumulate([rep.initial_val_mse, *rep.val_mse])
    request.node.acceptance_detail = (
        f"adversarial stop epoch {adv.stopping_epoch}; learnable {rep.stopping_reason} at "
        f"{rep.stopping_epoch}, val MSE {rep.initial_val_mse:.2e} -> {rep.best_val_mse:.2e}")
    assert adv.stopping_epoch <= 1 + hp.patience
    assert np.all(np.diff(best) <= 0)
    assert rep.stopping_reason == "max_epochs" or best[-1] < best[0]


@acceptance(7, "TPE best-of-50 <= random best-of-50 in at least half of 20 paired seeds")
def test_c07_tpe_dominance(request):
    t0 = time.perf_counter()
    wins = 0
    for seed in range(20):
        obj = planted_objective(planted_target(SPACE, seed))
        tpe = min(t.loss for t in minimize(obj, 50, seed).history)
        wins += tpe <= random_search_best(obj, SPACE, 50, seed)
    elapsed = time.perf_counter() - t0
    request.node.acceptance_detail = f"TPE wins or ties {wins}/20, {elapsed:.1f}s"
    assert wins >= 10
    assert elapsed < 60


@acceptance(8, "DEWSP(N0) equals EWWP bit-exactly; top-N nested in top-(N+1) on 1000 forecasts")
def test_c08_structural_identity(request):
    rng = np.random.default_rng(3)
    for _ in range(1000):
        n0 = int(rng.integers(2, 31))
        mu = rng.normal(0, 0.02, n0)
        if rng.random() < 0.3:
            mu = np.round(mu, 2)  # force ties
        order = rank_assets(ReturnForecast(None, mu))
        assert np.array_equal(subset_equal_weights(order, n0, n0).w, equal_whole(n0).w)
        prev = set()
        for n in range(1, n0 + 1):
            cur = set(np.flatnonzero(subset_equal_weights(order, n, n0).w))
            assert prev < cur
            prev = cur
    request.node.acceptance_detail = "1000 forecasts"


@acceptance(9, "5-seed synthetic pipeline: APC_r>0, APC_sigma>0, median ASRIR vs HEWSP-TV>0")
def test_c09_end_to_end(request, tmp_path):
    t0 = time.perf_counter()
    rows = []
    for seed in range(5):
        cfg = RunConfig(seed=seed, synth_seed=seed, write_weights=False)
        res = run_pipeline(cfg, tmp_path / f"seed{seed}", plot=False)
        for period, rep in res.reports.items():
            rows.append((seed, period, rep.apc_r, rep.apc_sigma, rep.asrir["HEWSP-TV"]))
    elapsed = time.perf_counter() - t0
    med = {p: float(np.median([r[4] for r in rows if r[1] == p])) for p in ("IS", "OOS")}
    request.node.acceptance_detail = (
        f"min APC_r {min(r[2] for r in rows):.2f}%, min APC_sigma {min(r[3] for r in rows):.2f}%, "
        f"median ASRIR IS {med['IS']:.1f}% OOS {med['OOS']:.1f}%, {elapsed:.0f}s")
    for seed, period, apc_r, apc_s, _ in rows:
        assert apc_r > 0, (seed, period)
        assert apc_s > 0, (seed, period)
    assert med["IS"] > 0 and med["OOS"] > 0
    assert elapsed < 600


def _weights(universe, bounds, models, cfg, t, fm=None):
    ctx = build_context(universe, bounds, models, cfg, [t], fm)
    out = {}
    for fam in cfg.families:
        sizes = range(1, universe.n_assets + 1) if fam in SUBSET_FAMILIES else [None]
        for n in sizes:
            out[fam, n] = Strategy(fam, n, ctx).weights_at(t).w
    return out


@acceptance(10, "weights at month t are reproduced bit-exactly from data truncated after t+1")
def test_c10_no_look_ahead(request, tmp_path):
    from dewsp.market_data import split
    from dewsp.pipeline import decision_windows, load_universe, split_plan

    checked = 0
    for covariance in ("static", "expanding"):
        cfg = RunConfig(hpo_evals=3, max_epochs=5, covariance=covariance, seed=4, synth_seed=4)
        uni = load_universe(cfg)
        bounds = split(uni, split_plan(cfg))
        lead = warmup(cfg.signal_specs)
        fm = build_features(uni, cfg.signal_specs)
        models, _ = fit_models(fm, bounds, lead, cfg)
        windows = decision_windows(bounds, lead, uni.n_months)

        # retraining on data that ends with the validation window gives the same network
        cut = uni.truncate(bounds.validation.stop)
        refit, _ = fit_models(build_features(cut, cfg.signal_specs), bounds, lead, cfg)
        assert refit["*"].equals(models["*"])

        # OOS months: every family. In-sample months: families whose inputs are causal
        # (in-sample means and the static in-sample covariance are fitted on the whole IS window).
        months = list(windows["OOS"]) if covariance == "static" else list(windows["OOS"])[::5]
        causal_is = ["DEWSP", "REWSP", "EWWP"] + (["MSRP", "MVP"] if covariance == "expanding" else [])
        for t in months + list(windows["IS"])[::7]:
            is_month = t < windows["OOS"].start
            fams = causal_is if is_month else cfg.families
            sub = RunConfig(**{**cfg.__dict__, "families": fams})
            full = _weights(uni, bounds, models, sub, t, fm)
            trunc = _weights(uni.truncate(t + 2), bounds, models, sub, t)
            for key, w in full.items():
                assert np.array_equal(w, trunc[key]), (covariance, t, key)
                checked += 1
    request.node.acceptance_detail = f"{checked} weight vectors compared"


def _dewsp_cmd():
    exe = shutil.which("dewsp")
    return [exe] if exe else [sys.executable, "-m", "dewsp.cli"]


@acceptance(11, "two dewsp runs from the same manifest give byte-identical summary CSVs")
def test_c11_replay_determinism(request, tmp_path):
    cfg = tmp_path / "replay.toml"
    cfg.write_text("hpo_evals = 5\nmax_epochs = 20\nseed = 2\nsynth_seed = 2\n")
    first = tmp_path / "first"
    subprocess.run([*_dewsp_cmd(), "run", "--config", str(cfg), "--out", str(first),
                    "--no-plot"], check=True, capture_output=True)
    outs = []
    for name in ("replay_a", "replay_b"):
        out = tmp_path / name
        subprocess.run([*_dewsp_cmd(), "run", "--manifest", str(first / "manifest.json"),
                        "--out", str(out), "--no-plot"], check=True, capture_output=True)
        outs.append(out)
    same = 0
    for period in ("is", "oos"):
        for name in ("summary.csv", "returns.csv"):
            blobs = [(d / period / name).read_bytes() for d in (first, *outs)]
            assert blobs[0] == blobs[1] == blobs[2], (period, name)
            same += 1
    request.node.acceptance_detail = f"{same} files identical across 3 runs"
