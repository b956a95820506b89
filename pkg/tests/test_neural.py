import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dewsp.errors import EmptyDataset, NonFiniteLoss, ShapeMismatch, ValidationError
from dewsp.neural import (
    SPACE,
    Hyperparameters,
    build_model,
    forward,
    gradient_check,
    init_model,
    load_model,
    mse,
    predict,
    save_model,
    train,
)


def binary_inputs(n, k, seed=0):
    return np.random.default_rng(seed).choice([-1.0, 1.0], size=(n, k))


def test_hyperparameter_ranges():
    with pytest.raises(ValidationError):
        Hyperparameters(n_hidden_units=5)
    with pytest.raises(ValidationError):
        Hyperparameters(optimizer="lbfgs")
    assert Hyperparameters().learning_rate == 0.001


def test_weight_shapes():
    m = init_model(Hyperparameters(n_hidden_layers=2, n_hidden_units=4), 17, seed=0)
    assert m.params["W0"].shape == (17, 4)
    assert m.params["W1"].shape == (4, 4)
    assert m.params["W_out"].shape == (4, 1)
    assert "b0" not in m.params  # batch-norm shift replaces the hidden bias


def test_init_deterministic_and_std():
    hp = Hyperparameters(n_hidden_units=16, init_std=0.075)
    a, b = init_model(hp, 17, 3), init_model(hp, 17, 3)
    assert a.equals(b)
    assert not a.equals(init_model(hp, 17, 4))
    w = np.concatenate([a.params[k].ravel() for k in ("W0", "W1")])
    assert abs(w.std() - 0.075) < 0.01
    assert np.all(a.params["b_out"] == 0)


def test_zero_network_predicts_zero():
    m = init_model(Hyperparameters(), 17, 0, init_std=0.0)
    X = binary_inputs(9, 17)
    assert np.all(predict(m, X) == 0)
    assert gradient_check(m, X, np.linspace(-1, 1, 9)) <= 1e-4


def test_single_unit_hand_value():
    m = build_model((2, 1, 1), "tanh", 0.0, batch_norm=False, init_std=0.0)
    m.params["W0"][:] = [[0.5], [-0.25]]
    m.params["b0"][:] = 0.1
    m.params["W_out"][:] = 2.0
    m.params["b_out"][:] = -0.3
    x = np.array([[1.0, 2.0], [-1.0, 1.0]])
    expected = [math.tanh(0.5 - 0.5 + 0.1) * 2 - 0.3, math.tanh(-0.5 - 0.25 + 0.1) * 2 - 0.3]
    assert predict(m, x) == pytest.approx(expected, abs=1e-15)


def test_infer_deterministic_and_shape():
    m = init_model(Hyperparameters(), 17, 1)
    X = binary_inputs(22, 17)
    a, b = predict(m, X), predict(m, X)
    assert a.shape == (22,) and np.array_equal(a, b)
    dup = predict(m, np.vstack([X[:1], X[:1]]))
    assert dup[0] == dup[1]
    with pytest.raises(ShapeMismatch):
        predict(m, np.zeros((0, 17)))
    with pytest.raises(ShapeMismatch):
        predict(m, np.zeros((3, 16)))


@pytest.mark.parametrize("act", ["tanh", "sigmoid"])
@pytest.mark.parametrize("layers,units", list(itertools.product((2, 3), (2, 4, 8, 16))))
@pytest.mark.parametrize("mode", ["batch", "infer"])
def test_gradient_check_architectures(act, layers, units, mode):
    hp = Hyperparameters(n_hidden_layers=layers, n_hidden_units=units, hidden_activation=act,
                         init_std=0.075)
    m = init_model(hp, 17, seed=layers * 100 + units, init_std=0.5)
    rng = np.random.default_rng(units)
    for i in range(m.n_hidden):  # move off the identity statistics and unit scales
        m.running_mean[i] = rng.normal(0, 0.3, units)
        m.running_var[i] = rng.uniform(0.5, 2.0, units)
        m.params[f"gamma{i}"] = rng.uniform(0.5, 1.5, units)
        m.params[f"beta{i}"] = rng.normal(0, 0.2, units)
    X = binary_inputs(12, 17, seed=units)
    y = rng.normal(0, 0.05, 12)
    assert gradient_check(m, X, y, epsilon=1e-5, mode=mode) <= 1e-4


def test_gradient_check_relu_kink_unsupported():
    # at a kink the one-sided derivatives differ; the check is expected to disagree
    m = build_model((1, 1, 1), "relu", 0.0, batch_norm=False, init_std=0.0)
    m.params["W0"][:] = 1.0
    m.params["W_out"][:] = 1.0
    assert gradient_check(m, np.array([[0.0]]), np.array([1.0])) > 1e-2


def test_gradient_check_rejects_train_mode():
    m = init_model(Hyperparameters(), 3, 0)
    with pytest.raises(ValidationError):
        gradient_check(m, np.ones((4, 3)), np.zeros(4), mode="train")


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([2, 4, 8, 16]))
def test_batchnorm_train_statistics(seed, units):
    m = init_model(Hyperparameters(n_hidden_units=units), 17, seed, init_std=0.5)
    rng = np.random.default_rng(seed)
    for i in range(m.n_hidden):
        m.params[f"gamma{i}"] = rng.uniform(0.5, 2.0, units)
        m.params[f"beta{i}"] = rng.normal(0, 1, units)
    X = rng.normal(size=(64, 17))
    cache = []
    forward(m, X, "train", rng, cache)
    for i in range(m.n_hidden):
        u, z = cache[i]["u"], cache[i]["z"]
        live = z.var(axis=0) > 1e-3  # units with non-degenerate batch spread
        assert np.allclose(u.mean(axis=0), m.params[f"beta{i}"], atol=1e-6)
        assert np.allclose(u.var(axis=0)[live], m.params[f"gamma{i}"][live] ** 2, atol=1e-6)


@pytest.mark.parametrize("rate", [0.25, 0.5, 0.75])
def test_dropout_rate_chi_square(rate):
    m = init_model(Hyperparameters(n_hidden_units=16, dropout_rate=rate), 17, 0)
    rng = np.random.default_rng(1)
    dropped = total = 0
    for _ in range(200):
        cache = []
        forward(m, binary_inputs(64, 17, int(rng.integers(1 << 30))), "train", rng, cache)
        for layer in cache[:-1]:
            dropped += int((layer["mask"] == 0).sum())
            total += layer["mask"].size
    kept = total - dropped
    chi2 = (dropped - rate * total) ** 2 / (rate * total) + \
        (kept - (1 - rate) * total) ** 2 / ((1 - rate) * total)
    assert chi2 < 10.83  # df = 1, p = 0.001


def test_inverted_dropout_scaling():
    m = init_model(Hyperparameters(dropout_rate=0.5), 17, 0)
    cache = []
    forward(m, binary_inputs(32, 17), "train", np.random.default_rng(0), cache)
    assert set(np.unique(cache[0]["mask"])) <= {0.0, 2.0}


def _learnable(seed=0, n=600):
    X = binary_inputs(n, 17, seed)
    return X, 0.1 * X[:, 0]


def test_learnable_target():
    X, y = _learnable()
    hp = Hyperparameters(n_hidden_units=8, batch_size=28, optimizer="adam", max_epochs=60)
    model, rep = train(init_model(hp, 17, 0), (X[:400], y[:400]), (X[400:], y[400:]))
    baseline = float(np.mean((y[400:] - y[400:].mean()) ** 2))
    assert mse(model, X[400:], y[400:]) < baseline
    assert rep.stopping_epoch <= hp.max_epochs
    assert model.best_validation_mse == rep.best_val_mse


def test_zero_target_does_not_get_worse():
    X = binary_inputs(200, 17)
    y = np.zeros(200)
    hp = Hyperparameters(max_epochs=3)
    m0 = init_model(hp, 17, 5)
    model, rep = train(m0, (X[:150], y[:150]), (X[150:], y[150:]))
    assert mse(model, X[150:], y[150:]) <= mse(m0, X[150:], y[150:])


def test_adversarial_split_stops_early():
    X = binary_inputs(200, 17)
    hp = Hyperparameters(max_epochs=100, patience=10, optimizer="sgd")
    m0 = init_model(hp, 17, 0, init_std=0.0)
    _, rep = train(m0, (X, np.ones(200)), (X, -np.ones(200)))
    assert rep.stopping_reason == "early_stop"
    assert rep.stopping_epoch <= 1 + hp.patience
    assert rep.best_epoch == 0


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 1000), st.sampled_from(["sgd", "rmsprop", "adam"]), st.integers(1, 5))
def test_early_stopping_bounds(seed, opt, patience):
    X, y = _learnable(seed, 200)
    y = y + np.random.default_rng(seed).normal(0, 0.1, 200)
    hp = Hyperparameters(optimizer=opt, patience=patience, max_epochs=30, batch_size=128)
    _, rep = train(init_model(hp, 17, seed), (X[:120], y[:120]), (X[120:], y[120:]))
    assert rep.stopping_epoch <= min(hp.max_epochs, rep.best_epoch + patience)
    assert len(rep.val_mse) == rep.stopping_epoch
    if rep.stopping_reason == "early_stop":
        tail = rep.val_mse[rep.stopping_epoch - patience:]
        assert len(tail) == patience and min(tail) >= rep.best_val_mse


def test_training_deterministic():
    X, y = _learnable(3, 300)
    hp = Hyperparameters(max_epochs=5, dropout_rate=0.5)
    a, ra = train(init_model(hp, 17, 9), (X[:200], y[:200]), (X[200:], y[200:]))
    b, rb = train(init_model(hp, 17, 9), (X[:200], y[:200]), (X[200:], y[200:]))
    assert a.equals(b) and ra == rb


def test_train_errors():
    hp = Hyperparameters()
    m = init_model(hp, 17, 0)
    X = binary_inputs(10, 17)
    with pytest.raises(EmptyDataset):
        train(m, (X[:0], np.zeros(0)), (X, np.zeros(10)))
    with pytest.raises(ShapeMismatch):
        train(m, (X[:, :5], np.zeros(10)), (X, np.zeros(10)))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises_non_finite():
    X = binary_inputs(64, 17)
    m = build_model((17, 4, 4, 1), "relu", 0.0, batch_norm=False, init_std=5.0,
                    hp=Hyperparameters(optimizer="sgd", learning_rate=1e6, hidden_activation="relu"))
    with pytest.raises(NonFiniteLoss):
        train(m, (X, np.full(64, 1e150)), (X, np.zeros(64)))


def test_save_load_round_trip(tmp_path):
    X, y = _learnable(1, 200)
    hp = Hyperparameters(n_hidden_layers=3, max_epochs=3)
    model, _ = train(init_model(hp, 17, 2), (X[:150], y[:150]), (X[150:], y[150:]))
    save_model(model, tmp_path / "m.npz")
    back = load_model(tmp_path / "m.npz")
    assert back.equals(model) and back.hp == model.hp
    assert np.array_equal(predict(back, X), predict(model, X))


def test_space_matches_hyperparameters():
    for name, choices in SPACE.items():
        for c in choices:
            Hyperparameters(**{name: c})
