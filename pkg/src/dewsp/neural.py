"""Feed-forward regression network written directly in numpy.

Hidden layers are ``affine -> batch norm -> activation -> dropout``; the
output is a single linear unit. When batch norm is on, hidden affine maps
carry no bias because the batch-norm shift already plays that role.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyDataset, NonFiniteLoss, ShapeMismatch, ValidationError

SPACE: dict[str, tuple] = {
    "n_hidden_layers": (2, 3),
    "n_hidden_units": (2, 4, 8, 16),
    "init_std": (0.025, 0.05, 0.075),
    "dropout_rate": (0.25, 0.5, 0.75),
    "batch_size": (28, 64, 128),
    "optimizer": ("rmsprop", "adam", "sgd"),
    "hidden_activation": ("tanh", "relu", "sigmoid"),
}

BN_EPS = 1e-8
BN_MOMENTUM = 0.9
RMSPROP_DECAY = 0.9
ADAM_BETA1, ADAM_BETA2 = 0.9, 0.999
OPT_EPS = 1e-8


@dataclass(frozen=True)
class Hyperparameters:
    n_hidden_layers: int = 2
    n_hidden_units: int = 8
    init_std: float = 0.05
    dropout_rate: float = 0.25
    batch_size: int = 64
    optimizer: str = "adam"
    hidden_activation: str = "tanh"
    learning_rate: float = 0.001
    max_epochs: int = 100
    patience: int = 10

    def __post_init__(self):
        for name, choices in SPACE.items():
            if getattr(self, name) not in choices:
                raise ValidationError(f"{name}={getattr(self, name)!r} not in {choices}")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")
        if self.max_epochs < 1 or self.patience < 1:
            raise ValidationError("max_epochs and patience must be >= 1")

    def as_dict(self) -> dict:
        return asdict(self)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


ACTIVATIONS = {
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0).astype(float)),
    "sigmoid": (_sigmoid, lambda z, a: a * (1.0 - a)),
    "identity": (lambda z: z, lambda z, a: np.ones_like(z)),
}


@dataclass(eq=False)
class Model:
    """Network parameters plus batch-norm running statistics.

    ``params`` keys: ``W{i}``, ``b{i}`` (hidden bias, only without batch
    norm), ``gamma{i}``, ``beta{i}`` and ``W_out``, ``b_out``.
    """

    sizes: tuple[int, ...]
    activation: str
    dropout_rate: float
    batch_norm: bool
    params: dict[str, np.ndarray]
    running_mean: list[np.ndarray]
    running_var: list[np.ndarray]
    seed: int = 0
    hp: Hyperparameters | None = None
    best_validation_mse: float = math.inf

    @property
    def n_inputs(self) -> int:
        return self.sizes[0]

    @property
    def n_hidden(self) -> int:
        return len(self.sizes) - 2

    def copy(self) -> "Model":
        return copy.deepcopy(self)

    def equals(self, other: "Model") -> bool:
        return (
            self.sizes == other.sizes
            and self.activation == other.activation
            and self.dropout_rate == other.dropout_rate
            and self.batch_norm == other.batch_norm
            and self.params.keys() == other.params.keys()
            and all(np.array_equal(v, other.params[k]) for k, v in self.params.items())
            and all(np.array_equal(a, b) for a, b in zip(self.running_mean, other.running_mean))
            and all(np.array_equal(a, b) for a, b in zip(self.running_var, other.running_var))
            and self.seed == other.seed
            and self.hp == other.hp
        )


def build_model(
    sizes: Sequence[int],
    activation: str = "tanh",
    dropout_rate: float = 0.0,
    batch_norm: bool = True,
    init_std: float = 0.05,
    seed: int = 0,
    hp: Hyperparameters | None = None,
) -> Model:
    """Network with ``sizes = (inputs, hidden..., 1)``; weights ~ N(0, init_std^2), biases 0."""
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) < 2 or sizes[-1] != 1 or min(sizes) < 1:
        raise ValidationError(f"bad layer sizes {sizes}")
    if activation not in ACTIVATIONS:
        raise ValidationError(f"unknown activation {activation!r}")
    if not 0 <= dropout_rate < 1:
        raise ValidationError("dropout_rate must be in [0, 1)")
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    rm, rv = [], []
    for i, (a, b) in enumerate(zip(sizes[:-2], sizes[1:-1])):
        params[f"W{i}"] = rng.normal(0.0, init_std, (a, b)) if init_std > 0 else np.zeros((a, b))
        if batch_norm:
            params[f"gamma{i}"] = np.ones(b)
            params[f"beta{i}"] = np.zeros(b)
        else:
            params[f"b{i}"] = np.zeros(b)
        rm.append(np.zeros(b))
        rv.append(np.ones(b))
    shape = (sizes[-2], 1)
    params["W_out"] = rng.normal(0.0, init_std, shape) if init_std > 0 else np.zeros(shape)
    params["b_out"] = np.zeros(1)
    return Model(sizes, activation, float(dropout_rate), batch_norm, params, rm, rv,
                 seed=int(seed), hp=hp)


def init_model(
    hp: Hyperparameters,
    n_inputs: int,
    seed: int,
    init_std: float | None = None,
) -> Model:
    if n_inputs < 1:
        raise ValidationError("n_inputs must be >= 1")
    sizes = (n_inputs, *([hp.n_hidden_units] * hp.n_hidden_layers), 1)
    std = hp.init_std if init_std is None else init_std
    return build_model(sizes, hp.hidden_activation, hp.dropout_rate, True, std, seed, hp)


def _check_input(model: Model, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] != model.n_inputs:
        raise ShapeMismatch(f"expected (rows>0, {model.n_inputs}) input, got {X.shape}")
    return X


def forward(model: Model, X, mode: str = "infer", rng: np.random.Generator | None = None,
            cache: list | None = None) -> np.ndarray:
    """Predictions, one per row.

    ``mode``: ``train`` (batch statistics, dropout, running-stat update),
    ``infer`` (running statistics, no dropout) or ``batch`` (batch statistics,
    no dropout, no state change; deterministic, used for gradient checks).
    """
    if mode not in ("train", "infer", "batch"):
        raise ValidationError(f"unknown mode {mode!r}")
    X = _check_input(model, X)
    act, _ = ACTIVATIONS[model.activation]
    p = model.params
    h = X
    for i in range(model.n_hidden):
        z = h @ p[f"W{i}"]
        layer = {"h_in": h, "z": z}
        if model.batch_norm:
            if mode == "infer":
                mu, var = model.running_mean[i], model.running_var[i]
            else:
                mu, var = z.mean(axis=0), z.var(axis=0)
                if mode == "train":
                    model.running_mean[i] = BN_MOMENTUM * model.running_mean[i] + (1 - BN_MOMENTUM) * mu
                    model.running_var[i] = BN_MOMENTUM * model.running_var[i] + (1 - BN_MOMENTUM) * var
            inv_std = 1.0 / np.sqrt(var + BN_EPS)
            xhat = (z - mu) * inv_std
            u = p[f"gamma{i}"] * xhat + p[f"beta{i}"]
            layer.update(xhat=xhat, inv_std=inv_std, fixed_stats=mode == "infer")
        else:
            u = z + p[f"b{i}"]
        a = act(u)
        layer.update(u=u, a=a)
        if mode == "train" and model.dropout_rate > 0:
            if rng is None:
                raise ValidationError("train mode needs a random generator for dropout")
            keep = 1.0 - model.dropout_rate
            mask = (rng.random(a.shape) < keep) / keep
            layer["mask"] = mask
            a = a * mask
        h = a
        if cache is not None:
            cache.append(layer)
    out = h @ p["W_out"] + p["b_out"]
    if cache is not None:
        cache.append({"h_in": h})
    return out[:, 0]


def backward(model: Model, cache: list, dy: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a loss whose derivative w.r.t. the predictions is ``dy``.

    In ``infer`` mode batch norm is a fixed affine map of its input.
    """
    _, dact = ACTIVATIONS[model.activation]
    p = model.params
    grads: dict[str, np.ndarray] = {}
    dout = dy[:, None]
    h_last = cache[-1]["h_in"]
    grads["W_out"] = h_last.T @ dout
    grads["b_out"] = dout.sum(axis=0)
    dh = dout @ p["W_out"].T
    for i in reversed(range(model.n_hidden)):
        layer = cache[i]
        if "mask" in layer:
            dh = dh * layer["mask"]
        du = dh * dact(layer["u"], layer["a"])
        if model.batch_norm:
            xhat, inv_std = layer["xhat"], layer["inv_std"]
            grads[f"gamma{i}"] = (du * xhat).sum(axis=0)
            grads[f"beta{i}"] = du.sum(axis=0)
            dxhat = du * p[f"gamma{i}"]
            if layer["fixed_stats"]:
                dz = dxhat * inv_std
            else:
                n = dxhat.shape[0]
                dz = (inv_std / n) * (
                    n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
                )
        else:
            grads[f"b{i}"] = du.sum(axis=0)
            dz = du
        grads[f"W{i}"] = layer["h_in"].T @ dz
        dh = dz @ p[f"W{i}"].T
    return grads


def mse_loss_and_grads(model: Model, X, y, mode: str = "batch",
                       rng: np.random.Generator | None = None):
    cache: list = []
    pred = forward(model, X, mode, rng, cache)
    err = pred - np.asarray(y, dtype=float)
    loss = float(np.mean(err * err))
    grads = backward(model, cache, 2.0 * err / len(err))
    return loss, grads


def mse(model: Model, X, y) -> float:
    err = forward(model, X, "infer") - np.asarray(y, dtype=float)
    return float(np.mean(err * err))


def gradient_check(model: Model, X, y, epsilon: float = 1e-5, floor: float = 1e-8,
                   mode: str = "batch") -> float:
    """Largest relative gap between backprop and central-difference gradients.

    Dropout is off in both allowed modes: ``batch`` differentiates through the
    batch statistics, ``infer`` uses the stored running statistics. Only
    meaningful for smooth activations (tanh, sigmoid).
    """
    if mode not in ("batch", "infer"):
        raise ValidationError("gradient checks run in batch or infer mode")
    model = model.copy()
    _, grads = mse_loss_and_grads(model, X, y, mode)
    worst = 0.0
    for key, theta in model.params.items():
        g = grads[key]
        flat = theta.reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + epsilon
            fp = mse_loss_and_grads(model, X, y, mode)[0]
            flat[j] = old - epsilon
            fm = mse_loss_and_grads(model, X, y, mode)[0]
            flat[j] = old
            num = (fp - fm) / (2 * epsilon)
            ana = g.reshape(-1)[j]
            rel = abs(ana - num) / max(abs(ana), abs(num), floor)
            worst = max(worst, rel)
    return worst


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params, grads):
        for k, g in grads.items():
            params[k] -= self.lr * g


class RMSProp:
    def __init__(self, lr: float, decay: float = RMSPROP_DECAY, eps: float = OPT_EPS):
        self.lr, self.decay, self.eps = lr, decay, eps
        self.sq: dict[str, np.ndarray] = {}

    def step(self, params, grads):
        for k, g in grads.items():
            s = self.sq.get(k)
            s = (1 - self.decay) * g * g if s is None else self.decay * s + (1 - self.decay) * g * g
            self.sq[k] = s
            params[k] -= self.lr * g / (np.sqrt(s) + self.eps)


class Adam:
    def __init__(self, lr: float, beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2,
                 eps: float = OPT_EPS):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, g in grads.items():
            m = self.b1 * self.m.get(k, 0.0) + (1 - self.b1) * g
            v = self.b2 * self.v.get(k, 0.0) + (1 - self.b2) * g * g
            self.m[k], self.v[k] = m, v
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


OPTIMIZERS = {"sgd": SGD, "rmsprop": RMSProp, "adam": Adam}


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    initial_val_mse: float = math.nan
    best_epoch: int = 0
    stopping_epoch: int = 0
    stopping_reason: str = "max_epochs"

    @property
    def best_val_mse(self) -> float:
        return min([self.initial_val_mse, *self.val_mse])


def _arrays(ds):
    if hasattr(ds, "labelled"):
        ds = ds.labelled()
        return np.asarray(ds.X, dtype=float), np.asarray(ds.target, dtype=float)
    X, y = ds
    return np.asarray(X, dtype=float), np.asarray(y, dtype=float)


def train(
    model: Model,
    train_set,
    val_set,
    hp: Hyperparameters | None = None,
) -> tuple[Model, TrainReport]:
    """Mini-batch MSE training with early stopping on validation MSE.

    The returned model holds the weights of the epoch with the lowest
    validation MSE (epoch 0 being the initial weights). Datasets are
    ``FeatureMatrix`` objects or ``(X, y)`` pairs.
    """
    hp = hp or model.hp
    if hp is None:
        raise ValidationError("training needs hyperparameters")
    X, y = _arrays(train_set)
    Xv, yv = _arrays(val_set)
    if len(y) == 0 or len(yv) == 0:
        raise EmptyDataset("training and validation sets must be non-empty")
    if X.shape[1] != model.n_inputs or Xv.shape[1] != model.n_inputs:
        raise ShapeMismatch("feature width does not match the model")

    model = model.copy()
    rng = np.random.default_rng(np.random.SeedSequence([model.seed, 1]))
    opt = OPTIMIZERS[hp.optimizer](hp.learning_rate)
    report = TrainReport()

    def snapshot():
        return ({k: v.copy() for k, v in model.params.items()},
                [a.copy() for a in model.running_mean], [a.copy() for a in model.running_var])

    best_val = mse(model, Xv, yv)
    report.initial_val_mse = best_val
    best_state = snapshot()
    wait = 0
    n = len(y)
    for epoch in range(1, hp.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, hp.batch_size):
            idx = order[start : start + hp.batch_size]
            loss, grads = mse_loss_and_grads(model, X[idx], y[idx], "train", rng)
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"training loss diverged at epoch {epoch}")
            opt.step(model.params, grads)
            total += loss * len(idx)
        val = mse(model, Xv, yv)
        if not math.isfinite(val):
            raise NonFiniteLoss(f"validation loss diverged at epoch {epoch}")
        report.train_loss.append(total / n)
        report.val_mse.append(val)
        report.stopping_epoch = epoch
        if val < best_val:
            best_val, report.best_epoch, wait = val, epoch, 0
            best_state = snapshot()
        else:
            wait += 1
            if wait >= hp.patience:
                report.stopping_reason = "early_stop"
                break
    model.params, model.running_mean, model.running_var = best_state
    model.best_validation_mse = best_val
    model.hp = hp
    return model, report


def predict(model: Model, X) -> np.ndarray:
    """Deterministic forecasts (running statistics, no dropout)."""
    return forward(model, X, "infer")


FORMAT_VERSION = 1


def save_model(model: Model, path: str | Path) -> None:
    meta = {
        "format_version": FORMAT_VERSION,
        "sizes": list(model.sizes),
        "activation": model.activation,
        "dropout_rate": model.dropout_rate,
        "batch_norm": model.batch_norm,
        "seed": model.seed,
        "hp": model.hp.as_dict() if model.hp else None,
        "best_validation_mse": model.best_validation_mse,
        "params": sorted(model.params),
    }
    arrays = {f"param__{k}": v for k, v in model.params.items()}
    arrays.update({f"rmean__{i}": a for i, a in enumerate(model.running_mean)})
    arrays.update({f"rvar__{i}": a for i, a in enumerate(model.running_var)})
    with Path(path).open("wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_model(path: str | Path) -> Model:
    with np.load(Path(path), allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta["format_version"] != FORMAT_VERSION:
            raise ValidationError(f"unsupported model format {meta['format_version']}")
        n_hidden = len(meta["sizes"]) - 2
        return Model(
            sizes=tuple(meta["sizes"]),
            activation=meta["activation"],
            dropout_rate=meta["dropout_rate"],
            batch_norm=meta["batch_norm"],
            params={k: z[f"param__{k}"] for k in meta["params"]},
            running_mean=[z[f"rmean__{i}"] for i in range(n_hidden)],
            running_var=[z[f"rvar__{i}"] for i in range(n_hidden)],
            seed=meta["seed"],
            hp=Hyperparameters(**meta["hp"]) if meta["hp"] else None,
            best_validation_mse=meta["best_validation_mse"],
        )
