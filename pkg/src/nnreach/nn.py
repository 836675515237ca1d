"""ReLU MLP dynamics ``f``, the discrete-time NNDM wrapper, fitting and model files."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .numerics import DimensionError

log = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "id")


class ModelFormatError(ValueError):
    """A model file or layer list is malformed."""


class TrainingDiverged(FloatingPointError):
    """Loss became non-finite during fitting."""


@dataclass(frozen=True, eq=False)
class Layer:
    W: np.ndarray
    b: np.ndarray
    act: str = "relu"

    def __post_init__(self):
        W = np.ascontiguousarray(np.atleast_2d(np.array(self.W, dtype=float)))
        b = np.ascontiguousarray(np.atleast_1d(np.array(self.b, dtype=float)))
        if W.ndim != 2 or b.ndim != 1 or W.shape[0] != b.shape[0]:
            raise ModelFormatError(f"layer weight {W.shape} and bias {b.shape} disagree")
        if self.act not in ACTIVATIONS:
            raise ModelFormatError(f"unknown activation {self.act!r}")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise ModelFormatError("layer parameters must be finite")
        W.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)


@dataclass(frozen=True, eq=False)
class MlpModel:
    """Feedforward network: ReLU after every hidden layer, identity output."""

    layers: tuple[Layer, ...]
    weights: tuple[np.ndarray, ...] = field(init=False, repr=False)
    biases: tuple[np.ndarray, ...] = field(init=False, repr=False)

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ModelFormatError("model needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.W.shape[1] != prev.W.shape[0]:
                raise ModelFormatError(
                    f"layer dims do not chain: {prev.W.shape[1]}->{prev.W.shape[0]} "
                    f"then {nxt.W.shape[1]}->{nxt.W.shape[0]}")
        if layers[-1].act != "id":
            raise ModelFormatError("final layer must have identity activation")
        if any(layer.act != "relu" for layer in layers[:-1]):
            raise ModelFormatError("hidden layers must use ReLU")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "weights", tuple(layer.W for layer in layers))
        object.__setattr__(self, "biases", tuple(layer.b for layer in layers))

    @classmethod
    def from_arrays(cls, weights, biases) -> MlpModel:
        n = len(weights)
        return cls(tuple(Layer(W, b, "id" if i == n - 1 else "relu")
                         for i, (W, b) in enumerate(zip(weights, biases))))

    @property
    def input_dim(self) -> int:
        return self.layers[0].W.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].W.shape[0]

    def __call__(self, z):
        return forward(self, z)


@dataclass(frozen=True, eq=False)
class Nndm:
    """``x_{k+1} = x_k + f(x_k, u_k + w_k) * dt``."""

    model: MlpModel
    dt: float
    m_x: int
    m_u: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.model.input_dim != self.m_x + self.m_u:
            raise DimensionError(
                f"model input dim {self.model.input_dim} != m_x + m_u = {self.m_x + self.m_u}")
        if self.model.output_dim != self.m_x:
            raise DimensionError(f"model output dim {self.model.output_dim} != m_x = {self.m_x}")


def forward(model: MlpModel, z0) -> np.ndarray:
    z0 = np.asarray(z0, dtype=float)
    if z0.shape != (model.input_dim,):
        raise DimensionError(f"input of shape {z0.shape}, model expects ({model.input_dim},)")
    return kernels.mlp_forward(model.weights, model.biases, z0)


def forward_batch(model: MlpModel, Z) -> np.ndarray:
    """Evaluate rows of ``Z`` (n, input_dim) at once."""
    h = np.asarray(Z, dtype=float)
    for i, layer in enumerate(model.layers):
        h = h @ layer.W.T + layer.b
        if layer.act == "relu":
            h = np.maximum(h, 0.0)
    return h


def nndm_step(nndm: Nndm, x, u, w=None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    w = np.zeros(nndm.m_u) if w is None else np.asarray(w, dtype=float)
    if x.shape != (nndm.m_x,) or u.shape != (nndm.m_u,) or w.shape != (nndm.m_u,):
        raise DimensionError(f"step with x{x.shape} u{u.shape} w{w.shape}")
    return x + forward(nndm.model, np.concatenate([x, u + w])) * nndm.dt


def nndm_step_batch(nndm: Nndm, X, U) -> np.ndarray:
    """Vectorised step for rows of states ``X`` and (disturbed) inputs ``U``."""
    X = np.asarray(X, dtype=float)
    return X + forward_batch(nndm.model, np.hstack([X, U])) * nndm.dt


def model_jacobian(model: MlpModel, z0) -> np.ndarray:
    """``df/dz`` at ``z0`` via the active ReLU pattern (subgradient 0 at kinks)."""
    h = np.asarray(z0, dtype=float)
    J = np.eye(model.input_dim)
    for layer in model.layers:
        pre = layer.W @ h + layer.b
        J = layer.W @ J
        if layer.act == "relu":
            active = pre > 0.0
            h = np.where(active, pre, 0.0)
            J = J * active[:, None]
        else:
            h = pre
    return J


def jacobians(nndm: Nndm, x, u) -> tuple[np.ndarray, np.ndarray]:
    """Discrete-time ``A = I + dt df/dx`` and ``B = dt df/du`` at ``(x, u)``."""
    z = np.concatenate([np.asarray(x, dtype=float), np.asarray(u, dtype=float)])
    J = model_jacobian(nndm.model, z)
    A = np.eye(nndm.m_x) + nndm.dt * J[:, :nndm.m_x]
    B = nndm.dt * J[:, nndm.m_x:]
    return A, B


# ---------------------------------------------------------------- fitting


@dataclass
class FitConfig:
    lower: Sequence[float]
    upper: Sequence[float]
    samples: int = 50_000
    hidden: tuple[int, ...] = (32, 32)
    epochs: int = 300
    lr: float = 3e-3
    lr_final: float = 1e-5
    batch_size: int = 256
    holdout: float = 0.1
    seed: int = 0


@dataclass
class FitResult:
    model: MlpModel
    train_mse: float
    holdout_mse: float
    history: list[float]


def _init_params(sizes, rng):
    params = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        if i == len(sizes) - 2:
            # zero output layer: a constant target is fit exactly from the start
            W = np.zeros((fan_out, fan_in))
        else:
            W = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
        params.append([W, np.zeros(fan_out)])
    return params


def _loss_and_grads(params, X, Y):
    acts = [X]
    h = X
    n = len(params)
    for i, (W, b) in enumerate(params):
        h = h @ W.T + b
        if i < n - 1:
            h = np.maximum(h, 0.0)
        acts.append(h)
    err = h - Y
    loss = float(np.mean(err * err))
    delta = 2.0 * err / err.size
    grads = [None] * n
    for i in range(n - 1, -1, -1):
        grads[i] = [delta.T @ acts[i], delta.sum(axis=0)]
        if i > 0:
            delta = (delta @ params[i][0]) * (acts[i] > 0.0)
    return loss, grads


def _mse(params, X, Y):
    h = X
    for i, (W, b) in enumerate(params):
        h = h @ W.T + b
        if i < len(params) - 1:
            h = np.maximum(h, 0.0)
    return float(np.mean((h - Y) ** 2))


def fit(teacher: Callable[[np.ndarray, np.ndarray], np.ndarray], m_x: int,
        config: FitConfig) -> FitResult:
    """Fit a ReLU MLP to ``teacher(x, u) -> xdot`` by mini-batch Adam on MSE.

    Inputs and targets are standardised during training and the scaling is
    folded back into the first and last layers, so the returned model works
    in physical units. Reported MSEs are in standardised target units.
    """
    rng = np.random.default_rng(config.seed)
    lower = np.asarray(config.lower, dtype=float)
    upper = np.asarray(config.upper, dtype=float)
    Z = rng.uniform(lower, upper, size=(config.samples, lower.shape[0]))
    Y = np.asarray(teacher(Z[:, :m_x], Z[:, m_x:]), dtype=float)

    mu_in, sd_in = Z.mean(axis=0), Z.std(axis=0)
    sd_in = np.where(sd_in > 1e-12, sd_in, 1.0)
    mu_out, sd_out = Y.mean(axis=0), Y.std(axis=0)
    sd_out = np.where(sd_out > 1e-12, sd_out, 1.0)
    Zs = (Z - mu_in) / sd_in
    Ys = (Y - mu_out) / sd_out

    n_hold = int(round(config.holdout * config.samples))
    Xtr, Ytr = Zs[n_hold:], Ys[n_hold:]
    Xho, Yho = Zs[:n_hold], Ys[:n_hold]

    sizes = [Z.shape[1], *config.hidden, Y.shape[1]]
    params = _init_params(sizes, rng)
    m = [[np.zeros_like(p) for p in layer] for layer in params]
    v = [[np.zeros_like(p) for p in layer] for layer in params]
    beta1, beta2, eps_adam = 0.9, 0.999, 1e-8

    n_train = Xtr.shape[0]
    steps_per_epoch = max(1, math.ceil(n_train / config.batch_size))
    total = config.epochs * steps_per_epoch
    decay = (config.lr_final / config.lr) ** (1.0 / max(total - 1, 1))
    t = 0
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(n_train)
        for s in range(steps_per_epoch):
            idx = order[s * config.batch_size:(s + 1) * config.batch_size]
            loss, grads = _loss_and_grads(params, Xtr[idx], Ytr[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, step {s}, lr {config.lr * decay ** t:.3g}")
            t += 1
            lr = config.lr * decay ** (t - 1)
            for layer, g_layer, m_layer, v_layer in zip(params, grads, m, v):
                for j in range(2):
                    m_layer[j] = beta1 * m_layer[j] + (1 - beta1) * g_layer[j]
                    v_layer[j] = beta2 * v_layer[j] + (1 - beta2) * g_layer[j] ** 2
                    mhat = m_layer[j] / (1 - beta1 ** t)
                    vhat = v_layer[j] / (1 - beta2 ** t)
                    layer[j] = layer[j] - lr * mhat / (np.sqrt(vhat) + eps_adam)
        history.append(loss)
        if epoch % 50 == 0:
            log.debug("epoch %d loss %.3e", epoch, loss)

    train_mse = _mse(params, Xtr, Ytr)
    holdout_mse = _mse(params, Xho, Yho) if n_hold else train_mse

    # fold the standardisation into the first and last affine maps
    W0, b0 = params[0]
    W0f = W0 / sd_in
    b0f = b0 - W0f @ mu_in
    params[0] = [W0f, b0f]
    Wl, bl = params[-1]
    params[-1] = [Wl * sd_out[:, None], bl * sd_out + mu_out]
    model = MlpModel.from_arrays([p[0] for p in params], [p[1] for p in params])
    return FitResult(model, train_mse, holdout_mse, history)


# ------------------------------------------------------------------ files


def nndm_to_dict(nndm: Nndm) -> dict:
    return {
        "dt": nndm.dt,
        "m_x": nndm.m_x,
        "m_u": nndm.m_u,
        "layers": [{"W": layer.W.tolist(), "b": layer.b.tolist(), "act": layer.act}
                   for layer in nndm.model.layers],
    }


def save_model(nndm: Nndm, path) -> None:
    Path(path).write_text(json.dumps(nndm_to_dict(nndm)), encoding="utf-8")


def nndm_from_dict(doc) -> Nndm:
    try:
        layers = tuple(Layer(entry["W"], entry["b"], entry["act"]) for entry in doc["layers"])
        dt, m_x, m_u = float(doc["dt"]), int(doc["m_x"]), int(doc["m_u"])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model document: {exc!r}") from exc
    try:
        return Nndm(MlpModel(layers), dt, m_x, m_u)
    except DimensionError as exc:
        raise ModelFormatError(str(exc)) from exc


def load_nndm(path) -> Nndm:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not valid JSON ({exc})") from exc
    return nndm_from_dict(doc)


def load_model(path) -> MlpModel:
    return load_nndm(path).model


def linear_model(Wx, Wu, b=None) -> MlpModel:
    """Single affine layer ``f(x, u) = Wx x + Wu u + b``; handy for exact checks."""
    W = np.hstack([np.atleast_2d(Wx), np.atleast_2d(Wu)])
    b = np.zeros(W.shape[0]) if b is None else b
    return MlpModel((Layer(W, b, "id"),))
