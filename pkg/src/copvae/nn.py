"""Dense feed-forward networks, Adam, early stopping and the training loop."""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from copvae.errors import (
    ArityError,
    ConfigurationError,
    FrozenModelError,
    NonFiniteError,
    TrainingError,
)
from copvae.mathcore import ad

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi


def scaled_sigmoid_2pi(x):
    return TWO_PI * ad.sigmoid(x)


ACTIVATIONS = {
    "relu": ad.relu,
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
    "scaled_sigmoid_2pi": scaled_sigmoid_2pi,
    "softplus": ad.softplus,
    "softmax": lambda x: ad.softmax(x, axis=-1),
    "linear": lambda x: x,
}

INITIALIZERS = ("glorot_uniform", "he_uniform")

# Hidden stacks of the two networks. Initializers follow the activation:
# He-uniform for ReLU layers, Glorot-uniform for tanh layers.
ENCODER_WIDTHS = (100, 250, 300, 300, 200, 150, 100)
ENCODER_ACTIVATIONS = ("relu", "relu", "tanh", "relu", "tanh", "relu", "tanh")
DECODER_WIDTHS = (10, 30, 50, 70, 80)
DECODER_ACTIVATIONS = ("tanh", "relu", "relu", "relu", "relu")


def default_init(activation):
    return "he_uniform" if activation == "relu" else "glorot_uniform"


@dataclass(frozen=True)
class LayerSpec:
    fan_in: int
    fan_out: int
    activation: str = "linear"
    init: str = "glorot_uniform"

    def __post_init__(self):
        if self.fan_in < 1 or self.fan_out < 1:
            raise ConfigurationError("layer widths must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation tag {self.activation!r}")
        if self.init not in INITIALIZERS:
            raise ConfigurationError(f"unknown initializer tag {self.init!r}")


def mlp_spec(n_in, hidden, activations, n_out, out_activation="linear", inits=None):
    """Layer specs for ``n_in -> hidden... -> n_out``."""
    if len(hidden) != len(activations):
        raise ConfigurationError("one activation per hidden layer")
    inits = inits or [default_init(a) for a in activations]
    widths = [n_in, *hidden]
    layers = [LayerSpec(a, b, act, ini)
              for a, b, act, ini in zip(widths[:-1], widths[1:], activations, inits)]
    layers.append(LayerSpec(widths[-1], n_out, out_activation, default_init(out_activation)))
    return tuple(layers)


def spec_hash(layers):
    blob = json.dumps([[l.fan_in, l.fan_out, l.activation, l.init] for l in layers])
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def init_bound(layer: LayerSpec):
    if layer.init == "he_uniform":
        return math.sqrt(6.0 / layer.fan_in)
    return math.sqrt(6.0 / (layer.fan_in + layer.fan_out))


class Mlp:
    """Stack of affine layers, each followed by its activation.

    ``params`` is a flat list ``[W_0, b_0, W_1, b_1, ...]`` with W of shape
    (fan_in, fan_out); inputs are row vectors.
    """

    def __init__(self, layers, params, frozen=False):
        self.layers = tuple(layers)
        for a, b in zip(self.layers[:-1], self.layers[1:]):
            if a.fan_out != b.fan_in:
                raise ConfigurationError("consecutive layer shapes are incompatible")
        if len(params) != 2 * len(self.layers):
            raise ConfigurationError("need one weight and one bias per layer")
        self._params = [np.array(p, dtype=float) for p in params]
        self.frozen = False
        if frozen:
            self.freeze()

    @property
    def params(self):
        return self._params

    @property
    def n_in(self):
        return self.layers[0].fan_in

    @property
    def n_out(self):
        return self.layers[-1].fan_out

    @property
    def n_params(self):
        return sum(p.size for p in self._params)

    @property
    def spec_hash(self):
        return spec_hash(self.layers)

    def freeze(self):
        self.frozen = True
        for p in self._params:
            p.setflags(write=False)
        return self

    def set_params(self, params):
        if self.frozen:
            raise FrozenModelError("the decoder is frozen; its parameters cannot change")
        self._params = [np.array(p, dtype=float) for p in params]

    def param_hash(self):
        h = hashlib.sha256()
        for p in self._params:
            h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
        return h.hexdigest()

    def copy(self):
        return Mlp(self.layers, [p.copy() for p in self._params], self.frozen)

    def __call__(self, x, params=None):
        return forward(self, x, params)

    # ------------------------------------------------------------ serialization

    def to_dict(self):
        return {
            "spec_hash": self.spec_hash,
            "frozen": self.frozen,
            "layers": [
                {
                    "fan_in": l.fan_in,
                    "fan_out": l.fan_out,
                    "activation": l.activation,
                    "init": l.init,
                    "weights": _encode(self._params[2 * i]),
                    "bias": _encode(self._params[2 * i + 1]),
                }
                for i, l in enumerate(self.layers)
            ],
        }

    @classmethod
    def from_dict(cls, d):
        layers, params = [], []
        for entry in d["layers"]:
            spec = LayerSpec(entry["fan_in"], entry["fan_out"], entry["activation"], entry["init"])
            layers.append(spec)
            params.append(_decode(entry["weights"]).reshape(spec.fan_in, spec.fan_out))
            params.append(_decode(entry["bias"]).reshape(spec.fan_out))
        mlp = cls(layers, params, frozen=d.get("frozen", False))
        if d.get("spec_hash") not in (None, mlp.spec_hash):
            raise ConfigurationError("model file spec hash does not match its layers")
        return mlp


def _encode(a):
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def _decode(s):
    return np.frombuffer(base64.b64decode(s), dtype="<f8").astype(float)


def init_mlp(layers, rng) -> Mlp:
    """Uniform initialization per layer tag; biases start at zero."""
    params = []
    for layer in layers:
        if not isinstance(layer, LayerSpec):
            layer = LayerSpec(*layer)
        bound = init_bound(layer)
        params.append(rng.uniform(-bound, bound, size=(layer.fan_in, layer.fan_out)))
        params.append(np.zeros(layer.fan_out))
    return Mlp([l if isinstance(l, LayerSpec) else LayerSpec(*l) for l in layers], params)


def forward(mlp: Mlp, x, params=None):
    """Run the network; pass Tensors in ``params`` to tape the weights."""
    params = mlp.params if params is None else params
    width = x.shape[-1]
    if width != mlp.n_in:
        raise ArityError(f"network expects {mlp.n_in} inputs, got {width}")
    h = x
    for i, layer in enumerate(mlp.layers):
        w, b = params[2 * i], params[2 * i + 1]
        h = ACTIVATIONS[layer.activation](ad.matmul(ad.as_tensor(h), w) + b)
    return h


def predict(mlp: Mlp, x):
    """Plain-array forward pass for inference."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return ad.value_of(forward(mlp, x))


# ---------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(state: AdamState, params, grads, model: Mlp | None = None):
    """One bias-corrected Adam update; returns the new parameter list."""
    if model is not None and model.frozen:
        raise FrozenModelError("refusing to update a frozen network")
    if any(getattr(p, "flags", None) is not None and not p.flags.writeable for p in params):
        raise FrozenModelError("refusing to update read-only (frozen) parameters")
    if len(params) != len(grads):
        raise ArityError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ArityError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        out.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return out


class EarlyStopper:
    """Stops once ``patience`` epochs pass without a gain of at least ``min_delta``."""

    def __init__(self, min_delta=1e-3, patience=1000):
        self.min_delta = min_delta
        self.patience = patience
        self.best = math.inf
        self.best_epoch = -1
        self.wait = 0

    def update(self, value, epoch):
        """Record one epoch; True means stop now."""
        if value < self.best - self.min_delta:
            self.best = value
            self.best_epoch = epoch
            self.wait = 0
            return False
        self.wait += 1
        return self.wait >= self.patience

    @property
    def improved(self):
        return self.wait == 0


# ---------------------------------------------------------------- training

@dataclass
class TrainResult:
    params: list
    history: list
    best_epoch: int
    seconds: float
    stopped_early: bool


def clip_by_global_norm(grads, max_norm):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if norm <= max_norm or norm == 0.0:
        return grads
    return [g * (max_norm / norm) for g in grads]


def epoch_rng(seed, epoch, stream=0):
    """Generator for one epoch; stream 0 drives training, 1 validation."""
    return np.random.default_rng([seed, epoch, stream])


def train_loop(params, batch_loss, n_train, val_loss, *, batch_size, lr, max_epochs,
               patience, min_delta=1e-3, seed=0, frozen_check=None, clip_norm=None):
    """Minibatch Adam with per-epoch reshuffling and best-epoch restore.

    ``batch_loss(tensors, idx, rng)`` returns a scalar Tensor for the rows
    ``idx``; ``val_loss(arrays, rng)`` returns a float. The batch order and
    every random draw inside an epoch come from ``epoch_rng(seed, epoch)``;
    validation reuses one fixed stream so epochs are compared on common
    random numbers. ``clip_norm`` rescales any step whose global gradient
    norm exceeds it, which keeps rare huge-loss samples from inflating
    Adam's second-moment estimate.
    """
    state = AdamState(lr=lr)
    stopper = EarlyStopper(min_delta, patience)
    params = [np.array(p, dtype=float) for p in params]
    best = [p.copy() for p in params]
    history = []
    start = time.perf_counter()
    stopped = False
    for epoch in range(max_epochs):
        rng = epoch_rng(seed, epoch)
        order = rng.permutation(n_train)
        total = 0.0
        for lo in range(0, n_train, batch_size):
            idx = order[lo:lo + batch_size]
            leaves = [ad.Tensor(p, requires_grad=True) for p in params]
            try:
                loss = batch_loss(leaves, idx, rng)
                loss.backward()
            except NonFiniteError as exc:
                raise TrainingError(f"non-finite loss in epoch {epoch}: {exc}",
                                    last_good=best, epoch=epoch) from exc
            value = float(loss.value)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss in epoch {epoch}", last_good=best,
                                    epoch=epoch)
            total += value * idx.size
            grads = [l.grad if l.grad is not None else np.zeros_like(l.value) for l in leaves]
            if clip_norm is not None:
                grads = clip_by_global_norm(grads, clip_norm)
            params = adam_step(state, params, grads)
        if frozen_check is not None:
            frozen_check()
        v = float(val_loss(params, epoch_rng(seed, 0, 1)))
        if not math.isfinite(v):
            raise TrainingError(f"non-finite validation loss in epoch {epoch}",
                                last_good=best, epoch=epoch)
        history.append((epoch, total / n_train, v))
        stop = stopper.update(v, epoch)
        if stopper.improved:
            best = [p.copy() for p in params]
        if epoch % 50 == 0:
            log.debug("epoch %d train %.6g val %.6g", epoch, total / n_train, v)
        if stop:
            stopped = True
            break
    return TrainResult(best, history, stopper.best_epoch, time.perf_counter() - start, stopped)


def pretrain_decoder(x, y, x_val, y_val, layers=None, *, lr=5e-3, batch_size=512,
                     max_epochs=2000, patience=100, min_delta=1e-3, seed=0):
    """Fit F([z, w]) -> m by mean squared error; returns a frozen Mlp and history.

    ``x`` rows are [z, w_scaled]; ``y`` rows are scaled features.
    """
    x, y = np.asarray(x, float), np.asarray(y, float)
    x_val, y_val = np.asarray(x_val, float), np.asarray(y_val, float)
    if layers is None:
        layers = mlp_spec(x.shape[1], DECODER_WIDTHS, DECODER_ACTIVATIONS, y.shape[1])
    net = init_mlp(layers, np.random.default_rng([seed, 0xDEC]))

    def batch_loss(params, idx, rng):
        out = forward(net, x[idx], params)
        return ad.square(out - y[idx]).mean()

    def val_loss(params, rng):
        return float(np.mean((ad.value_of(forward(net, x_val, params)) - y_val) ** 2))

    res = train_loop(net.params, batch_loss, x.shape[0], val_loss, batch_size=batch_size,
                     lr=lr, max_epochs=max_epochs, patience=patience, min_delta=min_delta,
                     seed=seed)
    return Mlp(layers, res.params, frozen=True), res
