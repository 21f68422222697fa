"""Fully connected networks with hand-written backpropagation.

Batches are column-major like the rest of the package: an input batch has shape
``(d, n)`` and every layer computes ``W @ h + b[:, None]``. Hidden layers use
ReLU (or the identity for linear nets); the output layer is linear unless a
sigmoid output is requested.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ArtifactError, DivergenceError, ShapeError
from .fileio import read_blob, write_blob

ACTIVATIONS = ("relu", "identity")
OUTPUT_ACTIVATIONS = ("identity", "sigmoid")


@dataclass
class Mlp:
    widths: tuple
    weights: list
    biases: list
    hidden_activation: str = "relu"
    output_activation: str = "identity"

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if self.hidden_activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        if len(self.weights) != len(self.widths) - 1 or len(self.biases) != len(self.weights):
            raise ShapeError("layer count does not match widths")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.widths[i + 1], self.widths[i]) or b.shape != (self.widths[i + 1],):
                raise ShapeError(f"layer {i} parameter shapes incompatible with widths")

    @property
    def input_width(self):
        return self.widths[0]

    @property
    def output_width(self):
        return self.widths[-1]

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def params(self):
        """Parameter arrays in optimizer order ``[W0, b0, W1, b1, ...]`` (views)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def set_params(self, params):
        self.weights = [np.array(p, dtype=np.float64) for p in params[0::2]]
        self.biases = [np.array(p, dtype=np.float64) for p in params[1::2]]

    def copy(self):
        return Mlp(
            self.widths,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.hidden_activation,
            self.output_activation,
        )

    def __call__(self, batch):
        return forward(self, batch)


def init_mlp(widths, rng, hidden_activation="relu", output_activation="identity"):
    """Uniform Glorot initialisation, zero biases."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(tuple(widths), weights, biases, hidden_activation, output_activation)


def _check_batch(net, batch):
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[0] != net.input_width:
        raise ShapeError(f"expected batch of shape ({net.input_width}, n), got {batch.shape}")
    return batch


def _forward_cache(net, batch):
    acts = [batch]
    pre = []
    h = batch
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = w @ h + b[:, None]
        pre.append(z)
        if i < last:
            h = np.maximum(z, 0.0) if net.hidden_activation == "relu" else z
        else:
            h = _sigmoid(z) if net.output_activation == "sigmoid" else z
        acts.append(h)
    return acts, pre


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward(net, batch):
    """Map every column of ``batch`` through the network."""
    return _forward_cache(net, _check_batch(net, batch))[0][-1]


@dataclass
class MlpGrads:
    weights: list
    biases: list
    inputs: np.ndarray

    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


def backward(net, batch, upstream, cache=None):
    """Gradients of ``<upstream, forward(net, batch)>`` for all parameters and the input."""
    batch = _check_batch(net, batch)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (net.output_width, batch.shape[1]):
        raise ShapeError(
            f"upstream shape {upstream.shape} does not match output ({net.output_width}, {batch.shape[1]})"
        )
    acts, pre = cache if cache is not None else _forward_cache(net, batch)
    gw = [None] * len(net.weights)
    gb = [None] * len(net.weights)
    last = len(net.weights) - 1
    delta = upstream
    if net.output_activation == "sigmoid":
        delta = delta * acts[-1] * (1.0 - acts[-1])
    for i in range(last, -1, -1):
        if i < last and net.hidden_activation == "relu":
            delta = delta * (pre[i] > 0)
        gw[i] = delta @ acts[i].T
        gb[i] = delta.sum(axis=1)
        delta = net.weights[i].T @ delta
    return MlpGrads(gw, gb, delta)


# ------------------------------------------------------------------ optimizer


@dataclass
class RmsPropState:
    lr: float
    decay: float = 0.9
    eps: float = 1e-8
    accumulators: list = field(default_factory=list)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not 0 < self.decay < 1:
            raise ValueError("decay must lie in (0, 1)")


def rmsprop_step(state, params, grads):
    """One RMSProp update; returns new parameter arrays and updates ``state``.

    ``acc <- decay * acc + (1 - decay) * g^2``; ``p <- p - lr * g / sqrt(acc + eps)``.
    """
    if len(params) != len(grads):
        raise ShapeError("parameter and gradient lists differ in length")
    if not state.accumulators:
        state.accumulators = [np.zeros_like(p, dtype=np.float64) for p in params]
    new = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ShapeError(f"gradient {i} shape {g.shape} differs from parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for parameter array {i}")
        acc = state.decay * state.accumulators[i] + (1.0 - state.decay) * g * g
        state.accumulators[i] = acc
        new.append(p - state.lr * g / np.sqrt(acc + state.eps))
    return new


# ------------------------------------------------------------------ autoencoder


@dataclass
class Autoencoder:
    encoder: Mlp
    decoder: Mlp
    loss: str = "mse"
    history: list = field(default=None, repr=False)

    def __post_init__(self):
        if self.encoder.output_width != self.decoder.input_width:
            raise ShapeError("decoder input width must equal the bottleneck width")

    @property
    def bottleneck(self):
        return self.encoder.output_width

    def encode(self, data):
        return forward(self.encoder, data)

    def reconstruct(self, data):
        return forward(self.decoder, forward(self.encoder, data))

    def mse(self, data):
        data = np.asarray(data, dtype=np.float64)
        return float(np.mean((self.reconstruct(data) - data) ** 2))


def split_indices(n, rng, holdout=0.2):
    perm = rng.permutation(n)
    n_val = max(1, int(round(holdout * n)))
    return perm[n_val:], perm[:n_val]


def train_autoencoder(
    data,
    p,
    epochs=300,
    lr=1e-3,
    seed=0,
    hidden=(64,),
    linear=False,
    batch_size=256,
    patience=20,
    min_improvement=1e-5,
    validation=None,
    output_activation="identity",
):
    """Train a symmetric autoencoder with bottleneck ``p``.

    Parameters
    ----------
    data : ndarray, shape (d, N)
        Training pool; a random 20% is held out for validation unless
        ``validation`` is given.
    hidden : sequence of int
        Encoder hidden widths (the decoder mirrors them).
    linear : bool
        Identity activations everywhere.
    output_activation : {"identity", "sigmoid"}
        Decoder output nonlinearity; sigmoid suits data in [0, 1].
    patience, min_improvement
        Stop once validation mse has improved by less than ``min_improvement``
        over ``patience`` epochs. The best parameters seen are returned.

    Returns
    -------
    (Autoencoder, float)
        The model and its mean squared reconstruction error on the held-out split.
    """
    data = np.asarray(data, dtype=np.float64)
    d, n_total = data.shape
    if n_total < 10:
        raise ValueError("need at least 10 samples")
    if not 1 <= p <= d:
        raise ValueError(f"bottleneck {p} must lie in [1, {d}]")
    rng = np.random.default_rng(seed)
    if validation is None:
        train_idx, val_idx = split_indices(n_total, rng)
        train, val = data[:, train_idx], data[:, val_idx]
    else:
        train, val = data, np.asarray(validation, dtype=np.float64)
    act = "identity" if linear else "relu"
    enc = init_mlp([d, *hidden, p], rng, act)
    dec = init_mlp([p, *reversed(tuple(hidden)), d], rng, act, output_activation)
    ae = Autoencoder(enc, dec)
    opt = RmsPropState(lr=lr)
    n = train.shape[1]
    bs = n if not batch_size else min(batch_size, n)
    best = (ae.mse(val), enc.copy(), dec.copy())
    history = [best[0]]
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            cols = order[start:start + bs]
            x = train[:, cols]
            e_cache = _forward_cache(enc, x)
            code = e_cache[0][-1]
            d_cache = _forward_cache(dec, code)
            recon = d_cache[0][-1]
            resid = recon - x
            up = 2.0 * resid / resid.size
            gd = backward(dec, code, up, d_cache)
            ge = backward(enc, x, gd.inputs, e_cache)
            params = enc.params() + dec.params()
            new = rmsprop_step(opt, params, ge.params() + gd.params())
            k = len(enc.params())
            enc.set_params(new[:k])
            dec.set_params(new[k:])
        val_mse = ae.mse(val)
        if not np.isfinite(val_mse):
            raise DivergenceError("autoencoder loss is not finite", epoch)
        history.append(val_mse)
        if val_mse < best[0]:
            best = (val_mse, enc.copy(), dec.copy())
        if len(history) > patience and history[-patience - 1] - min(history[-patience:]) < min_improvement:
            break
    return Autoencoder(best[1], best[2], history=history), float(best[0])


# ------------------------------------------------------------------ serialization


def save_mlp(net, path, **meta):
    header = {
        "format": "dccamon-mlp",
        "widths": list(net.widths),
        "hidden_activation": net.hidden_activation,
        "output_activation": net.output_activation,
        **meta,
    }
    payload = np.concatenate([p.ravel() for p in net.params()]) if net.n_params else np.empty(0)
    return write_blob(path, header, payload)


def load_mlp(path):
    """Read a network written by ``save_mlp``; returns ``(net, header)``."""
    header, flat = read_blob(path)
    if header.get("format") != "dccamon-mlp":
        raise ArtifactError(f"{path}: not an MLP file")
    widths = header["widths"]
    weights, biases, pos = [], [], 0
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        weights.append(flat[pos:pos + fan_in * fan_out].reshape(fan_out, fan_in).copy())
        pos += fan_in * fan_out
        biases.append(flat[pos:pos + fan_out].copy())
        pos += fan_out
    if pos != flat.size:
        raise ArtifactError(f"{path}: payload size does not match widths")
    net = Mlp(tuple(widths), weights, biases, header["hidden_activation"], header.get("output_activation", "identity"))
    return net, header
