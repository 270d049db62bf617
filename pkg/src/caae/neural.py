"""Small dense-network engine: forward, exact backward, SGD.

Shared by the anonymizing autoencoder and the classifiers. The topology is a
plain layer stack (affine + activation); softmax is only valid as the final
activation. Everything is numpy float64 and deterministic given seeds, which
is what makes whole experiments reproducible bit for bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

ACTIVATIONS = ("relu", "tanh", "identity", "softmax")
_ACT_CODES = {name: i for i, name in enumerate(ACTIVATIONS)}

NET_MAGIC = b"CNET"
NET_VERSION = 1


@dataclass
class Layer:
    weights: np.ndarray  # [out, in]
    biases: np.ndarray  # [out]
    activation: str

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise DataError(
                f"layer shapes inconsistent: W{self.weights.shape} b{self.biases.shape}"
            )
        if self.activation not in ACTIVATIONS:
            raise DataError(f"unknown activation {self.activation!r}")


@dataclass
class NetworkParams:
    layers: list[Layer]
    seed: int = 0

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.weights.shape[1] != prev.weights.shape[0]:
                raise DataError(
                    f"layer shapes do not chain: {prev.weights.shape} -> {nxt.weights.shape}"
                )
        for i, layer in enumerate(self.layers[:-1]):
            if layer.activation == "softmax":
                raise DataError(f"softmax only allowed on the final layer (layer {i})")
        for layer in self.layers:
            if not (np.all(np.isfinite(layer.weights)) and np.all(np.isfinite(layer.biases))):
                raise DataError("non-finite parameters")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weights.shape[0]

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            layers=[Layer(l.weights.copy(), l.biases.copy(), l.activation) for l in self.layers],
            seed=self.seed,
        )


@dataclass
class LossSpec:
    kind: str  # "mse" | "cross_entropy"
    weight: float = 1.0

    def __post_init__(self):
        if self.kind not in ("mse", "cross_entropy"):
            raise DataError(f"unknown loss kind {self.kind!r}")
        if not np.isfinite(self.weight):
            raise DataError("loss weight must be finite")


def init_network(sizes, activations, seed: int = 0) -> NetworkParams:
    """Glorot-uniform weights, zero biases.

    sizes = [in, h1, ..., out]; activations has one entry per layer.
    """
    if len(activations) != len(sizes) - 1:
        raise DataError(f"{len(sizes) - 1} layers need {len(sizes) - 1} activations")
    rng = np.random.default_rng(seed)
    layers = []
    for (fan_in, fan_out), act in zip(zip(sizes, sizes[1:]), activations):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append(
            Layer(
                weights=rng.uniform(-bound, bound, size=(fan_out, fan_in)),
                biases=np.zeros(fan_out),
                activation=act,
            )
        )
    return NetworkParams(layers=layers, seed=seed)


def _softmax(z):
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "identity":
        return z
    return _softmax(z)


@dataclass
class ForwardCache:
    inputs: list  # input to each layer, [N, in_k]
    pre: list  # pre-activations, [N, out_k]
    outputs: list  # post-activations, [N, out_k]

    @property
    def output(self) -> np.ndarray:
        return self.outputs[-1]


def forward(params: NetworkParams, x) -> ForwardCache:
    """Run the stack on a vector or a batch; caches everything for backward."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[np.newaxis, :]
    if a.ndim != 2 or a.shape[1] != params.input_dim:
        raise DataError(f"input shape {np.shape(x)} does not match input dim {params.input_dim}")
    inputs, pre, outputs = [], [], []
    for layer in params.layers:
        inputs.append(a)
        z = a @ layer.weights.T + layer.biases
        pre.append(z)
        a = _activate(z, layer.activation)
        outputs.append(a)
    return ForwardCache(inputs=inputs, pre=pre, outputs=outputs)


def _onehot(labels, k):
    labels = np.asarray(labels).reshape(-1)
    if labels.min() < 0 or labels.max() >= k:
        raise DataError(f"labels out of range [0, {k})")
    out = np.zeros((len(labels), k))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def loss_value(spec: LossSpec, output: np.ndarray, target) -> float:
    output = np.atleast_2d(output)
    if spec.kind == "mse":
        target = np.asarray(target, dtype=np.float64).reshape(output.shape)
        return spec.weight * float(np.mean((output - target) ** 2))
    labels = np.asarray(target).reshape(-1)
    p = output[np.arange(len(labels)), labels]
    return spec.weight * float(-np.mean(np.log(p)))


@dataclass
class LayerGrads:
    weights: np.ndarray
    biases: np.ndarray


def _seed_gradient(params, cache, spec, target):
    """Gradient at the last layer's pre-activation for the weighted loss."""
    out = cache.output
    n = out.shape[0]
    last = params.layers[-1]
    if spec.kind == "mse":
        if last.activation == "softmax":
            raise DataError("mse loss on a softmax head is not supported")
        t = np.asarray(target, dtype=np.float64).reshape(out.shape)
        dout = spec.weight * 2.0 * (out - t) / out.size
        return _through_activation(dout, cache.pre[-1], out, last.activation)
    # cross entropy: softmax head uses the closed form (p - onehot);
    # an identity head is read as logits and gets the same seed.
    onehot = _onehot(target, out.shape[1])
    if last.activation == "softmax":
        p = out
    elif last.activation == "identity":
        p = _softmax(out)
    else:
        raise DataError("cross_entropy requires a softmax or identity (logits) head")
    return spec.weight * (p - onehot) / n


def _through_activation(dout, z, a, kind):
    if kind == "identity":
        return dout
    if kind == "relu":
        return dout * (z > 0)
    if kind == "tanh":
        return dout * (1.0 - a * a)
    # softmax jacobian: dz_i = p_i * (dout_i - sum_j dout_j p_j)
    s = (dout * a).sum(axis=1, keepdims=True)
    return a * (dout - s)


def _backprop(params, cache, dz_last):
    grads = [None] * len(params.layers)
    dz = dz_last
    for k in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[k]
        grads[k] = LayerGrads(weights=dz.T @ cache.inputs[k], biases=dz.sum(axis=0))
        dinput = dz @ layer.weights
        if k > 0:
            prev = params.layers[k - 1]
            dz = _through_activation(dinput, cache.pre[k - 1], cache.outputs[k - 1], prev.activation)
    return grads, dinput


def backward(params: NetworkParams, cache: ForwardCache, spec: LossSpec, target):
    """Exact gradients of the weighted scalar loss; also returns d(input)."""
    dz_last = _seed_gradient(params, cache, spec, target)
    return _backprop(params, cache, dz_last)


def backward_from_output(params: NetworkParams, cache: ForwardCache, doutput: np.ndarray):
    """Backpropagate an arbitrary gradient arriving at the network output."""
    doutput = np.atleast_2d(np.asarray(doutput, dtype=np.float64))
    last = params.layers[-1]
    dz_last = _through_activation(doutput, cache.pre[-1], cache.outputs[-1], last.activation)
    return _backprop(params, cache, dz_last)


def grad_reverse(gradient, lam: float):
    """Sign-flipped, scaled gradient for adversarial heads."""
    return np.asarray(gradient) * (-lam)


def init_velocity(params: NetworkParams):
    return [
        LayerGrads(weights=np.zeros_like(l.weights), biases=np.zeros_like(l.biases))
        for l in params.layers
    ]


def sgd_step(params: NetworkParams, grads, lr: float, momentum: float = 0.0, velocity=None):
    """In-place parameter update; returns params for chaining."""
    if momentum != 0.0 and velocity is None:
        raise DataError("momentum update needs a velocity state (see init_velocity)")
    for i, (layer, g) in enumerate(zip(params.layers, grads)):
        if g.weights.shape != layer.weights.shape:
            raise DataError(f"gradient shape mismatch at layer {i}")
        if momentum == 0.0:
            layer.weights -= lr * g.weights
            layer.biases -= lr * g.biases
        else:
            v = velocity[i]
            v.weights *= momentum
            v.weights -= lr * g.weights
            v.biases *= momentum
            v.biases -= lr * g.biases
            layer.weights += v.weights
            layer.biases += v.biases
    return params


class Sgd:
    """SGD with optional momentum, one velocity slot per network."""

    def __init__(self, lr: float, momentum: float = 0.0):
        self.lr = lr
        self.momentum = momentum
        self._velocity = {}

    def step(self, params: NetworkParams, grads):
        key = id(params)
        if self.momentum != 0.0 and key not in self._velocity:
            self._velocity[key] = init_velocity(params)
        sgd_step(params, grads, self.lr, self.momentum, self._velocity.get(key))


# ---------------------------------------------------------------------------
# Serialization: shape table then row-major float32 weights
# ---------------------------------------------------------------------------


def network_to_bytes(params: NetworkParams) -> bytes:
    parts = [NET_MAGIC, struct.pack("<BH", NET_VERSION, len(params.layers))]
    for layer in params.layers:
        out_dim, in_dim = layer.weights.shape
        parts.append(struct.pack("<IIB", out_dim, in_dim, _ACT_CODES[layer.activation]))
    for layer in params.layers:
        parts.append(layer.weights.astype("<f4").tobytes())
        parts.append(layer.biases.astype("<f4").tobytes())
    return b"".join(parts)


def network_from_bytes(data: bytes) -> NetworkParams:
    if data[:4] != NET_MAGIC:
        raise DataError(f"bad network magic {data[:4]!r}")
    version, n_layers = struct.unpack_from("<BH", data, 4)
    if version != NET_VERSION:
        raise DataError(f"unsupported network version {version}")
    pos = 7
    shapes = []
    for _ in range(n_layers):
        out_dim, in_dim, act = struct.unpack_from("<IIB", data, pos)
        pos += 9
        if act >= len(ACTIVATIONS):
            raise DataError(f"unknown activation code {act}")
        shapes.append((out_dim, in_dim, ACTIVATIONS[act]))
    layers = []
    for out_dim, in_dim, act in shapes:
        w_count = out_dim * in_dim
        need = 4 * (w_count + out_dim)
        if len(data) - pos < need:
            raise DataError("truncated network data")
        w = np.frombuffer(data, dtype="<f4", count=w_count, offset=pos).astype(np.float64)
        pos += 4 * w_count
        b = np.frombuffer(data, dtype="<f4", count=out_dim, offset=pos).astype(np.float64)
        pos += 4 * out_dim
        layers.append(Layer(weights=w.reshape(out_dim, in_dim), biases=b, activation=act))
    return NetworkParams(layers=layers)


def save_network(params: NetworkParams, path):
    with open(path, "wb") as fh:
        fh.write(network_to_bytes(params))


def load_network(path) -> NetworkParams:
    with open(path, "rb") as fh:
        return network_from_bytes(fh.read())
