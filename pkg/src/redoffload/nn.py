"""Small dense-network engine: ReLU MLPs, backprop, Adam, Huber and cross-entropy.

Everything is float64 numpy. Inputs may be a single vector or a batch of
row vectors; gradients are plain chain rule (no averaging happens here, the
loss gradient passed to :func:`backward` decides the scale).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ContractViolationError, DimensionError, TrainingDivergenceError

CHECKPOINT_VERSION = 1
OUTPUTS = ("identity", "softmax")


class DenseNet:
    """Fully connected network, ReLU on hidden layers, identity or softmax output."""

    def __init__(self, layer_sizes, output: str = "identity", seed: int | None = 0):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise DimensionError("need at least input and output sizes, all >= 1")
        if output not in OUTPUTS:
            raise ValueError(f"output must be one of {OUTPUTS}")
        self.layer_sizes = sizes
        self.output = output
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / fan_in)  # He-uniform
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        self.version = 0

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "DenseNet":
        twin = DenseNet.__new__(DenseNet)
        twin.layer_sizes = list(self.layer_sizes)
        twin.output = self.output
        twin.weights = [w.copy() for w in self.weights]
        twin.biases = [b.copy() for b in self.biases]
        twin.version = 0
        return twin

    def load_parameters(self, other: "DenseNet") -> None:
        if other.layer_sizes != self.layer_sizes:
            raise DimensionError("layer sizes differ")
        for dst, src in zip(self.parameters(), other.parameters()):
            dst[...] = src
        self.version += 1

    def touch(self) -> None:
        """Mark parameters as modified; invalidates outstanding forward caches."""
        self.version += 1

    def __call__(self, x) -> np.ndarray:
        return forward(self, x)[0]


@dataclass
class ForwardCache:
    activations: list  # input to each layer
    preacts: list  # pre-activation of each layer
    output: np.ndarray
    version: int
    squeeze: bool

    @property
    def logits(self) -> np.ndarray:
        z = self.preacts[-1]
        return z[0] if self.squeeze else z


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(net: DenseNet, x) -> tuple[np.ndarray, ForwardCache]:
    a = np.asarray(x, dtype=np.float64)
    squeeze = a.ndim == 1
    if squeeze:
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != net.n_inputs:
        raise DimensionError(f"expected input of width {net.n_inputs}, got shape {np.shape(x)}")
    acts, pre = [], []
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        acts.append(a)
        z = a @ w + b
        pre.append(z)
        a = np.maximum(z, 0.0) if k < last else z
    out = softmax(a) if net.output == "softmax" else a
    cache = ForwardCache(acts, pre, out, net.version, squeeze)
    return (out[0] if squeeze else out), cache


def backward(net: DenseNet, cache: ForwardCache, grad, wrt: str = "output") -> list[np.ndarray]:
    """Parameter gradients, ordered like :meth:`DenseNet.parameters`.

    ``grad`` is dLoss/dOutput. For softmax nets ``wrt="logits"`` accepts the
    gradient with respect to the pre-softmax values instead, which is what
    :func:`softmax_cross_entropy` returns.
    """
    if cache.version != net.version:
        raise ContractViolationError("forward cache is stale: parameters changed since forward()")
    g = np.asarray(grad, dtype=np.float64)
    if cache.squeeze and g.ndim == 1:
        g = g[None, :]
    if g.shape != cache.output.shape:
        raise DimensionError(f"gradient shape {g.shape} != output shape {cache.output.shape}")
    if net.output == "softmax" and wrt == "output":
        p = cache.output
        dz = p * (g - (g * p).sum(axis=1, keepdims=True))
    elif wrt in ("output", "logits"):
        dz = g
    else:
        raise ValueError("wrt must be 'output' or 'logits'")
    grads: list[np.ndarray] = [None] * (2 * len(net.weights))
    for k in range(len(net.weights) - 1, -1, -1):
        grads[2 * k] = cache.activations[k].T @ dz
        grads[2 * k + 1] = dz.sum(axis=0)
        if k > 0:
            dz = (dz @ net.weights[k].T) * (cache.preacts[k - 1] > 0.0)
    return grads


def huber_loss(prediction, target, kappa: float = 1.0):
    """Elementwise Huber loss and its derivative with respect to ``prediction``."""
    if not kappa > 0:
        raise ValueError("kappa must be > 0")
    e = np.asarray(prediction, dtype=float) - np.asarray(target, dtype=float)
    small = np.abs(e) <= kappa
    loss = np.where(small, 0.5 * e * e, kappa * (np.abs(e) - 0.5 * kappa))
    grad = np.clip(e, -kappa, kappa)
    if loss.ndim == 0:
        return float(loss), float(grad)
    return loss, grad


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of integer ``labels`` and its gradient w.r.t. ``logits``."""
    z = np.atleast_2d(np.asarray(logits, dtype=float))
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    b = z.shape[0]
    loss = float(np.mean(lse - z[np.arange(b), y]))
    grad = softmax(z)
    grad[np.arange(b), y] -= 1.0
    return loss, grad / b


@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_net(cls, net: DenseNet, learning_rate: float = 1e-3, beta1: float = 0.9,
                beta2: float = 0.999, epsilon: float = 1e-8) -> "AdamState":
        params = net.parameters()
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params],
                   0, learning_rate, beta1, beta2, epsilon)


def adam_step(net: DenseNet, grads, state: AdamState) -> None:
    """One bias-corrected Adam update, in place on ``net`` and ``state``."""
    params = net.parameters()
    if len(grads) != len(params):
        raise DimensionError("gradient list does not match parameters")
    for g, p in zip(grads, params):
        if g.shape != p.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingDivergenceError("non-finite gradient")
        if not p.flags.c_contiguous:
            raise ContractViolationError("parameters must be C-contiguous for in-place updates")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        _kernels.adam_update(p.reshape(-1), np.ascontiguousarray(g, dtype=np.float64).reshape(-1),
                             m.reshape(-1), v.reshape(-1), float(state.learning_rate), float(b1),
                             float(b2), float(state.epsilon), c1, c2)
    net.touch()
    for p in params:
        if not np.all(np.isfinite(p)):
            raise TrainingDivergenceError("non-finite parameter after update")


def train_classifier(net: DenseNet, x: np.ndarray, y: np.ndarray, *, epochs: int = 100,
                     batch_size: int = 64, learning_rate: float = 1e-3, seed: int = 0,
                     adam: AdamState | None = None) -> list[float]:
    """Minibatch cross-entropy training of a softmax net; returns mean loss per epoch."""
    if net.output != "softmax":
        raise ValueError("train_classifier needs a softmax network")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    adam = adam or AdamState.for_net(net, learning_rate)
    rng = np.random.default_rng(seed)
    history = []
    m = x.shape[0]
    for _ in range(epochs):
        order = rng.permutation(m)
        total = 0.0
        for start in range(0, m, batch_size):
            idx = order[start:start + batch_size]
            _, cache = forward(net, x[idx])
            loss, g = softmax_cross_entropy(cache.preacts[-1], y[idx])
            adam_step(net, backward(net, cache, g, wrt="logits"), adam)
            total += loss * idx.size
        history.append(total / m)
    return history


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    net: DenseNet
    adam: AdamState | None = None
    catalog_digest: str | None = None
    metadata: dict = field(default_factory=dict)


def net_arrays(net: DenseNet, prefix: str) -> dict:
    out = {}
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        out[f"{prefix}W{k}"] = w
        out[f"{prefix}b{k}"] = b
    return out


def net_from_arrays(arrays, prefix: str, layer_sizes, output) -> DenseNet:
    net = DenseNet.__new__(DenseNet)
    net.layer_sizes = list(layer_sizes)
    net.output = output
    n = len(layer_sizes) - 1
    net.weights = [np.array(arrays[f"{prefix}W{k}"]) for k in range(n)]
    net.biases = [np.array(arrays[f"{prefix}b{k}"]) for k in range(n)]
    net.version = 0
    return net


def save_checkpoint(path, net: DenseNet, adam: AdamState | None = None,
                    catalog_digest: str | None = None, metadata: dict | None = None,
                    extra_nets: dict | None = None) -> None:
    """Write an ``.npz`` holding parameters, optimizer moments and JSON metadata."""
    arrays = net_arrays(net, "net/")
    meta = {
        "version": CHECKPOINT_VERSION,
        "layer_sizes": net.layer_sizes,
        "output": net.output,
        "catalog_digest": catalog_digest,
        "metadata": metadata or {},
        "extra_nets": {},
    }
    if adam is not None:
        meta["adam"] = {"step_count": adam.step_count, "learning_rate": adam.learning_rate,
                        "beta1": adam.beta1, "beta2": adam.beta2, "epsilon": adam.epsilon}
        for k, (m, v) in enumerate(zip(adam.first_moment, adam.second_moment)):
            arrays[f"adam/m{k}"] = m
            arrays[f"adam/v{k}"] = v
    for name, other in (extra_nets or {}).items():
        arrays.update(net_arrays(other, f"{name}/"))
        meta["extra_nets"][name] = {"layer_sizes": other.layer_sizes, "output": other.output}
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[Checkpoint, dict]:
    """Returns the checkpoint and any extra networks stored alongside it."""
    with np.load(path) as z:
        arrays = {k: z[k] for k in z.files}
    meta = json.loads(arrays["meta"].tobytes().decode())
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
    net = net_from_arrays(arrays, "net/", meta["layer_sizes"], meta["output"])
    adam = None
    if "adam" in meta:
        n = len(net.parameters())
        adam = AdamState([arrays[f"adam/m{k}"] for k in range(n)],
                         [arrays[f"adam/v{k}"] for k in range(n)], **meta["adam"])
    extras = {name: net_from_arrays(arrays, f"{name}/", spec["layer_sizes"], spec["output"])
              for name, spec in meta["extra_nets"].items()}
    return Checkpoint(net, adam, meta["catalog_digest"], meta["metadata"]), extras
