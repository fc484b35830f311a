"""Dense networks with hand-written reverse-mode gradients.

Arrays are plain float64 ``numpy.ndarray`` objects; a batch is ``(B, d)``.
A :class:`Network` is an ordered list of layer specs plus one ``(W, b)`` pair
per dense layer, with ``W`` stored as ``(in_dim, out_dim)`` so that the layer
computes ``x @ W + b``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, NumericError, ShapeError

ACTIVATIONS = ("relu", "leaky_relu", "tanh", "sigmoid")


@dataclass(frozen=True)
class Dense:
    in_dim: int
    out_dim: int

    def __post_init__(self):
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise ShapeError(f"dense dims must be positive, got {self.in_dim}->{self.out_dim}")

    def describe(self) -> str:
        return f"dense:{self.in_dim}:{self.out_dim}"


@dataclass(frozen=True)
class Activation:
    kind: str
    slope: float = 0.2  # leaky_relu only

    def __post_init__(self):
        if self.kind not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.kind!r}")

    def describe(self) -> str:
        if self.kind == "leaky_relu":
            return f"leaky_relu:{self.slope!r}"
        return self.kind


LayerSpec = Dense | Activation


def parse_layers(text: str) -> list[LayerSpec]:
    """Inverse of :meth:`Network.describe`."""
    layers: list[LayerSpec] = []
    for token in filter(None, (t.strip() for t in text.split(","))):
        head, *rest = token.split(":")
        if head == "dense":
            layers.append(Dense(int(rest[0]), int(rest[1])))
        elif head == "leaky_relu":
            layers.append(Activation("leaky_relu", float(rest[0]) if rest else 0.2))
        else:
            layers.append(Activation(head))
    return layers


def _check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")
    return arr


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Network:
    """Feed-forward stack of dense and activation layers.

    ``dim`` is only needed for a layer-free network, which acts as the
    identity on ``dim``-wide inputs (used for empty feature extractors or
    empty headers).
    """

    def __init__(self, layers: Sequence[LayerSpec], rng: np.random.Generator | None = None,
                 dim: int | None = None):
        self.layers = tuple(layers)
        dense = [l for l in self.layers if isinstance(l, Dense)]
        for a, b in zip(dense, dense[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"incompatible consecutive dense layers {a} -> {b}")
        if dense:
            self.in_dim = dense[0].in_dim
            self.out_dim = dense[-1].out_dim
        elif dim is not None:
            self.in_dim = self.out_dim = int(dim)
        else:
            raise ShapeError("a network without dense layers needs an explicit dim")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params: list[tuple[np.ndarray, np.ndarray]] = [
            (glorot_uniform(l.in_dim, l.out_dim, rng), np.zeros(l.out_dim)) for l in dense
        ]

    # parameter views ---------------------------------------------------

    @property
    def param_count(self) -> int:
        return sum(W.size + b.size for W, b in self.params)

    def flatten_params(self) -> np.ndarray:
        if not self.params:
            return np.zeros(0)
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in self.params])

    def unflatten_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.ndim != 1 or flat.size != self.param_count:
            raise ShapeError(f"expected {self.param_count} parameters, got shape {flat.shape}")
        out, pos = [], 0
        for W, b in self.params:
            Wn = flat[pos:pos + W.size].reshape(W.shape).copy()
            pos += W.size
            bn = flat[pos:pos + b.size].copy()
            pos += b.size
            out.append((Wn, bn))
        self.params = out

    def copy(self) -> "Network":
        new = Network.__new__(Network)
        new.layers = self.layers
        new.in_dim, new.out_dim = self.in_dim, self.out_dim
        new.params = [(W.copy(), b.copy()) for W, b in self.params]
        return new

    def describe(self) -> str:
        return ",".join(l.describe() for l in self.layers)

    @property
    def n_dense(self) -> int:
        return len(self.params)

    def concat(self, other: "Network") -> "Network":
        """Network computing ``other(self(x))``; parameters are copied."""
        if self.out_dim != other.in_dim:
            raise ShapeError(f"cannot stack {self.out_dim}-wide output into {other.in_dim}-wide input")
        new = Network.__new__(Network)
        new.layers = self.layers + other.layers
        new.in_dim, new.out_dim = self.in_dim, other.out_dim
        new.params = [(W.copy(), b.copy()) for W, b in self.params + other.params]
        return new

    def split(self, n_dense: int) -> tuple["Network", "Network"]:
        """Cut after the ``n_dense``-th dense layer and its trailing activations."""
        if not 0 <= n_dense <= self.n_dense:
            raise ShapeError(f"cannot split after {n_dense} of {self.n_dense} dense layers")
        cut, seen = 0, 0
        while cut < len(self.layers) and seen < n_dense:
            if isinstance(self.layers[cut], Dense):
                seen += 1
            cut += 1
        while cut < len(self.layers) and isinstance(self.layers[cut], Activation) and n_dense > 0:
            cut += 1
        head = Network.__new__(Network)
        head.layers = self.layers[:cut]
        head.params = [(W.copy(), b.copy()) for W, b in self.params[:n_dense]]
        head.in_dim = self.in_dim
        head.out_dim = self.params[n_dense - 1][0].shape[1] if n_dense else self.in_dim
        tail = Network.__new__(Network)
        tail.layers = self.layers[cut:]
        tail.params = [(W.copy(), b.copy()) for W, b in self.params[n_dense:]]
        tail.in_dim, tail.out_dim = head.out_dim, self.out_dim
        return head, tail

    # forward / backward --------------------------------------------------

    def _forward(self, x: np.ndarray, keep: bool):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"expected batch of shape (B, {self.in_dim}), got {x.shape}")
        cache = []
        p = 0
        for layer in self.layers:
            if keep:
                cache.append(x)
            if isinstance(layer, Dense):
                W, b = self.params[p]
                p += 1
                x = x @ W + b
            elif layer.kind == "relu":
                x = np.maximum(x, 0.0)
            elif layer.kind == "leaky_relu":
                x = np.where(x > 0, x, layer.slope * x)
            elif layer.kind == "tanh":
                x = np.tanh(x)
            else:
                x = 0.5 * (1.0 + np.tanh(0.5 * x))  # overflow-free sigmoid
        _check_finite(x, "network output")
        if keep:
            cache.append(x)
        return x, cache

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self._forward(x, keep=False)[0]

    __call__ = forward

    def forward_cache(self, x: np.ndarray):
        """Forward pass that also returns the activations needed by :meth:`backward`."""
        return self._forward(x, keep=True)

    def backward(self, cache, grad_out: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(flat parameter gradient, gradient w.r.t. the input)``."""
        g = np.asarray(grad_out, dtype=np.float64)
        grads: list[tuple[np.ndarray, np.ndarray]] = []
        p = len(self.params)
        for i in range(len(self.layers) - 1, -1, -1):
            layer, x_in, y = self.layers[i], cache[i], cache[i + 1]
            if isinstance(layer, Dense):
                p -= 1
                W = self.params[p][0]
                grads.append((x_in.T @ g, g.sum(axis=0)))
                g = g @ W.T
            elif layer.kind == "relu":
                g = g * (x_in > 0)
            elif layer.kind == "leaky_relu":
                g = g * np.where(x_in > 0, 1.0, layer.slope)
            elif layer.kind == "tanh":
                g = g * (1.0 - y * y)
            else:
                g = g * y * (1.0 - y)
        grads.reverse()
        flat = (np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])
                if grads else np.zeros(0))
        return _check_finite(flat, "gradient"), g


def _activation(kind: str, slope: float) -> Activation:
    return Activation(kind, slope) if kind == "leaky_relu" else Activation(kind)


def mlp(dims: Sequence[int], activation: str = "relu", out_activation: str | None = None,
        rng: np.random.Generator | None = None, slope: float = 0.2) -> Network:
    """Dense stack ``dims[0] -> ... -> dims[-1]`` with ``activation`` between layers."""
    if len(dims) < 2:
        raise ShapeError("an MLP needs at least input and output dims")
    layers: list[LayerSpec] = []
    for i, (a, b) in enumerate(zip(dims, dims[1:])):
        layers.append(Dense(a, b))
        if i < len(dims) - 2:
            layers.append(_activation(activation, slope))
    if out_activation is not None:
        layers.append(_activation(out_activation, slope))
    return Network(layers, rng=rng)


# losses ----------------------------------------------------------------


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise DomainError(f"labels must lie in [0, {num_classes})")
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    n, c = logits.shape
    if n == 0:
        raise DomainError("empty batch")
    if labels.shape != (n,) or labels.min() < 0 or labels.max() >= c:
        raise DomainError(f"labels must be a length-{n} vector in [0, {c})")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsum - z[np.arange(n), labels]))
    grad = np.exp(z - logsum[:, None])
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def bce_with_logits(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy on raw scores; ``targets`` in [0, 1]."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0:
        raise DomainError("empty batch")
    t = np.broadcast_to(np.asarray(targets, dtype=np.float64).reshape(-1, 1), logits.shape)
    if np.any((t < 0) | (t > 1)):
        raise DomainError("bce targets must lie in [0, 1]")
    per = np.maximum(logits, 0) - logits * t + np.log1p(np.exp(-np.abs(logits)))
    sig = 0.5 * (1.0 + np.tanh(0.5 * logits))
    return float(per.mean()), (sig - t) / logits.size


def mse(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all elements."""
    target = np.asarray(target, dtype=np.float64)
    if pred.size == 0:
        raise DomainError("empty batch")
    if target.shape != pred.shape:
        raise ShapeError(f"target shape {target.shape} != prediction shape {pred.shape}")
    r = pred - target
    return float(np.mean(r * r)), 2.0 * r / r.size


LOSSES = {"cross_entropy": cross_entropy, "bce": bce_with_logits, "mse": mse}


def loss_and_grad(net: Network, batch: np.ndarray, labels: np.ndarray,
                  loss: str = "cross_entropy") -> tuple[float, np.ndarray]:
    """Loss value and flat parameter gradient for one batch."""
    if np.asarray(batch).shape[0] == 0:
        raise DomainError("empty batch")
    out, cache = net.forward_cache(batch)
    value, g = LOSSES[loss](out, labels)
    if not np.isfinite(value):
        raise NumericError("non-finite loss")
    grad, _ = net.backward(cache, g)
    return value, grad


# optimizers ------------------------------------------------------------


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        if params.shape != grads.shape:
            raise ShapeError(f"params {params.shape} vs grads {grads.shape}")
        return params - self.lr * grads

    def reset(self) -> None:
        pass


class Adam:
    """Adam with bias correction; ``weight_decay`` is added to the gradient (L2 form)."""

    def __init__(self, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.weight_decay = weight_decay
        self.reset()

    def reset(self) -> None:
        self.step_count = 0
        self.m: np.ndarray | None = None
        self.v: np.ndarray | None = None

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        if params.shape != grads.shape:
            raise ShapeError(f"params {params.shape} vs grads {grads.shape}")
        if self.m is None or self.m.shape != params.shape:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        g = grads + self.weight_decay * params if self.weight_decay else grads
        self.step_count += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        m_hat = self.m / (1 - self.b1 ** self.step_count)
        v_hat = self.v / (1 - self.b2 ** self.step_count)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def sgd_update(net: Network, x: np.ndarray, y: np.ndarray, opt) -> float:
    """One optimizer step on ``net`` using cross-entropy; returns the loss."""
    value, grad = loss_and_grad(net, x, y, "cross_entropy")
    net.unflatten_params(opt.step(net.flatten_params(), grad))
    return value
