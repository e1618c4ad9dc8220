"""Minimal feed-forward layers with hand-written backward passes.

Every layer reads its weights from slices of one flat float64 parameter
vector, so a network is fully described by its layer list plus that vector.
Activations are batch-first: dense inputs are ``(B, F)``, spatial inputs
channels-last ``(B, H, W, C)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DomainError, StructuralError


@dataclass(frozen=True)
class ParamSlot:
    name: str
    shape: tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def view(self, flat: np.ndarray) -> np.ndarray:
        return flat[self.offset:self.offset + self.size].reshape(self.shape)


class Registry:
    """Assigns flat-vector offsets to named parameter tensors."""

    def __init__(self):
        self.slots: dict[str, ParamSlot] = {}
        self.size = 0

    def add(self, name: str, shape) -> ParamSlot:
        if name in self.slots:
            raise StructuralError(f"duplicate parameter {name}")
        slot = ParamSlot(name, tuple(int(s) for s in shape), self.size)
        self.slots[name] = slot
        self.size += slot.size
        return slot


class Layer:
    params: tuple[ParamSlot, ...] = ()

    def forward(self, flat, x):
        """Return ``(y, cache)``."""
        raise NotImplementedError

    def backward(self, flat, cache, gy, grad):
        """Accumulate parameter gradients into ``grad`` and return dL/dx."""
        raise NotImplementedError

    def init(self, flat, rng: np.random.Generator):
        pass


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Dense(Layer):
    def __init__(self, reg: Registry, name: str, n_in: int, n_out: int):
        self.n_in, self.n_out = n_in, n_out
        self.w = reg.add(f"{name}.w", (n_in, n_out))
        self.b = reg.add(f"{name}.b", (n_out,))
        self.params = (self.w, self.b)

    def init(self, flat, rng):
        self.w.view(flat)[...] = _glorot(rng, self.w.shape, self.n_in, self.n_out)
        self.b.view(flat)[...] = 0.0

    def forward(self, flat, x):
        return x @ self.w.view(flat) + self.b.view(flat), x

    def backward(self, flat, x, gy, grad):
        self.w.view(grad)[...] += x.T @ gy
        self.b.view(grad)[...] += gy.sum(axis=0)
        return gy @ self.w.view(flat).T


class Conv2D(Layer):
    """k x k convolution (odd k), stride 1, zero 'same' padding, channels-last."""

    def __init__(self, reg: Registry, name: str, c_in: int, c_out: int, k: int = 3):
        if k % 2 != 1:
            raise DomainError("kernel size must be odd")
        self.c_in, self.c_out, self.k = c_in, c_out, k
        self.w = reg.add(f"{name}.w", (k, k, c_in, c_out))
        self.b = reg.add(f"{name}.b", (c_out,))
        self.params = (self.w, self.b)

    def init(self, flat, rng):
        kk = self.k * self.k
        self.w.view(flat)[...] = _glorot(rng, self.w.shape, self.c_in * kk, self.c_out * kk)
        self.b.view(flat)[...] = 0.0

    def forward(self, flat, x):
        # sum of k*k shifted matmuls; cheaper than im2col at these channel counts
        b, h, w, c = x.shape
        p = self.k // 2
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        wt = self.w.view(flat)
        y = np.empty((b, h, w, self.c_out))
        y[...] = self.b.view(flat)
        for i in range(self.k):
            for j in range(self.k):
                y += xp[:, i:i + h, j:j + w, :] @ wt[i, j]
        return y, xp

    def backward(self, flat, xp, gy, grad):
        b, h, w, _ = gy.shape
        p = self.k // 2
        wt = self.w.view(flat)
        gw = self.w.view(grad)
        g2 = gy.reshape(-1, self.c_out)
        self.b.view(grad)[...] += g2.sum(axis=0)
        dxp = np.zeros_like(xp)
        for i in range(self.k):
            for j in range(self.k):
                win = xp[:, i:i + h, j:j + w, :]
                gw[i, j] += win.reshape(-1, self.c_in).T @ g2
                dxp[:, i:i + h, j:j + w, :] += gy @ wt[i, j].T
        return dxp[:, p:p + h, p:p + w, :]


class Transpose(Layer):
    """Axis permutation, e.g. (0, 2, 3, 1) for NCHW -> NHWC."""

    def __init__(self, axes):
        self.axes = tuple(axes)
        self.inverse = tuple(np.argsort(self.axes))

    def forward(self, flat, x):
        return np.ascontiguousarray(x.transpose(self.axes)), None

    def backward(self, flat, cache, gy, grad):
        return gy.transpose(self.inverse)


class Upsample2x(Layer):
    """Nearest-neighbour 2x upsampling (channels-last)."""

    def forward(self, flat, x):
        return x.repeat(2, axis=1).repeat(2, axis=2), None

    def backward(self, flat, cache, gy, grad):
        b, h, w, c = gy.shape
        return gy.reshape(b, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


class AvgPool2x(Layer):
    def forward(self, flat, x):
        b, h, w, c = x.shape
        if h % 2 or w % 2:
            raise StructuralError("AvgPool2x needs even spatial dimensions")
        return x.reshape(b, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4)), None

    def backward(self, flat, cache, gy, grad):
        return 0.25 * gy.repeat(2, axis=1).repeat(2, axis=2)


class Reshape(Layer):
    def __init__(self, shape):
        self.shape = tuple(shape)

    def forward(self, flat, x):
        return x.reshape((x.shape[0],) + self.shape), x.shape

    def backward(self, flat, in_shape, gy, grad):
        return gy.reshape(in_shape)


class Activation(Layer):
    def __init__(self, kind: str):
        if kind not in ACTIVATIONS:
            raise DomainError(f"unknown activation {kind!r}; choose from {sorted(ACTIVATIONS)}")
        self.kind = kind

    def forward(self, flat, x):
        y = _act_forward(self.kind, x)
        return y, (x, y)

    def backward(self, flat, cache, gy, grad):
        x, y = cache
        return gy * _act_derivative(self.kind, x, y)


ACTIVATIONS = ("elu", "relu", "leaky_relu", "tanh", "sigmoid", "linear")


def _act_forward(kind, x):
    if kind == "elu":
        return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "leaky_relu":
        return np.where(x > 0, x, 0.2 * x)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "sigmoid":
        # stable for large |x|
        return 0.5 * (1.0 + np.tanh(0.5 * x))
    return x


def _act_derivative(kind, x, y):
    if kind == "elu":
        return np.where(x > 0, 1.0, y + 1.0)
    if kind == "relu":
        return (x > 0).astype(np.float64)
    if kind == "leaky_relu":
        return np.where(x > 0, 1.0, 0.2)
    if kind == "tanh":
        return 1.0 - y * y
    if kind == "sigmoid":
        return y * (1.0 - y)
    return np.ones_like(x)


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)

    @property
    def slots(self):
        return [s for layer in self.layers for s in layer.params]

    def init(self, flat, rng):
        for layer in self.layers:
            layer.init(flat, rng)

    def forward(self, flat, x):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(flat, x)
            caches.append(cache)
        return x, caches

    def backward(self, flat, caches, gy, grad):
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            gy = layer.backward(flat, cache, gy, grad)
        return gy
