"""Seeded random streams, the Adam optimizer and small scalar kernels."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np

from .errors import DomainError, StructuralError, TrainingError

_U64 = (1 << 64) - 1


def stream_key(name) -> int:
    """Stable 64-bit id for a stream name (ints pass through)."""
    if isinstance(name, (int, np.integer)):
        if not 0 <= int(name) <= _U64:
            raise DomainError(f"stream id out of 64-bit range: {name}")
        return int(name)
    digest = hashlib.blake2b(str(name).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id)``.

    Backed by numpy's PCG64 seeded through ``SeedSequence`` with the stream id
    as spawn key, so distinct ids give statistically independent sequences.
    Not safe to share between concurrent workers; use :meth:`split`.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        if not 0 <= int(seed) <= _U64:
            raise DomainError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = int(seed)
        self.stream_id = stream_key(stream_id)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def split(self, name) -> "RngStream":
        """Child stream keyed by ``name``; independent of this stream's state."""
        child = stream_key(f"{self.stream_id}/{stream_key(name)}")
        return RngStream(self.seed, child)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def binary_entropy(p):
    """Entropy in bits of a Bernoulli(p) variable, with 0*log2(0) = 0.

    Accepts scalars or arrays; returns the same kind.
    """
    arr = np.asarray(p, dtype=np.float64)
    if np.any(~np.isfinite(arr)) or np.any((arr < 0.0) | (arr > 1.0)):
        raise DomainError("binary_entropy needs probabilities in [0, 1]")
    q = 1.0 - arr
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(arr > 0.0, -arr * np.log2(np.where(arr > 0.0, arr, 1.0)), 0.0)
        b = np.where(q > 0.0, -q * np.log2(np.where(q > 0.0, q, 1.0)), 0.0)
    # summing in a fixed (small, large) order keeps H(p) == H(1-p) bitwise
    h = np.minimum(a, b) + np.maximum(a, b) + 0.0
    if np.ndim(p) == 0:
        return float(h)
    return h


def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 7.5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7

    @classmethod
    def fresh(cls, n_params: int, lr: float = 7.5e-4, beta1=0.9, beta2=0.999, epsilon=1e-7):
        if lr <= 0 or epsilon <= 0 or not (0 < beta1 < 1 and 0 < beta2 < 1):
            raise DomainError("Adam hyperparameters out of range")
        z = np.zeros(n_params, dtype=np.float64)
        return cls(z, z.copy(), 0, float(lr), float(beta1), float(beta2), float(epsilon))

    def with_lr(self, lr: float) -> "AdamState":
        return replace(self, lr=float(lr))


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or state.m.shape != params.shape or state.v.shape != params.shape:
        raise StructuralError(
            f"Adam shape mismatch: params {params.shape}, grads {grads.shape}, "
            f"moments {state.m.shape}/{state.v.shape}"
        )
    bad = ~np.isfinite(grads)
    if bad.any():
        idx = int(np.flatnonzero(bad.ravel())[0])
        raise TrainingError(f"non-finite gradient at parameter {idx}", index=idx)

    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    m = b1 * state.m + (1.0 - b1) * grads
    v = b2 * state.v + (1.0 - b2) * (grads * grads)
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return new_params, replace(state, m=m, v=v, step=t)


def sample_uniform(rng: RngStream, a: float, b: float) -> float:
    """One draw from U[a, b)."""
    if not a < b:
        raise DomainError(f"sample_uniform needs a < b, got a={a}, b={b}")
    x = a + (b - a) * rng.generator.random()
    if x >= b:
        x = np.nextafter(b, a)
    return float(x)


def sample_standard_normal(rng: RngStream, n: int) -> np.ndarray:
    if n < 1:
        raise DomainError("sample_standard_normal needs n >= 1")
    return rng.generator.standard_normal(int(n))
