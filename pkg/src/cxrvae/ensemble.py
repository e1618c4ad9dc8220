"""Averaging of per-class probability matrices across models."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, StructuralError
from .numerics import binary_entropy


@dataclass(frozen=True)
class SourceTag:
    vae: str
    classifier: str
    latent_dim: int

    def __str__(self):
        return f"{self.vae}-{self.classifier}-D{self.latent_dim}"


@dataclass(frozen=True)
class PredictionMatrix:
    values: np.ndarray
    tag: SourceTag | None = None
    row_ids: tuple[str, ...] = ()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise StructuralError(f"prediction matrix must be N x K, got {v.shape}")
        if not np.all((v >= 0.0) & (v <= 1.0)):
            raise DomainError("predictions must lie in [0, 1]")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "row_ids", tuple(self.row_ids))


class Method(str, enum.Enum):
    SIMPLE = "simple"
    ENTROPY = "entropy"
    ENTROPY_NORMALIZED = "entropy-normalized"


@dataclass(frozen=True)
class EnsembleOutput:
    values: np.ndarray
    method: Method
    members: tuple[SourceTag | None, ...]


def _stack(members: Sequence) -> np.ndarray:
    if len(members) == 0:
        raise StructuralError("an ensemble needs at least one member")
    mats = [m if isinstance(m, PredictionMatrix) else PredictionMatrix(m) for m in members]
    shape = mats[0].values.shape
    ids = mats[0].row_ids
    for m in mats[1:]:
        if m.values.shape != shape:
            raise StructuralError(f"member shapes differ: {shape} vs {m.values.shape}")
        if ids and m.row_ids and m.row_ids != ids:
            raise StructuralError("members are not row-aligned")
    return np.stack([m.values for m in mats]), tuple(m.tag for m in mats)


def _mean(Y: np.ndarray) -> np.ndarray:
    # cells where all members agree return that value bitwise (m * y / m can round)
    lo, hi = Y.min(axis=0), Y.max(axis=0)
    return np.where(lo == hi, lo, np.clip(Y.sum(axis=0) / Y.shape[0], lo, hi))


def simple_average(members) -> EnsembleOutput:
    Y, tags = _stack(members)
    return EnsembleOutput(_mean(Y), Method.SIMPLE, tags)


def entropy_weighted_average(members, normalized: bool = False) -> EnsembleOutput:
    """Weights each member's cell by ``1 - H(y)`` (base-2 binary entropy).

    The default divides the weighted sum by the member count, so a single
    member maps ``y`` to ``(1 - H(y)) * y``. ``normalized`` divides by the
    weight sum instead, using the plain mean for cells whose weights are all 0.
    """
    Y, tags = _stack(members)
    W = 1.0 - binary_entropy(Y)
    num = (W * Y).sum(axis=0)
    if not normalized:
        return EnsembleOutput(num / Y.shape[0], Method.ENTROPY, tags)
    den = W.sum(axis=0)
    ref = Y[0]
    offset = (W * (Y - ref)).sum(axis=0) / np.where(den > 0, den, 1.0)
    out = np.where(den > 0, ref + offset, _mean(Y))
    return EnsembleOutput(np.clip(out, Y.min(axis=0), Y.max(axis=0)), Method.ENTROPY_NORMALIZED, tags)


def combine(members, method: Method | str) -> EnsembleOutput:
    method = Method(method)
    if method is Method.SIMPLE:
        return simple_average(members)
    return entropy_weighted_average(members, normalized=method is Method.ENTROPY_NORMALIZED)
