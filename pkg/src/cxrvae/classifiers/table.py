from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import StructuralError
from ..labels import EVAL_CLASS_NAMES


@dataclass(frozen=True)
class EmbeddingTable:
    """Latent features paired row-wise with binary per-class targets."""

    features: np.ndarray
    targets: np.ndarray
    row_ids: tuple[str, ...] = field(default=())
    class_names: tuple[str, ...] = EVAL_CLASS_NAMES

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        targ = np.asarray(self.targets).astype(bool)
        if feats.ndim != 2 or feats.shape[0] == 0:
            raise StructuralError(f"features must be a non-empty N x D matrix, got {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise StructuralError("features contain non-finite values")
        if targ.ndim == 1:
            targ = targ[:, None]
        if targ.shape[0] != feats.shape[0]:
            raise StructuralError(f"{feats.shape[0]} feature rows but {targ.shape[0]} target rows")
        row_ids = tuple(self.row_ids) if self.row_ids else tuple(str(i) for i in range(feats.shape[0]))
        if len(row_ids) != feats.shape[0]:
            raise StructuralError("row_ids must have one entry per row")
        names = tuple(self.class_names)
        if len(names) != targ.shape[1]:
            names = tuple(f"class{k}" for k in range(targ.shape[1]))
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "targets", targ)
        object.__setattr__(self, "row_ids", row_ids)
        object.__setattr__(self, "class_names", names)

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return self.targets.shape[1]

    def subset(self, rows: Sequence[int]) -> "EmbeddingTable":
        rows = np.asarray(rows, dtype=np.int64)
        return EmbeddingTable(self.features[rows], self.targets[rows],
                              tuple(self.row_ids[i] for i in rows), self.class_names)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.features.astype("<f8").tobytes())
        h.update(self.targets.astype(np.uint8).tobytes())
        h.update("\n".join(self.row_ids).encode())
        return h.hexdigest()
