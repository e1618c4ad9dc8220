from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError
from ..metrics import auroc_report
from .models import fit_model, params_from_dict
from .table import EmbeddingTable


@dataclass(frozen=True)
class GridSpec:
    """Candidate values per hyperparameter name; scored by mean held-out AUROC."""

    candidates: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, values in self.candidates.items():
            if len(values) == 0:
                raise DomainError(f"empty candidate list for {name!r}")

    def points(self) -> list[dict]:
        names = sorted(self.candidates)
        # dict.fromkeys drops duplicates while keeping first-seen order
        values = [list(dict.fromkeys(self.candidates[n])) for n in names]
        return [dict(zip(names, combo)) for combo in itertools.product(*values)]


@dataclass(frozen=True)
class GridResult:
    best: object
    best_score: float
    table: tuple[tuple[dict, float], ...]


def _tie_key(point: dict):
    # fewer estimators, then shallower trees (None = unlimited sorts last)
    n = point.get("n_estimators", 0)
    depth = point.get("max_depth", 0)
    return (n, np.inf if depth is None else depth)


def grid_search(data: EmbeddingTable, heldout: EmbeddingTable, grid: GridSpec, kind: str,
                seed: int = 0) -> GridResult:
    """Exhaustive search; the winner has the highest mean held-out AUROC."""
    points = grid.points()
    scored = []
    for point in points:
        params = params_from_dict(kind, point)
        model = fit_model(kind, data, params, seed)
        report = auroc_report(model.predict_proba(heldout.features), heldout.targets)
        full = dataclasses.asdict(params)
        scored.append((full, report.mean))
    valid = [s for s in scored if not np.isnan(s[1])]
    if not valid:
        raise DomainError("no grid point produced a defined held-out AUROC")
    best_full, best_score = min(valid, key=lambda s: (-s[1], _tie_key(s[0])))
    return GridResult(params_from_dict(kind, best_full), best_score, tuple(scored))
