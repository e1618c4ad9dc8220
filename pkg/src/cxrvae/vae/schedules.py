"""Beta warm-up schedule and plateau-halving learning rate."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from ..errors import DomainError


@dataclass(frozen=True)
class BetaSchedule:
    warmup_epochs: int = 3
    base: float = 0.005
    growth: float = 1.2
    # False: exponent is the absolute epoch index; True: it restarts at 0 after warm-up
    restart_exponent: bool = False

    def __post_init__(self):
        if self.warmup_epochs < 0 or self.base < 0 or self.growth < 1.0:
            raise DomainError("beta schedule needs warmup >= 0, base >= 0 and growth >= 1")


def beta_at_epoch(sched: BetaSchedule, epoch: int) -> float:
    """Zero during warm-up, then ``base * growth ** epoch`` (0-based epoch)."""
    if epoch < 0:
        raise DomainError("epoch must be >= 0")
    if epoch < sched.warmup_epochs:
        return 0.0
    exponent = epoch - sched.warmup_epochs if sched.restart_exponent else epoch
    return sched.base * sched.growth ** exponent


def lr_on_plateau(history: Sequence[float], current_lr: float, patience: int = 1) -> float:
    """Halve the learning rate when none of the last ``patience`` validation
    losses strictly improved on the best loss seen before them."""
    if patience < 1:
        raise DomainError("patience must be >= 1")
    if len(history) <= patience:
        return current_lr
    best_before = min(history[:-patience])
    if min(history[-patience:]) < best_before:
        return current_lr
    return current_lr / 2.0
