"""Minibatch training of the beta-VAE and embedding extraction."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DomainError, StructuralError, TrainingError
from ..numerics import AdamState, RngStream, adam_step
from .model import (
    VaeArchitecture,
    VaeParams,
    _as_batch,
    batch_loss_and_grad,
    encode,
    loss_and_grad_flat,
    init_params,
    reparameterize,
)
from .schedules import BetaSchedule, beta_at_epoch, lr_on_plateau

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    initial_lr: float = 7.5e-4
    lr_patience: int = 1
    batch_size: int = 64
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-7
    # parameter-name prefixes kept at their initial values (e.g. "enc.conv")
    frozen: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "frozen", tuple(self.frozen))
        if self.epochs < 1 or self.initial_lr <= 0 or self.batch_size < 1 or self.lr_patience < 1:
            raise DomainError("invalid training configuration")

    def digest(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    rec_loss: float
    kl_loss: float
    beta: float
    lr: float
    val_loss: float

    @property
    def train_loss(self) -> float:
        return self.rec_loss + self.beta * self.kl_loss


LOG_COLUMNS = ("epoch", "rec_loss", "kl_loss", "beta", "lr", "val_loss")


def write_training_log(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([r.epoch, repr(r.rec_loss), repr(r.kl_loss), repr(r.beta), repr(r.lr), repr(r.val_loss)])


def read_training_log(path) -> list[EpochLog]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [EpochLog(int(r["epoch"]), float(r["rec_loss"]), float(r["kl_loss"]), float(r["beta"]),
                     float(r["lr"]), float(r["val_loss"])) for r in rows]


@dataclass
class TrainState:
    """Everything needed to continue training after ``epochs_done`` epochs."""

    params: VaeParams
    adam: AdamState
    epochs_done: int = 0
    lr: float = 7.5e-4
    val_history: list[float] = field(default_factory=list)
    last_reduction: int = -1
    log: list[EpochLog] = field(default_factory=list)


def evaluate_loss(params: VaeParams, images, beta: float, batch_size: int = 256):
    """Noise-free (z = mean) batch-mean losses over a dataset: ``(total, rec, kl)``."""
    x, _ = _as_batch(params.arch, images)
    n = x.shape[0]
    rec = kl = 0.0
    for start in range(0, n, batch_size):
        xb = x[start:start + batch_size]
        res = batch_loss_and_grad(params, xb, np.zeros((xb.shape[0], params.arch.latent_dim)), beta,
                                  want_grad=False)
        rec += res.rec * xb.shape[0]
        kl += res.kl * xb.shape[0]
    rec /= n
    kl /= n
    return rec + beta * kl, rec, kl


def fit(arch: VaeArchitecture, data, val, cfg: TrainConfig = TrainConfig(),
        sched: BetaSchedule = BetaSchedule()):
    """Train a beta-VAE from scratch; returns ``(params, epoch_log)``."""
    state = train(arch, data, val, cfg, sched)
    return state.params, state.log


def train(
    arch: VaeArchitecture,
    data,
    val,
    cfg: TrainConfig = TrainConfig(),
    sched: BetaSchedule = BetaSchedule(),
    state: TrainState | None = None,
    on_epoch=None,
    stop_after: int | None = None,
):
    """Run (or continue) training and return the final :class:`TrainState`.

    ``state`` resumes an interrupted run; ``on_epoch(state)`` is called after
    every completed epoch (checkpointing hook). ``stop_after`` ends training
    early after that many total epochs, leaving a resumable state.
    """
    x, _ = _as_batch(arch, data)
    xv, _ = _as_batch(arch, val)
    if x.shape[0] == 0 or xv.shape[0] == 0:
        raise DomainError("training and validation data must be non-empty")
    n = x.shape[0]
    d = arch.latent_dim

    if state is None:
        params = init_params(arch, RngStream(cfg.seed, "vae-init"))
        adam = AdamState.fresh(params.flat.size, cfg.initial_lr, cfg.adam_beta1, cfg.adam_beta2,
                               cfg.adam_epsilon)
        state = TrainState(params, adam, 0, cfg.initial_lr)
    elif state.params.arch != arch:
        raise StructuralError("resume state belongs to a different architecture")

    net = state.params.network
    params_mask = net.group_mask(cfg.frozen) if cfg.frozen else None
    frozen = params_mask is not None and params_mask.any()

    shuffle_root = RngStream(cfg.seed, "vae-shuffle")
    noise_root = RngStream(cfg.seed, "vae-noise")
    last = cfg.epochs if stop_after is None else min(cfg.epochs, stop_after)

    for epoch in range(state.epochs_done, last):
        beta = beta_at_epoch(sched, epoch)
        order = shuffle_root.split(epoch).generator.permutation(n)
        noise = noise_root.split(epoch).generator
        adam = state.adam.with_lr(state.lr)
        flat = state.params.flat
        rec_sum = kl_sum = 0.0
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            eps = noise.standard_normal((idx.size, d))
            res = loss_and_grad_flat(net, flat, x[idx], eps, beta)
            if not np.isfinite(res.loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}", epoch=epoch, batch=bi)
            grad = res.grad
            if frozen:
                grad[params_mask] = 0.0
            try:
                flat, adam = adam_step(flat, grad, adam)
            except TrainingError as exc:
                raise TrainingError(f"{exc} (epoch {epoch}, batch {bi})", epoch=epoch, batch=bi,
                                    index=exc.index) from exc
            rec_sum += res.rec * idx.size
            kl_sum += res.kl * idx.size
        if not np.all(np.isfinite(flat)):
            raise TrainingError(f"parameters became non-finite at epoch {epoch}", epoch=epoch)
        params = VaeParams(arch, flat)
        val_loss, _, _ = evaluate_loss(params, xv, beta)
        if not np.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}", epoch=epoch)
        entry = EpochLog(epoch, rec_sum / n, kl_sum / n, beta, state.lr, val_loss)
        log.info("epoch %d rec=%.4f kl=%.4f beta=%.5f lr=%.2e val=%.4f",
                 epoch, entry.rec_loss, entry.kl_loss, beta, state.lr, val_loss)

        history = state.val_history + [val_loss]
        # after a halving, only later epochs count towards the next one
        window = history
        if state.last_reduction >= 0:
            r = state.last_reduction + 1
            window = [min(history[:r])] + history[r:]
        new_lr = lr_on_plateau(window, state.lr, cfg.lr_patience)
        state = TrainState(
            params=params,
            adam=adam,
            epochs_done=epoch + 1,
            lr=new_lr,
            val_history=history,
            last_reduction=epoch if new_lr != state.lr else state.last_reduction,
            log=state.log + [entry],
        )
        if on_epoch is not None:
            on_epoch(state)

    return state


def extract_embeddings(params: VaeParams, images, batch_size: int = 256, sampled: bool = False,
                       rng: RngStream | None = None) -> np.ndarray:
    """One latent row per image, in input order: the mean by default, or a
    reparameterized sample when ``sampled`` is set."""
    x, _ = _as_batch(params.arch, images)
    rows = []
    for start in range(0, x.shape[0], batch_size):
        mean, logvar = encode(params, x[start:start + batch_size])
        if sampled:
            if rng is None:
                raise DomainError("sampled embeddings need an RngStream")
            mean = reparameterize(mean, logvar, rng).z
        rows.append(mean)
    if not rows:
        return np.zeros((0, params.arch.latent_dim))
    return np.concatenate(rows, axis=0)
