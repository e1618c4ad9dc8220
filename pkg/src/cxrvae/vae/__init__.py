"""Beta-VAE written directly in numpy."""

from .model import (
    LatentCode, VaeArchitecture, VaeParams, decode, encode, init_params, kl_loss,
    reconstruction_loss, reparameterize, total_loss,
)
from .schedules import BetaSchedule, beta_at_epoch, lr_on_plateau
from .training import TrainConfig, extract_embeddings, fit, train

__all__ = [
    "BetaSchedule", "LatentCode", "TrainConfig", "VaeArchitecture", "VaeParams", "beta_at_epoch",
    "decode", "encode", "extract_embeddings", "fit", "init_params", "kl_loss", "lr_on_plateau",
    "reconstruction_loss", "reparameterize", "total_loss", "train",
]
