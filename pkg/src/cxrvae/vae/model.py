"""Beta-VAE architecture, parameters, losses and analytic gradients."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError, StructuralError
from ..numerics import RngStream
from . import layers as L


@dataclass(frozen=True)
class VaeArchitecture:
    """Encoder/decoder layout.

    The encoder is ``encoder_conv`` blocks of (3x3 conv, activation, 2x2 average
    pool) followed by dense layers of ``encoder_widths`` and a final dense layer
    producing mean and log-variance. The decoder is a dense layer of
    ``decoder_dense`` units reshaped to an (H / 2**K, W / 2**K, c) grid, then K
    blocks of (3x3 conv, activation, 2x upsample) with filters halving from
    ``decoder_filters``, then a 3x3 conv to the input channels and a sigmoid.
    """

    input_shape: tuple[int, int, int] = (1, 32, 32)
    latent_dim: int = 16
    encoder_conv: tuple[int, ...] = ()
    encoder_widths: tuple[int, ...] = (256,)
    decoder_dense: int = 512
    decoder_blocks: int = 3
    decoder_filters: int = 16
    activation: str = "elu"

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "encoder_conv", tuple(int(v) for v in self.encoder_conv))
        object.__setattr__(self, "encoder_widths", tuple(int(v) for v in self.encoder_widths))
        c, h, w = self.input_shape
        if min(c, h, w) < 1 or self.latent_dim < 1:
            raise DomainError("input dimensions and latent_dim must be >= 1")
        if self.activation not in L.ACTIVATIONS:
            raise DomainError(f"unknown activation {self.activation!r}")
        pool = 2 ** len(self.encoder_conv)
        if h % pool or w % pool:
            raise StructuralError(f"input {h}x{w} not divisible by encoder pooling {pool}")
        up = 2 ** self.decoder_blocks
        if h % up or w % up:
            raise StructuralError(f"input {h}x{w} not divisible by decoder upsampling {up}")
        if self.decoder_dense % ((h // up) * (w // up)):
            raise StructuralError(
                f"decoder_dense={self.decoder_dense} cannot be reshaped onto a {h // up}x{w // up} grid"
            )

    @property
    def n_pixels(self) -> int:
        c, h, w = self.input_shape
        return c * h * w

    def block_filters(self) -> list[int]:
        return [max(1, self.decoder_filters >> i) for i in range(self.decoder_blocks)]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "VaeArchitecture":
        d = dict(d)
        for key in ("input_shape", "encoder_conv", "encoder_widths"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


class VaeNetwork:
    """Layer graph for an architecture; stateless apart from the layout."""

    def __init__(self, arch: VaeArchitecture):
        self.arch = arch
        reg = L.Registry()
        c, h, w = arch.input_shape
        act = arch.activation

        enc = [L.Transpose((0, 2, 3, 1))]
        ch = c
        for i, filters in enumerate(arch.encoder_conv):
            enc += [L.Conv2D(reg, f"enc.conv{i}", ch, filters), L.Activation(act), L.AvgPool2x()]
            ch = filters
        pool = 2 ** len(arch.encoder_conv)
        width = ch * (h // pool) * (w // pool)
        enc.append(L.Reshape((width,)))
        for i, units in enumerate(arch.encoder_widths):
            enc += [L.Dense(reg, f"enc.dense{i}", width, units), L.Activation(act)]
            width = units
        enc.append(L.Dense(reg, "enc.head", width, 2 * arch.latent_dim))
        self.encoder = L.Sequential(enc)
        self.n_encoder = reg.size

        up = 2 ** arch.decoder_blocks
        h0, w0 = h // up, w // up
        c0 = arch.decoder_dense // (h0 * w0)
        dec = [L.Dense(reg, "dec.dense", arch.latent_dim, arch.decoder_dense), L.Activation(act),
               L.Reshape((h0, w0, c0))]
        ch = c0
        for i, filters in enumerate(arch.block_filters()):
            dec += [L.Conv2D(reg, f"dec.conv{i}", ch, filters), L.Activation(act), L.Upsample2x()]
            ch = filters
        dec += [L.Conv2D(reg, "dec.out", ch, c), L.Activation("sigmoid"), L.Transpose((0, 3, 1, 2))]
        self.decoder = L.Sequential(dec)
        self.registry = reg

    @property
    def n_params(self) -> int:
        return self.registry.size

    def group_mask(self, prefixes) -> np.ndarray:
        """Boolean mask over the flat vector selecting parameters whose name starts with any prefix."""
        mask = np.zeros(self.n_params, dtype=bool)
        for slot in self.registry.slots.values():
            if any(slot.name.startswith(p) for p in prefixes):
                mask[slot.offset:slot.offset + slot.size] = True
        return mask


_NETWORKS: dict[VaeArchitecture, VaeNetwork] = {}


def network_for(arch: VaeArchitecture) -> VaeNetwork:
    net = _NETWORKS.get(arch)
    if net is None:
        net = _NETWORKS[arch] = VaeNetwork(arch)
    return net


@dataclass(frozen=True)
class VaeParams:
    arch: VaeArchitecture
    flat: np.ndarray = field(repr=False)

    def __post_init__(self):
        flat = np.array(self.flat, dtype=np.float64)
        if flat.shape != (network_for(self.arch).n_params,):
            raise StructuralError(
                f"parameter vector has {flat.size} entries, architecture needs "
                f"{network_for(self.arch).n_params}"
            )
        if not np.all(np.isfinite(flat)):
            raise StructuralError("parameters must be finite")
        flat.setflags(write=False)
        object.__setattr__(self, "flat", flat)

    @property
    def network(self) -> VaeNetwork:
        return network_for(self.arch)

    def digest(self) -> str:
        return hashlib.sha256(self.flat.astype("<f8").tobytes()).hexdigest()


def init_params(arch: VaeArchitecture, rng: RngStream) -> VaeParams:
    net = network_for(arch)
    flat = np.zeros(net.n_params)
    net.encoder.init(flat, rng.generator)
    net.decoder.init(flat, rng.generator)
    return VaeParams(arch, flat)


@dataclass(frozen=True)
class LatentCode:
    mean: np.ndarray
    logvar: np.ndarray
    z: np.ndarray
    eps: np.ndarray


def _as_batch(arch: VaeArchitecture, images) -> tuple[np.ndarray, bool]:
    x = np.asarray(images, dtype=np.float64)
    c, h, w = arch.input_shape
    single = False
    if x.shape == (h, w) and c == 1:
        x, single = x[None, None], True
    elif x.shape == (c, h, w):
        x, single = x[None], True
    elif x.ndim == 3 and c == 1 and x.shape[1:] == (h, w):
        x = x[:, None]
    if x.ndim != 4 or x.shape[1:] != (c, h, w):
        raise StructuralError(f"images of shape {np.shape(images)} do not match input {arch.input_shape}")
    return x, single


def encode(params: VaeParams, images):
    """Latent mean and log-variance for one image or a batch."""
    x, single = _as_batch(params.arch, images)
    out, _ = params.network.encoder.forward(params.flat, x)
    d = params.arch.latent_dim
    mean, logvar = out[:, :d], out[:, d:]
    if single:
        return mean[0].copy(), logvar[0].copy()
    return mean, logvar


def reparameterize(mean, logvar, rng: RngStream | None = None, eps=None) -> LatentCode:
    """z = mean + exp(logvar / 2) * eps with eps ~ N(0, I) (or the given noise)."""
    mean = np.asarray(mean, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    if mean.shape != logvar.shape:
        raise StructuralError(f"mean {mean.shape} and log-variance {logvar.shape} differ")
    if eps is None:
        if rng is None:
            raise DomainError("reparameterize needs an RngStream or explicit noise")
        eps = rng.generator.standard_normal(mean.shape)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != mean.shape:
        raise StructuralError("noise shape does not match the latent code")
    z = mean + np.exp(0.5 * logvar) * eps
    return LatentCode(mean, logvar, z, eps)


def decode(params: VaeParams, z):
    """Reconstruction in [0, 1] shaped like the input images."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    zb = z[None] if single else z
    if zb.ndim != 2 or zb.shape[1] != params.arch.latent_dim:
        raise StructuralError(f"latent vector shape {z.shape} does not match D={params.arch.latent_dim}")
    out, _ = params.network.decoder.forward(params.flat, zb)
    return out[0] if single else out


def reconstruction_loss(x, x_rec) -> float:
    """Sum of absolute pixel differences."""
    x = np.asarray(x, dtype=np.float64)
    x_rec = np.asarray(x_rec, dtype=np.float64)
    if x.shape != x_rec.shape:
        raise StructuralError(f"shape mismatch {x.shape} vs {x_rec.shape}")
    return float(np.abs(x - x_rec).sum())


def kl_loss(mean, logvar) -> float:
    """KL(N(mean, exp(logvar)) || N(0, I)) = -0.5 * sum(1 + logvar - mean^2 - exp(logvar))."""
    mean = np.asarray(mean, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    if mean.shape != logvar.shape:
        raise StructuralError(f"shape mismatch {mean.shape} vs {logvar.shape}")
    # expm1 keeps the small-logvar regime accurate; each term is >= 0
    terms = mean * mean + (np.expm1(logvar) - logvar)
    return float(0.5 * terms.sum())


def total_loss(rec: float, kl: float, beta: float) -> float:
    if beta < 0:
        raise DomainError("beta must be >= 0")
    return rec + beta * kl


@dataclass
class BatchResult:
    loss: float
    rec: float
    kl: float
    grad: np.ndarray | None


def batch_loss_and_grad(params: VaeParams, x, eps, beta: float, want_grad: bool = True) -> BatchResult:
    """Batch-mean of (reconstruction + beta * KL) and its gradient w.r.t. ``params.flat``.

    ``eps`` is the reparameterization noise, shape (B, D), held fixed.
    Reconstruction is summed over pixels and averaged over the batch.
    """
    x, _ = _as_batch(params.arch, x)
    return loss_and_grad_flat(params.network, params.flat, x, eps, beta, want_grad)


def loss_and_grad_flat(net: VaeNetwork, flat: np.ndarray, x: np.ndarray, eps, beta: float,
                       want_grad: bool = True) -> BatchResult:
    d = net.arch.latent_dim
    b = x.shape[0]
    eps = np.asarray(eps, dtype=np.float64).reshape(b, d)

    enc_out, enc_cache = net.encoder.forward(flat, x)
    mean, logvar = enc_out[:, :d], enc_out[:, d:]
    std = np.exp(0.5 * logvar)
    z = mean + std * eps
    x_rec, dec_cache = net.decoder.forward(flat, z)

    diff = x_rec - x
    rec_per = np.abs(diff).reshape(b, -1).sum(axis=1)
    kl_per = 0.5 * (mean * mean + np.expm1(logvar) - logvar).sum(axis=1)
    rec = float(rec_per.mean())
    kl = float(kl_per.mean())
    loss = rec + beta * kl
    if not want_grad:
        return BatchResult(loss, rec, kl, None)

    grad = np.zeros_like(flat)
    g_rec = np.sign(diff) / b
    g_z = net.decoder.backward(flat, dec_cache, g_rec, grad)
    g_mean = g_z + (beta / b) * mean
    g_logvar = g_z * 0.5 * std * eps + (beta / b) * 0.5 * np.expm1(logvar)
    net.encoder.backward(flat, enc_cache, np.concatenate([g_mean, g_logvar], axis=1), grad)
    return BatchResult(loss, rec, kl, grad)
