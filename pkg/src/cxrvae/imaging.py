"""Image ingestion, the resize / template-crop / channel chain, and a
synthetic multi-label dataset generator.

Images are plain ``float64`` numpy arrays of shape ``(height, width)`` with
values in [0, 1]; multi-channel images are ``(channels, height, width)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import DataError, DomainError
from .labels import (
    CHEXPERT_POSITIVE_RATE,
    N_FINDINGS,
    FindingState,
    LabelRecord,
)
from .numerics import RngStream


class DegenerateMatchWarning(UserWarning):
    """Template matching was undefined everywhere; a centre crop was used."""


def as_gray(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DomainError(f"expected a non-empty 2-D gray image, got shape {arr.shape}")
    if np.any(~np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise DomainError("gray image pixels must lie in [0, 1]")
    return arr


# ---------------------------------------------------------------- file I/O

def load_gray(path) -> np.ndarray:
    """Load an 8- or 16-bit grayscale PNG (or PGM) scaled to [0, 1] by its bit depth."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            mode = im.mode
            if mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=np.float64)
                # PIL reports 16-bit PNGs as mode "I"; both carry 16-bit samples
                scale = 65535.0
            elif mode == "L":
                arr = np.asarray(im, dtype=np.float64)
                scale = 255.0
            elif mode in ("RGB", "RGBA", "LA", "P"):
                arr = np.asarray(im.convert("L"), dtype=np.float64)
                scale = 255.0
            else:
                raise DataError(f"{path}: unsupported image mode {mode}")
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: cannot read image ({exc})") from exc
    return np.clip(arr / scale, 0.0, 1.0)


def save_gray(img: np.ndarray, path, bits: int = 8) -> None:
    """Write a [0, 1] image as an 8- or 16-bit grayscale PNG."""
    img = as_gray(img)
    if bits == 8:
        Image.fromarray(np.round(img * 255.0).astype(np.uint8), mode="L").save(path)
    elif bits == 16:
        data = np.round(img * 65535.0).astype(np.uint16)
        Image.fromarray(data).save(path)
    else:
        raise DomainError("bits must be 8 or 16")


# ------------------------------------------------------------ preprocessing

def _axis_weights(n_in: int, n_out: int):
    # half-pixel (centre) sampling; exact identity when n_in == n_out
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(img, out_width: int, out_height: int) -> np.ndarray:
    """Bilinear resize sampling at pixel centres."""
    img = as_gray(img)
    if out_width < 1 or out_height < 1:
        raise DomainError("output dimensions must be >= 1")
    h, w = img.shape
    if (h, w) == (out_height, out_width):
        return img.copy()
    r0, r1, fr = _axis_weights(h, out_height)
    c0, c1, fc = _axis_weights(w, out_width)
    fr = fr[:, None]
    fc = fc[None, :]
    # a + (b - a) * t keeps constant regions exact
    a, b = img[r0][:, c0], img[r0][:, c1]
    top = a + (b - a) * fc
    a, b = img[r1][:, c0], img[r1][:, c1]
    bot = a + (b - a) * fc
    out = top + (bot - top) * fr
    return np.clip(out, 0.0, 1.0)


def ncc_map(img, tpl) -> np.ndarray:
    """Zero-mean normalized cross-correlation of ``tpl`` at every valid placement.

    Entry ``[r, c]`` scores the window whose top-left corner is ``(r, c)``.
    Placements whose window is constant get ``nan``.
    """
    img = np.asarray(img, dtype=np.float64)
    img = img - img.mean()  # NCC is shift invariant; centring limits cancellation below
    tpl = np.asarray(tpl, dtype=np.float64)
    th, tw = tpl.shape
    h, w = img.shape
    if th > h or tw > w:
        raise DomainError("template larger than image")
    t0 = tpl - tpl.mean()
    t_norm = np.sqrt(np.sum(t0 * t0))
    if t_norm == 0.0:
        raise DomainError("template must not be constant")
    n = th * tw
    # window sums via integral images
    ii = np.zeros((h + 1, w + 1))
    ii[1:, 1:] = img.cumsum(0).cumsum(1)
    ii2 = np.zeros((h + 1, w + 1))
    ii2[1:, 1:] = (img * img).cumsum(0).cumsum(1)
    s = ii[th:, tw:] - ii[:-th, tw:] - ii[th:, :-tw] + ii[:-th, :-tw]
    s2 = ii2[th:, tw:] - ii2[:-th, tw:] - ii2[th:, :-tw] + ii2[:-th, :-tw]
    var = np.maximum(s2 - s * s / n, 0.0)
    windows = np.lib.stride_tricks.sliding_window_view(img, (th, tw))
    cross = np.einsum("ijkl,kl->ij", windows, t0)
    with np.errstate(invalid="ignore", divide="ignore"):
        score = cross / (np.sqrt(var) * t_norm)
    score[var <= 1e-12 * n] = np.nan
    return score


def best_placement(score: np.ndarray, tol: float = 1e-12):
    """Row-major first placement whose score is within ``tol`` of the maximum."""
    if np.all(np.isnan(score)):
        return None
    top = np.nanmax(score)
    hits = np.argwhere(score >= top - tol)
    r, c = hits[0]
    return int(r), int(c)


def center_crop(img, crop_size: int) -> np.ndarray:
    img = np.asarray(img)
    h, w = img.shape
    if crop_size > h or crop_size > w or crop_size < 1:
        raise DomainError(f"crop size {crop_size} does not fit a {h}x{w} image")
    r0 = (h - crop_size) // 2
    c0 = (w - crop_size) // 2
    return img[r0:r0 + crop_size, c0:c0 + crop_size].copy()


@dataclass(frozen=True)
class CropResult:
    image: np.ndarray
    origin: tuple[int, int]
    score: float
    degenerate: bool


def template_match_crop(img, tpl, crop_size: int) -> CropResult:
    """Crop a ``crop_size`` square centred on the best NCC match of ``tpl``.

    The window is clamped to the image. If every placement is constant the
    centre crop is returned with ``degenerate=True`` and a warning.
    """
    img = as_gray(img)
    tpl = as_gray(tpl)
    h, w = img.shape
    if crop_size < 1 or crop_size > h or crop_size > w:
        raise DomainError(f"crop size {crop_size} does not fit a {h}x{w} image")
    th, tw = tpl.shape
    if th >= h or tw >= w:
        raise DomainError("template must be strictly smaller than the image")
    score = ncc_map(img, tpl)
    pos = best_placement(score)
    if pos is None:
        warnings.warn("template matching undefined (constant image); using centre crop",
                      DegenerateMatchWarning, stacklevel=2)
        r0 = (h - crop_size) // 2
        c0 = (w - crop_size) // 2
        return CropResult(img[r0:r0 + crop_size, c0:c0 + crop_size].copy(), (r0, c0), float("nan"), True)
    r, c = pos
    # match centre, then the crop window around it
    cr = r + (th - 1) / 2.0
    cc = c + (tw - 1) / 2.0
    r0 = int(np.floor(cr - (crop_size - 1) / 2.0))
    c0 = int(np.floor(cc - (crop_size - 1) / 2.0))
    r0 = min(max(r0, 0), h - crop_size)
    c0 = min(max(c0, 0), w - crop_size)
    crop = img[r0:r0 + crop_size, c0:c0 + crop_size].copy()
    return CropResult(crop, (r0, c0), float(score[r, c]), False)


def replicate_channels(img, channels: int) -> np.ndarray:
    """Stack ``channels`` copies of a gray plane into a (C, H, W) array."""
    if channels < 1:
        raise DomainError("channels must be >= 1")
    img = np.asarray(img, dtype=np.float64)
    return np.repeat(img[None, :, :], channels, axis=0)


def preprocess(img, tpl=None, resize_to: int = 256, crop_size: int = 224, channels: int = 3):
    """The full chain: resize, template crop (centre crop when no template), replicate."""
    img = resize_bilinear(img, resize_to, resize_to)
    if tpl is not None:
        res = template_match_crop(img, tpl, crop_size)
        cropped, degenerate = res.image, res.degenerate
    else:
        cropped, degenerate = center_crop(img, crop_size), False
    return replicate_channels(cropped, channels), degenerate


# -------------------------------------------------------- synthetic dataset

def _blob(size: int, center, radius: float, shape: str) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy, cx = center
    if shape == "disc":
        d = np.hypot(yy - cy, xx - cx) / radius
        return np.clip(1.5 - d, 0.0, 1.0) ** 1.5
    if shape == "square":
        d = np.maximum(np.abs(yy - cy), np.abs(xx - cx)) / radius
        return np.clip(1.4 - d, 0.0, 1.0)
    if shape == "hbar":
        d = np.maximum(np.abs(yy - cy) / (radius * 0.45), np.abs(xx - cx) / (radius * 1.6))
        return np.clip(1.4 - d, 0.0, 1.0)
    if shape == "vbar":
        d = np.maximum(np.abs(yy - cy) / (radius * 1.6), np.abs(xx - cx) / (radius * 0.45))
        return np.clip(1.4 - d, 0.0, 1.0)
    if shape == "ring":
        d = np.abs(np.hypot(yy - cy, xx - cx) - radius) / (radius * 0.4)
        return np.clip(1.2 - d, 0.0, 1.0)
    raise DomainError(f"unknown pattern shape {shape!r}")


def default_patterns(size: int) -> np.ndarray:
    """One deterministic localized pattern per finding, shape (14, size, size)."""
    shapes = ("disc", "square", "hbar", "vbar", "ring")
    # 4x4 grid of anchor cells (two left unused), slightly jittered per class
    cells = [(i, j) for i in range(4) for j in range(4)]
    cells = [c for c in cells if c not in ((0, 0), (3, 3))]
    step = size / 4.0
    out = np.empty((N_FINDINGS, size, size))
    for k in range(N_FINDINGS):
        i, j = cells[k]
        center = ((i + 0.5) * step, (j + 0.5) * step)
        out[k] = _blob(size, center, radius=0.3 * step, shape=shapes[k % len(shapes)])
    return out


@dataclass
class SyntheticSpec:
    marginals: Sequence[float] = CHEXPERT_POSITIVE_RATE
    image_size: int = 32
    noise_level: float = 0.05
    amplitude: float = 0.45
    background: float = 0.25
    nuisance: float = 0.15
    # per-image multiplicative jitter of pattern intensity, uniform in [1 - j, 1 + j]
    amplitude_jitter: float = 0.0
    # share of recorded positives whose finding is absent from the image; the same
    # expected number of unrecorded findings is drawn into negative images
    label_noise: float = 0.0
    uncertain_fraction: float = 0.0
    seed: int = 0
    patterns: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        m = np.asarray(self.marginals, dtype=np.float64)
        if m.shape != (N_FINDINGS,) or np.any((m < 0) | (m > 1)):
            raise DomainError("marginals must be 14 probabilities in [0, 1]")
        if (self.image_size < 4 or self.noise_level < 0 or not 0 <= self.uncertain_fraction <= 1
                or not 0 <= self.label_noise <= 0.5 or not 0 <= self.amplitude_jitter <= 1):
            raise DomainError("invalid synthetic dataset parameters")
        if self.patterns is None:
            self.patterns = default_patterns(self.image_size)
        elif self.patterns.shape != (N_FINDINGS, self.image_size, self.image_size):
            raise DomainError("patterns must have shape (14, size, size)")


def _nuisance_field(size: int, rng: np.random.Generator, strength: float) -> np.ndarray:
    # smooth random gradient + a shifted oval "body" outline, unrelated to labels
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / (size - 1)
    gy, gx = rng.uniform(-1.0, 1.0, size=2)
    ramp = gy * (yy - 0.5) + gx * (xx - 0.5)
    cy, cx = 0.5 + rng.uniform(-0.08, 0.08, size=2)
    ry, rx = rng.uniform(0.35, 0.48, size=2)
    body = np.clip(1.3 - np.hypot((yy - cy) / ry, (xx - cx) / rx), 0.0, 0.3)
    return strength * (ramp + body * rng.uniform(0.5, 1.5))


def synthetic_findings(spec: SyntheticSpec, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Boolean (n, 14) matrices ``(recorded, present)``: what the label file
    reports and what the image shows. Drawn exactly as the image generator does."""
    if n < 1:
        raise DomainError("n must be >= 1")
    root = RngStream(spec.seed, "synthetic")
    marg = np.asarray(spec.marginals, dtype=np.float64)
    positive = root.split("labels").generator.random((n, N_FINDINGS)) < marg[None, :]
    present = positive.copy()
    if spec.label_noise > 0:
        u = root.split("label-noise").generator.random((n, N_FINDINGS))
        with np.errstate(divide="ignore", invalid="ignore"):
            neg_rate = np.where(marg < 1, spec.label_noise * marg / (1 - marg), 0.0)
        present ^= np.where(positive, u < spec.label_noise, u < neg_rate[None, :])
    return positive, present


def generate_synthetic_dataset(spec: SyntheticSpec, n: int, prefix: str = "synthetic"):
    """Draw ``n`` images with independently sampled findings.

    Every finding is positive with its marginal probability; positive findings
    stamp their pattern. With ``label_noise`` the stamped set differs from the
    recorded labels by independent flips balanced so that both the recorded and
    the drawn prevalence follow the marginals. Noise and a label-independent nuisance field are added,
    then pixels are clipped to [0, 1]. Returns ``(images, records)`` where
    ``images`` has shape (n, size, size).
    """
    positive, present = synthetic_findings(spec, n)
    root = RngStream(spec.seed, "synthetic")
    pixel_rng = root.split("pixels").generator
    unc_rng = root.split("uncertain").generator
    size = spec.image_size
    images = np.empty((n, size, size))
    for i in range(n):
        img = np.full((size, size), spec.background)
        if spec.nuisance > 0:
            img += _nuisance_field(size, pixel_rng, spec.nuisance)
        stamped = spec.patterns[present[i]]
        if len(stamped):
            amp = np.full(len(stamped), spec.amplitude)
            if spec.amplitude_jitter > 0:
                amp *= pixel_rng.uniform(1 - spec.amplitude_jitter, 1 + spec.amplitude_jitter, len(stamped))
            img += np.tensordot(amp, stamped, axes=1)
        if spec.noise_level > 0:
            img += pixel_rng.normal(0.0, spec.noise_level, size=(size, size))
        images[i] = np.clip(img, 0.0, 1.0)

    uncertain = positive & (unc_rng.random((n, N_FINDINGS)) < spec.uncertain_fraction)
    records = []
    width = len(str(max(n - 1, 1)))
    for i in range(n):
        states = tuple(
            FindingState.UNCERTAIN if uncertain[i, k]
            else FindingState.POSITIVE if positive[i, k]
            else FindingState.NEGATIVE
            for k in range(N_FINDINGS)
        )
        records.append(LabelRecord(f"{prefix}_{i:0{width}d}.png", states))
    return images, records
