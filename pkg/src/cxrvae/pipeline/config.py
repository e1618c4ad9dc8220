"""Declarative run configuration (YAML).

Every key is optional; omitted keys take the defaults below. Unknown keys
are rejected so typos surface as configuration errors.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import re
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..classifiers.models import ALL_KINDS
from ..ensemble import Method
from ..errors import ConfigError, CxrVaeError
from ..labels import EVAL_CLASS_NAMES, CLASS_NAMES, policy_from_name
from ..numerics import RngStream
from ..vae.model import VaeArchitecture


@dataclass(frozen=True)
class SyntheticConfig:
    n: int = 2500
    n_test: int = 500
    image_size: int = 32
    noise_level: float = 0.05
    amplitude: float = 0.45
    background: float = 0.25
    nuisance: float = 0.15
    amplitude_jitter: float = 0.0
    label_noise: float = 0.0
    uncertain_fraction: float = 0.0


@dataclass(frozen=True)
class DirectoryConfig:
    """Real images: a label CSV whose paths are relative to ``root``."""

    labels_csv: str = ""
    root: str = ""
    test_labels_csv: str = ""
    test_root: str = ""
    template: str = ""
    resize_to: int = 256
    crop_size: int = 224
    channels: int = 1
    max_failure_rate: float = 0.01


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    train_fraction: float = 0.9
    validation_fraction: float = 0.1
    # regex whose first match in an item path names its group (e.g. "patient[0-9]+");
    # items of one group land in the same split. Empty: split by row.
    group_pattern: str = ""
    synthetic: SyntheticConfig = SyntheticConfig()
    directory: DirectoryConfig = DirectoryConfig()


@dataclass(frozen=True)
class ArchConfig:
    name: str = "mlp"
    encoder_conv: tuple[int, ...] = ()
    encoder_widths: tuple[int, ...] = (256,)
    decoder_dense: int = 512
    decoder_blocks: int = 3
    decoder_filters: int = 16
    activation: str = "elu"
    frozen: tuple[str, ...] = ()


@dataclass(frozen=True)
class VaeConfig:
    architectures: tuple[ArchConfig, ...] = (ArchConfig(),)
    latent_dims: tuple[int, ...] = (16,)
    # one model per (architecture, latent dim, member); members differ only in seed
    members: int = 1
    epochs: int = 10
    initial_lr: float = 7.5e-4
    lr_patience: int = 1
    batch_size: int = 64
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-7
    beta_warmup_epochs: int = 3
    beta_base: float = 0.005
    beta_growth: float = 1.2
    beta_restart_exponent: bool = False
    sampled_embeddings: bool = False


@dataclass(frozen=True)
class LabelConfig:
    policy: str = "u-ones"
    lsr_alpha: float = 0.55
    lsr_beta: float = 0.85
    unmentioned: float = 0.0
    threshold: float = 0.5
    eval_classes: tuple[str, ...] = EVAL_CLASS_NAMES


@dataclass(frozen=True)
class ClassifierConfig:
    kinds: tuple[str, ...] = ALL_KINDS
    # 2000-tree forests instead of the 200-tree desk default
    full_forests: bool = False
    # per-kind overrides of the default hyperparameters, e.g. {"RF": {"max_depth": 8}}
    params: dict = field(default_factory=dict)
    # per-kind candidate lists; a kind listed here is grid-searched
    grid: dict = field(default_factory=dict)
    grid_holdout: float = 0.2


@dataclass(frozen=True)
class EnsembleConfig:
    methods: tuple[str, ...] = ("simple", "entropy")


@dataclass(frozen=True)
class ReportConfig:
    reconstruction_rows: int = 6


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    data: DataConfig = DataConfig()
    labels: LabelConfig = LabelConfig()
    vae: VaeConfig = VaeConfig()
    classifiers: ClassifierConfig = ClassifierConfig()
    ensemble: EnsembleConfig = EnsembleConfig()
    report: ReportConfig = ReportConfig()

    def digest(self) -> str:
        blob = json.dumps(to_dict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def derived_seed(self, name: str) -> int:
        """Independent 63-bit seed for a named sub-stream of the master seed."""
        return int(RngStream(self.seed, name).generator.integers(0, 2**63))

    def vae_runs(self):
        """``(tag, ArchConfig, VaeArchitecture, latent_dim, member)`` for every VAE to train."""
        out = []
        for a in self.vae.architectures:
            for d in self.vae.latent_dims:
                for m in range(self.vae.members):
                    arch = architecture_for(self, a, d)
                    out.append((f"{a.name}-D{d}-m{m}", a, arch, d, m))
        return out


def architecture_for(cfg: RunConfig, a: ArchConfig, latent_dim: int) -> VaeArchitecture:
    d = cfg.data
    if d.source == "synthetic":
        shape = (1, d.synthetic.image_size, d.synthetic.image_size)
    else:
        shape = (d.directory.channels, d.directory.crop_size, d.directory.crop_size)
    return VaeArchitecture(
        input_shape=shape, latent_dim=latent_dim, encoder_conv=a.encoder_conv,
        encoder_widths=a.encoder_widths, decoder_dense=a.decoder_dense,
        decoder_blocks=a.decoder_blocks, decoder_filters=a.decoder_filters, activation=a.activation,
    )


def _build(cls, value, where: str):
    if dataclasses.is_dataclass(cls):
        if value is None:
            return cls()
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a mapping")
        hints = typing.get_type_hints(cls)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(value) - names
        if unknown:
            raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
        kwargs = {k: _build(hints[k], v, f"{where}.{k}") for k, v in value.items()}
        return cls(**kwargs)
    origin = typing.get_origin(cls)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        (item,) = typing.get_args(cls)[:1]
        return tuple(_build(item, v, f"{where}[{i}]") for i, v in enumerate(value))
    if cls is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a mapping")
        return value
    if cls is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false")
        return value
    if cls is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if cls is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if cls is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    raise ConfigError(f"{where}: unsupported type {cls}")


def from_dict(raw: dict | None) -> RunConfig:
    cfg = _build(RunConfig, raw or {}, "config")
    validate(cfg)
    return cfg


def to_dict(cfg) -> dict:
    return json.loads(json.dumps(dataclasses.asdict(cfg)))


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    return from_dict(raw)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=True)


def validate(cfg: RunConfig) -> None:
    d = cfg.data
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if d.source not in ("synthetic", "directory"):
        raise ConfigError("data.source must be 'synthetic' or 'directory'")
    if abs(d.train_fraction + d.validation_fraction - 1.0) > 1e-9 or min(d.train_fraction, d.validation_fraction) <= 0:
        raise ConfigError("split fractions must be positive and sum to 1")
    if d.group_pattern:
        try:
            re.compile(d.group_pattern)
        except re.error as exc:
            raise ConfigError(f"data.group_pattern: {exc}") from None
    if d.source == "directory":
        dc = d.directory
        if not dc.labels_csv or not dc.test_labels_csv:
            raise ConfigError("directory source needs labels_csv and test_labels_csv")
        for p in (dc.labels_csv, dc.test_labels_csv, dc.template):
            if p and not Path(p).exists():
                raise ConfigError(f"referenced path does not exist: {p}")
    elif d.synthetic.n < 2 or d.synthetic.n_test < 2:
        raise ConfigError("synthetic n and n_test must be >= 2")
    unknown = set(cfg.labels.eval_classes) - set(CLASS_NAMES)
    if unknown:
        raise ConfigError(f"unknown evaluation classes {sorted(unknown)}")
    bad = set(cfg.classifiers.kinds) - set(ALL_KINDS)
    if bad:
        raise ConfigError(f"unknown classifier kinds {sorted(bad)}")
    for m in cfg.ensemble.methods:
        try:
            Method(m)
        except ValueError:
            raise ConfigError(f"unknown ensemble method {m!r}") from None
    names = [a.name for a in cfg.vae.architectures]
    if len(set(names)) != len(names) or not names:
        raise ConfigError("architecture names must be unique and non-empty")
    if cfg.vae.members < 1 or not cfg.vae.latent_dims:
        raise ConfigError("need at least one latent dim and one member")
    try:
        policy_from_name(cfg.labels.policy, cfg.labels.lsr_alpha, cfg.labels.lsr_beta)
        for a in cfg.vae.architectures:
            for dim in cfg.vae.latent_dims:
                architecture_for(cfg, a, dim)
        if not 0 < cfg.labels.threshold < 1:
            raise ConfigError("labels.threshold must lie in (0, 1)")
    except CxrVaeError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
