"""On-disk artifact formats: embedding files, VAE checkpoints, manifest.

All binary numbers are little-endian; float blocks are IEEE float64.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..classifiers.table import EmbeddingTable
from ..errors import DataError, StructuralError
from ..numerics import AdamState
from ..vae.model import VaeArchitecture, VaeParams
from ..vae.schedules import BetaSchedule
from ..vae.training import EpochLog, TrainConfig, TrainState


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write(path, data: bytes | str) -> None:
    """Write via a sibling temp file and rename, so readers never see partial files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode) as fh:
        fh.write(data)
    os.replace(tmp, path)


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise DataError(f"truncated file {getattr(fh, 'name', '')}")
    return buf


# --------------------------------------------------------------- embeddings
#
# "LBE1" | u32 version | u64 rows | u32 dim | u32 classes | u32 meta length
# | meta JSON (source tag, class names, row ids) | rows*dim f8 | rows*classes u8

EMB_MAGIC = b"LBE1"
EMB_VERSION = 1


@dataclass(frozen=True)
class EmbeddingFile:
    table: EmbeddingTable
    source: str
    split: str


def embedding_bytes(ef: EmbeddingFile) -> bytes:
    t = ef.table
    meta = json.dumps({"source": ef.source, "split": ef.split, "class_names": list(t.class_names),
                       "row_ids": list(t.row_ids)}, sort_keys=True).encode()
    out = io.BytesIO()
    out.write(EMB_MAGIC)
    out.write(struct.pack("<IQIII", EMB_VERSION, t.n_rows, t.dim, t.n_classes, len(meta)))
    out.write(meta)
    out.write(t.features.astype("<f8").tobytes())
    out.write(t.targets.astype(np.uint8).tobytes())
    return out.getvalue()


def write_embeddings(ef: EmbeddingFile, path) -> None:
    atomic_write(path, embedding_bytes(ef))


def read_embeddings(path) -> EmbeddingFile:
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        if fh.read(4) != EMB_MAGIC:
            raise DataError(f"{path}: not an embedding file")
        version, rows, dim, k, mlen = struct.unpack("<IQIII", _read_exact(fh, 24))
        if version != EMB_VERSION:
            raise DataError(f"{path}: unsupported embedding file version {version}")
        expected = 4 + 24 + mlen + rows * dim * 8 + rows * k
        if size != expected:
            raise DataError(f"{path}: length {size} does not match header ({expected})")
        meta = json.loads(_read_exact(fh, mlen).decode())
        feats = np.frombuffer(_read_exact(fh, rows * dim * 8), dtype="<f8").reshape(rows, dim)
        targ = np.frombuffer(_read_exact(fh, rows * k), dtype=np.uint8).reshape(rows, k)
    table = EmbeddingTable(feats.astype(np.float64), targ.astype(bool), tuple(meta["row_ids"]),
                           tuple(meta["class_names"]))
    return EmbeddingFile(table, meta["source"], meta["split"])


# -------------------------------------------------------------- checkpoints
#
# "CXV1" | u32 version | u32 header length | header JSON | params f8
# | adam first moment f8 | adam second moment f8

CKPT_MAGIC = b"CXV1"
CKPT_VERSION = 1


@dataclass(frozen=True)
class Checkpoint:
    state: TrainState
    config: TrainConfig
    schedule: BetaSchedule
    # digest of the run configuration and of the manifest the model was trained on
    run_digest: str = ""
    data_digest: str = ""

    @property
    def complete(self) -> bool:
        return self.state.epochs_done >= self.config.epochs


def checkpoint_bytes(ck: Checkpoint) -> bytes:
    s = ck.state
    header = {
        "arch": s.params.arch.to_dict(),
        "schedule": dataclasses.asdict(ck.schedule),
        "train_config": dataclasses.asdict(ck.config),
        "train_config_digest": ck.config.digest(),
        "run_digest": ck.run_digest,
        "data_digest": ck.data_digest,
        "epochs_done": s.epochs_done,
        "lr": s.lr,
        "val_history": list(s.val_history),
        "last_reduction": s.last_reduction,
        "log": [[e.epoch, e.rec_loss, e.kl_loss, e.beta, e.lr, e.val_loss] for e in s.log],
        "adam": {"step": s.adam.step, "lr": s.adam.lr, "beta1": s.adam.beta1, "beta2": s.adam.beta2,
                 "epsilon": s.adam.epsilon},
        "n_params": int(s.params.flat.size),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    out = io.BytesIO()
    out.write(CKPT_MAGIC)
    out.write(struct.pack("<II", CKPT_VERSION, len(blob)))
    out.write(blob)
    for arr in (s.params.flat, s.adam.m, s.adam.v):
        out.write(np.asarray(arr).astype("<f8").tobytes())
    return out.getvalue()


def write_checkpoint(ck: Checkpoint, path) -> None:
    atomic_write(path, checkpoint_bytes(ck))


def read_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        if fh.read(4) != CKPT_MAGIC:
            raise DataError(f"{path}: not a VAE checkpoint")
        version, hlen = struct.unpack("<II", _read_exact(fh, 8))
        if version != CKPT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        h = json.loads(_read_exact(fh, hlen).decode())
        n = h["n_params"]
        blocks = [np.frombuffer(_read_exact(fh, 8 * n), dtype="<f8").astype(np.float64) for _ in range(3)]
        if fh.read(1):
            raise DataError(f"{path}: trailing bytes")
    arch = VaeArchitecture.from_dict(h["arch"])
    params = VaeParams(arch, blocks[0])
    if params.flat.size != params.network.n_params:
        raise StructuralError(f"{path}: parameter count does not match the architecture")
    a = h["adam"]
    adam = AdamState(blocks[1], blocks[2], a["step"], a["lr"], a["beta1"], a["beta2"], a["epsilon"])
    log = [EpochLog(int(r[0]), *map(float, r[1:])) for r in h["log"]]
    state = TrainState(params, adam, h["epochs_done"], h["lr"], list(h["val_history"]),
                       h["last_reduction"], log)
    tc = dict(h["train_config"])
    tc["frozen"] = tuple(tc.get("frozen", ()))
    return Checkpoint(state, TrainConfig(**tc), BetaSchedule(**h["schedule"]), h["run_digest"],
                      h["data_digest"])


# ----------------------------------------------------------------- manifest

SPLITS = ("train", "validation", "test")
# stages allowed to read each split's images/labels
SPLIT_READERS = {
    "train": ("train-vae", "extract", "report"),
    "validation": ("train-vae", "extract", "report"),
    "test": ("extract", "evaluate"),
}


@dataclass(frozen=True)
class Manifest:
    """Every prepared item with its split and content digest."""

    entries: tuple[dict, ...]
    # split -> {"images": relative path, "labels": relative path, digests}
    splits: dict
    config_digest: str

    def to_json(self) -> str:
        return json.dumps({"config_digest": self.config_digest, "splits": self.splits,
                           "entries": list(self.entries)}, sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Manifest":
        d = json.loads(text)
        return cls(tuple(d["entries"]), d["splits"], d["config_digest"])

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def check_access(self, split: str, stage: str) -> None:
        if split not in SPLITS:
            raise StructuralError(f"unknown split {split!r}")
        if stage not in SPLIT_READERS[split]:
            raise DataError(f"stage {stage!r} may not read the {split} split")
