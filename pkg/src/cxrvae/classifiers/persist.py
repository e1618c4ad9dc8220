"""Binary model files.

Layout (little-endian): ``b"CXM1"``, u32 format version, u32 header length,
UTF-8 JSON header, then for every tree in header order: u32 node count
followed by the node arrays feature (i4), threshold (f8), left (i4),
right (i4), value (f8), count (i4). KNN files carry no trees; the header
names the embedding table by content digest and the caller supplies it.
"""

from __future__ import annotations

import dataclasses
import io
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import DataError, StructuralError
from .models import (
    ForestModel, ForestParams, GbmModel, GbmParams, KnnModel, fit_knn,
)
from .table import EmbeddingTable
from .tree import Tree

MAGIC = b"CXM1"
VERSION = 1
_FIELDS = (("feature", "<i4"), ("threshold", "<f8"), ("left", "<i4"),
           ("right", "<i4"), ("value", "<f8"), ("count", "<i4"))


def _write_tree(fh, tree: Tree) -> None:
    fh.write(struct.pack("<I", tree.n_nodes))
    for name, dt in _FIELDS:
        fh.write(np.asarray(getattr(tree, name)).astype(dt).tobytes())


def _read_tree(fh) -> Tree:
    raw = fh.read(4)
    if len(raw) != 4:
        raise DataError("truncated model file")
    (n,) = struct.unpack("<I", raw)
    arrays = {}
    for name, dt in _FIELDS:
        nbytes = n * np.dtype(dt).itemsize
        buf = fh.read(nbytes)
        if len(buf) != nbytes:
            raise DataError("truncated model file")
        arrays[name] = np.frombuffer(buf, dtype=dt).astype(dt[1:])
    return Tree(**arrays)


def model_bytes(model, extra: dict | None = None) -> bytes:
    header = {"extra": extra or {}, "kind": model.kind, "seed": int(model.seed), "dim": int(model.dim),
              "class_names": list(model.class_names),
              "params": dataclasses.asdict(model.params)}
    groups: list[list[Tree]] = []
    if isinstance(model, ForestModel):
        groups = model.trees
        header["degenerate"] = list(model.degenerate)
    elif isinstance(model, GbmModel):
        groups = model.stages
        header["degenerate"] = list(model.degenerate)
        header["init_score"] = [float(v) if np.isfinite(v) else str(v) for v in model.init_score]
    elif isinstance(model, KnnModel):
        header["table_digest"] = model.table_digest
    else:
        raise StructuralError(f"cannot serialize {type(model).__name__}")
    header["trees_per_class"] = [len(g) for g in groups]
    blob = json.dumps(header, sort_keys=True).encode()
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<II", VERSION, len(blob)))
    out.write(blob)
    for g in groups:
        for tree in g:
            _write_tree(out, tree)
    return out.getvalue()


def save_model(model, path, extra: dict | None = None) -> None:
    """``extra`` is stored verbatim in the header (e.g. provenance references)."""
    Path(path).write_bytes(model_bytes(model, extra))


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        return _header(fh)


def _header(fh) -> dict:
    if fh.read(4) != MAGIC:
        raise DataError("not a model file (bad magic)")
    version, hlen = struct.unpack("<II", fh.read(8))
    if version != VERSION:
        raise DataError(f"unsupported model file version {version}")
    return json.loads(fh.read(hlen).decode())


def load_model(path, table: EmbeddingTable | None = None):
    """Read a model file. KNN models need the embedding table they were fitted
    on; its digest must match the one recorded in the file."""
    with open(path, "rb") as fh:
        h = _header(fh)
        kind = h["kind"]
        names = tuple(h["class_names"])
        if kind == "KNN":
            if table is None:
                raise DataError(f"KNN model needs its embedding table (digest {h['table_digest'][:12]})")
            if table.digest() != h["table_digest"]:
                raise DataError("embedding table digest does not match the KNN model")
            return fit_knn(table, h["params"]["k"], h["params"].get("metric", "euclidean"))
        groups = [[_read_tree(fh) for _ in range(n)] for n in h["trees_per_class"]]
        if fh.read(1):
            raise DataError("trailing bytes in model file")
    if kind in ("RF", "XRT"):
        return ForestModel(kind, ForestParams(**h["params"]), h["seed"], h["dim"], names, groups,
                           tuple(h["degenerate"]))
    if kind == "GB":
        init = np.array([float(v) for v in h["init_score"]])
        return GbmModel(GbmParams(**h["params"]), h["seed"], h["dim"], names, init, groups,
                        tuple(h["degenerate"]))
    raise DataError(f"unknown model kind {kind!r}")
