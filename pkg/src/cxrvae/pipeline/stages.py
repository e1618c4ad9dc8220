"""The pipeline stages. Each ``cmd_*`` function operates on one run directory.

Layout of a run directory::

    config.yaml            resolved configuration written by prepare
    manifest.json          every item with split and digest
    data/                  source images (synthetic runs) and label CSVs
    prepared/<split>.npy   preprocessed image tensors (N, C, H, W)
    vae/<tag>/             checkpoint.bin, train_log.csv
    embeddings/<tag>.<split>.lbe
    models/<tag>.<kind>.cxm, models/scores.csv
    evaluation/            per-model report CSVs, ROC points, evaluation.csv/json
    report/                summary.md, summary.csv, reconstructions.png
    records/<stage>.json   input/output digests for the digest chain
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import os
import re
import warnings
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..classifiers.grid import GridSpec, grid_search
from ..classifiers.models import params_from_dict, table2_params, fit_model
from ..classifiers.persist import load_model, read_header, save_model
from ..classifiers.table import EmbeddingTable
from ..ensemble import Method, PredictionMatrix, SourceTag, combine
from ..errors import ConfigError, CxrVaeError, DataError, StructuralError
from ..imaging import (
    DegenerateMatchWarning, SyntheticSpec, as_gray, generate_synthetic_dataset, load_gray, preprocess,
    resize_bilinear, save_gray,
)
from ..labels import CLASS_NAMES, binarize_targets, policy_from_name, read_label_csv, resolve_records, write_label_csv
from ..metrics import AurocReport, auroc_report, report_csv, roc_csv
from ..numerics import RngStream
from ..vae.model import decode, encode
from ..vae.schedules import BetaSchedule
from ..vae.training import TrainConfig, extract_embeddings, train, write_training_log
from .config import RunConfig, dump_config, load_config, to_dict
from .formats import (
    Checkpoint, EmbeddingFile, Manifest, file_digest, read_checkpoint, read_embeddings,
    write_checkpoint, write_embeddings, atomic_write,
)

log = logging.getLogger(__name__)

ENSEMBLE_LABELS = {Method.SIMPLE: "Avg", Method.ENTROPY: "Entropy Avg",
                   Method.ENTROPY_NORMALIZED: "Norm Entropy Avg"}


# ------------------------------------------------------------------ helpers

@dataclass(frozen=True)
class RunDir:
    root: Path

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root))

    def __truediv__(self, other) -> Path:
        return self.root / other

    @property
    def manifest(self) -> Path:
        return self.root / "manifest.json"

    @property
    def config(self) -> Path:
        return self.root / "config.yaml"

    def rel(self, path) -> str:
        return Path(path).relative_to(self.root).as_posix()

    def checkpoint(self, tag: str) -> Path:
        return self.root / "vae" / tag / "checkpoint.bin"

    def embedding(self, tag: str, split: str) -> Path:
        return self.root / "embeddings" / f"{tag}.{split}.lbe"

    def model(self, tag: str, kind: str) -> Path:
        return self.root / "models" / f"{tag}.{kind}.cxm"


@contextmanager
def run_lock(root: Path):
    """Exclusive use of an output directory by one process."""
    root.mkdir(parents=True, exist_ok=True)
    lock = root / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        pid = lock.read_text().strip() or "?"
        raise DataError(f"{root} is locked by process {pid} (remove {lock} if that process is gone)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _data_digest(cfg: RunConfig) -> str:
    d = to_dict(cfg)
    blob = json.dumps({"seed": d["seed"], "data": d["data"], "labels": d["labels"]}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def resolve_config(run: RunDir, config_path=None, seed: int | None = None, stage: str = "") -> RunConfig:
    """Config for a stage: the given file, else the one stored by prepare.

    After prepare, the data, label and seed settings must not change."""
    if config_path is not None:
        cfg = load_config(config_path)
    elif run.config.exists():
        cfg = load_config(run.config)
    else:
        cfg = RunConfig()
    if seed is not None:
        if not 0 <= seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        cfg = dataclasses.replace(cfg, seed=int(seed))
    if stage != "prepare" and run.config.exists():
        stored = load_config(run.config)
        if _data_digest(stored) != _data_digest(cfg):
            raise ConfigError("data, label or seed settings differ from the ones used by prepare")
    return cfg


def _record(run: RunDir, stage: str, inputs, outputs) -> None:
    rec = {"stage": stage,
           "inputs": {run.rel(p): file_digest(p) for p in sorted(set(map(Path, inputs)))},
           "outputs": {run.rel(p): file_digest(p) for p in sorted(set(map(Path, outputs)))}}
    atomic_write(run / "records" / f"{stage}.json", json.dumps(rec, indent=1, sort_keys=True) + "\n")


def load_manifest(run: RunDir) -> Manifest:
    if not run.manifest.exists():
        raise DataError(f"{run.manifest} not found; run 'prepare' first")
    return Manifest.from_json(run.manifest.read_text())


def load_split(run: RunDir, manifest: Manifest, split: str, stage: str):
    """``(images, records)`` of a prepared split, enforcing split access rules."""
    manifest.check_access(split, stage)
    info = manifest.splits[split]
    images_path, labels_path = run / info["images"], run / info["labels"]
    for p, key in ((images_path, "images_digest"), (labels_path, "labels_digest")):
        if not p.exists():
            raise DataError(f"missing prepared file {p}")
        if file_digest(p) != info[key]:
            raise DataError(f"{p} does not match its manifest digest")
    return np.load(images_path), read_label_csv(labels_path)


def resolved_targets(cfg: RunConfig, records, split: str) -> np.ndarray:
    lc = cfg.labels
    policy = policy_from_name(lc.policy, lc.lsr_alpha, lc.lsr_beta)
    rng = RngStream(cfg.seed, "lsr").split(split)
    soft = resolve_records(records, policy, rng, lc.unmentioned)
    cols = [CLASS_NAMES.index(c) for c in lc.eval_classes]
    return binarize_targets(soft, lc.threshold)[:, cols]


# ------------------------------------------------------------------ prepare

def _synthetic_items(cfg: RunConfig, run: RunDir):
    s = cfg.data.synthetic
    common = dict(image_size=s.image_size, noise_level=s.noise_level, amplitude=s.amplitude,
                  background=s.background, nuisance=s.nuisance, amplitude_jitter=s.amplitude_jitter,
                  label_noise=s.label_noise, uncertain_fraction=s.uncertain_fraction)
    out = {}
    for part, n, stream in (("pool", s.n, "synthetic"), ("test", s.n_test, "synthetic-test")):
        spec = SyntheticSpec(seed=cfg.derived_seed(stream), **common)
        images, records = generate_synthetic_dataset(spec, n, prefix=part)
        folder = run / "data" / part
        folder.mkdir(parents=True, exist_ok=True)
        items = []
        for img, rec in zip(images, records):
            path = folder / rec.path
            save_gray(img, path, bits=16)
            items.append((path, rec))
        out[part] = items
    return out["pool"], out["test"]


def _directory_items(cfg: RunConfig):
    dc = cfg.data.directory

    def read(csv_path, root):
        base = Path(root) if root else Path(csv_path).parent
        return [(base / r.path, r) for r in read_label_csv(csv_path)]

    return read(dc.labels_csv, dc.root), read(dc.test_labels_csv, dc.test_root)


def _default_template(cfg: RunConfig, paths) -> np.ndarray:
    # centre of the mean resized image of up to 100 training images
    dc = cfg.data.directory
    acc, n = None, 0
    for p in paths[:100]:
        try:
            img = resize_bilinear(load_gray(p), dc.resize_to, dc.resize_to)
        except CxrVaeError:
            continue
        acc = img if acc is None else acc + img
        n += 1
    if n == 0:
        raise DataError("no readable training image to build a template from")
    mean = acc / n
    size = max(1, dc.crop_size // 2)
    o = (dc.resize_to - size) // 2
    return mean[o:o + size, o:o + size]


def _ingest(cfg: RunConfig, items, template, errors: list):
    """Load and preprocess images; failures are collected, not raised."""
    arrays, kept = [], []
    synthetic = cfg.data.source == "synthetic"
    dc = cfg.data.directory
    for path, rec in items:
        try:
            img = load_gray(path)
            if synthetic:
                x = img[None, :, :]
            else:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", DegenerateMatchWarning)
                    x, degenerate = preprocess(img, template, dc.resize_to, dc.crop_size, dc.channels)
                if degenerate:
                    log.warning("%s: template match undefined, centre crop used", path)
        except CxrVaeError as exc:
            errors.append((str(path), str(exc)))
            continue
        arrays.append(x)
        kept.append((path, rec))
    return arrays, kept


def _split_rows(cfg: RunConfig, paths) -> dict:
    """Random train/validation row indices; whole groups move together when
    ``data.group_pattern`` is set."""
    n = len(paths)
    rng = RngStream(cfg.seed, "split").generator
    n_train = min(max(int(round(cfg.data.train_fraction * n)), 1), n - 1)
    if not cfg.data.group_pattern:
        order = rng.permutation(n)
        return {"train": order[:n_train], "validation": order[n_train:]}
    pattern = re.compile(cfg.data.group_pattern)
    groups: dict[str, list[int]] = {}
    for i, p in enumerate(paths):
        m = pattern.search(p)
        groups.setdefault(m.group(0) if m else p, []).append(i)
    keys = list(groups)
    train, val = [], []
    for g in rng.permutation(len(keys)):
        (train if len(train) < n_train else val).extend(groups[keys[g]])
    if not val:
        raise DataError("grouping left the validation split empty")
    return {"train": np.array(train), "validation": np.array(val)}


def cmd_prepare(cfg: RunConfig, out) -> Manifest:
    """Generate or ingest images, preprocess, split 90/10 (configurable) and
    write the manifest. The test set is prepared but never read here again."""
    run = RunDir(out)
    run.root.mkdir(parents=True, exist_ok=True)
    if cfg.data.source == "synthetic":
        pool, test = _synthetic_items(cfg, run)
    else:
        pool, test = _directory_items(cfg)
    template = None
    if cfg.data.source == "directory":
        dc = cfg.data.directory
        template = as_gray(load_gray(dc.template)) if dc.template else _default_template(cfg, [p for p, _ in pool])

    errors: list = []
    pool_x, pool_items = _ingest(cfg, pool, template, errors)
    test_x, test_items = _ingest(cfg, test, template, errors)
    total = len(pool) + len(test)
    if errors:
        with open(run / "prepare_errors.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path", "error"])
            w.writerows(errors)
        limit = cfg.data.directory.max_failure_rate
        if len(errors) > limit * total:
            listing = "\n".join(f"  {p}: {e}" for p, e in errors[:20])
            raise DataError(f"{len(errors)} of {total} items failed (limit {limit:.0%}):\n{listing}")
        log.warning("%d of %d items failed; see prepare_errors.csv", len(errors), total)
    if len(pool_items) < 2 or not test_items:
        raise DataError("not enough readable items to form train, validation and test splits")

    parts = _split_rows(cfg, [rec.path for _, rec in pool_items])

    prepared = run / "prepared"
    prepared.mkdir(parents=True, exist_ok=True)
    entries, splits = [], {}

    def emit(split, xs, items):
        img_path, lab_path = prepared / f"{split}.npy", prepared / f"{split}_labels.csv"
        np.save(img_path, np.stack(xs).astype("<f8"), allow_pickle=False)
        with open(lab_path, "w", newline="") as fh:
            write_label_csv([rec for _, rec in items], fh)
        splits[split] = {"images": run.rel(img_path), "labels": run.rel(lab_path), "n": len(items),
                         "images_digest": file_digest(img_path), "labels_digest": file_digest(lab_path)}
        for path, rec in items:
            entries.append({"path": rec.path, "split": split, "digest": file_digest(path)})

    for split, idx in parts.items():
        emit(split, [pool_x[i] for i in idx], [pool_items[i] for i in idx])
    emit("test", test_x, test_items)

    manifest = Manifest(tuple(entries), splits, _data_digest(cfg))
    atomic_write(run.config, dump_config(cfg))
    atomic_write(run.manifest, manifest.to_json())
    _record(run, "prepare", [], [run.manifest, run.config] + [run / s[k] for s in splits.values()
                                                              for k in ("images", "labels")])
    log.info("prepared %s", {k: v["n"] for k, v in splits.items()})
    return manifest


# ---------------------------------------------------------------- train-vae

def _train_config(cfg: RunConfig, tag: str, frozen) -> TrainConfig:
    v = cfg.vae
    return TrainConfig(epochs=v.epochs, initial_lr=v.initial_lr, lr_patience=v.lr_patience,
                       batch_size=v.batch_size, seed=cfg.derived_seed(f"vae/{tag}"),
                       adam_beta1=v.adam_beta1, adam_beta2=v.adam_beta2, adam_epsilon=v.adam_epsilon,
                       frozen=tuple(frozen))


def _schedule(cfg: RunConfig) -> BetaSchedule:
    v = cfg.vae
    return BetaSchedule(v.beta_warmup_epochs, v.beta_base, v.beta_growth, v.beta_restart_exponent)


def _train_one(job):
    run_root, tag, arch, tcfg, sched, run_digest, data_digest, x, xv, stop_after = job
    run = RunDir(run_root)
    path = run.checkpoint(tag)
    state = None
    if path.exists():
        ck = read_checkpoint(path)
        if ck.config.digest() != tcfg.digest() or ck.state.params.arch != arch or ck.data_digest != data_digest:
            log.info("%s: configuration changed, retraining from scratch", tag)
        elif ck.complete:
            log.info("%s: already trained", tag)
            return tag
        else:
            log.info("%s: resuming after epoch %d", tag, ck.state.epochs_done)
            state = ck.state

    def save(st):
        write_checkpoint(Checkpoint(st, tcfg, sched, run_digest, data_digest), path)
        write_training_log(st.log, path.parent / "train_log.csv")

    final = train(arch, x, xv, tcfg, sched, state=state, on_epoch=save, stop_after=stop_after)
    save(final)
    return tag


def cmd_train_vae(cfg: RunConfig, out, parallelism: int = 1, stop_after: int | None = None) -> list[Path]:
    """One checkpoint per (architecture, latent dim, member). Checkpoints are
    rewritten after every epoch, and an interrupted run resumes from them."""
    run = RunDir(out)
    manifest = load_manifest(run)
    x, _ = load_split(run, manifest, "train", "train-vae")
    xv, _ = load_split(run, manifest, "validation", "train-vae")
    sched = _schedule(cfg)
    jobs = []
    for tag, a, arch, _, _ in cfg.vae_runs():
        run.checkpoint(tag).parent.mkdir(parents=True, exist_ok=True)
        jobs.append((str(run.root), tag, arch, _train_config(cfg, tag, a.frozen), sched, cfg.digest(),
                     manifest.digest(), x, xv, stop_after))
    if parallelism > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(min(parallelism, len(jobs))) as pool:
            list(pool.map(_train_one, jobs))
    else:
        for job in jobs:
            _train_one(job)
    paths = [run.checkpoint(j[1]) for j in jobs]
    if stop_after is None:
        _record(run, "train-vae", [run.manifest], paths)
    return paths


# ------------------------------------------------------------------ extract

EXTRACT_SPLITS = ("validation", "test")


def cmd_extract(cfg: RunConfig, out, splits=EXTRACT_SPLITS) -> list[Path]:
    """Embed the classifier-training (validation) and test splits with every VAE."""
    run = RunDir(out)
    manifest = load_manifest(run)
    data = {s: load_split(run, manifest, s, "extract") for s in splits}
    targets = {s: resolved_targets(cfg, data[s][1], s) for s in splits}
    written, inputs = [], [run.manifest]
    for tag, _, arch, _, _ in cfg.vae_runs():
        ck_path = run.checkpoint(tag)
        if not ck_path.exists():
            raise DataError(f"missing checkpoint {ck_path}; run 'train-vae' first")
        ck = read_checkpoint(ck_path)
        if not ck.complete:
            raise DataError(f"{ck_path} is incomplete ({ck.state.epochs_done}/{ck.config.epochs} epochs)")
        if ck.state.params.arch != arch:
            raise StructuralError(f"{ck_path} architecture does not match the configuration")
        inputs.append(ck_path)
        for split in splits:
            images, records = data[split]
            rng = RngStream(cfg.seed, "embedding-sample").split(f"{tag}/{split}")
            feats = extract_embeddings(ck.state.params, images, sampled=cfg.vae.sampled_embeddings, rng=rng)
            table = EmbeddingTable(feats, targets[split], tuple(r.path for r in records),
                                   tuple(cfg.labels.eval_classes))
            path = run.embedding(tag, split)
            write_embeddings(EmbeddingFile(table, tag, split), path)
            written.append(path)
    _record(run, "extract", inputs, written)
    return written


# ---------------------------------------------------------------- train-clf

def _hyperparams(cfg: RunConfig, kind: str):
    base = table2_params(kind, full=cfg.classifiers.full_forests)
    overrides = cfg.classifiers.params.get(kind, {})
    if not overrides:
        return base
    merged = {**dataclasses.asdict(base), **overrides}
    try:
        return params_from_dict(kind, merged)
    except (TypeError, CxrVaeError) as exc:
        raise ConfigError(f"classifiers.params.{kind}: {exc}") from exc


def cmd_train_clf(cfg: RunConfig, out, parallelism: int = 1) -> list[Path]:
    """Fit every classifier kind on every VAE's validation-split embeddings."""
    run = RunDir(out)
    rows, written, inputs = [], [], []
    for tag, *_ in cfg.vae_runs():
        emb_path = run.embedding(tag, "validation")
        if not emb_path.exists():
            raise DataError(f"missing {emb_path}; run 'extract' first")
        inputs.append(emb_path)
        table = read_embeddings(emb_path).table
        for kind in cfg.classifiers.kinds:
            params = _hyperparams(cfg, kind)
            seed = cfg.derived_seed(f"clf/{tag}/{kind}")
            score = float("nan")
            if kind in cfg.classifiers.grid:
                rng = RngStream(cfg.seed, f"grid/{tag}").generator
                perm = rng.permutation(table.n_rows)
                n_hold = max(1, int(round(cfg.classifiers.grid_holdout * table.n_rows)))
                try:
                    spec = GridSpec(dict(cfg.classifiers.grid[kind]))
                    result = grid_search(table.subset(np.sort(perm[n_hold:])), table.subset(np.sort(perm[:n_hold])),
                                         spec, kind, seed)
                except TypeError as exc:
                    raise ConfigError(f"classifiers.grid.{kind}: {exc}") from exc
                params, score = result.best, result.best_score
            model = fit_model(kind, table, params, seed, n_jobs=parallelism)
            path = run.model(tag, kind)
            path.parent.mkdir(parents=True, exist_ok=True)
            save_model(model, path, extra={"embedding": run.rel(emb_path), "source": tag})
            written.append(path)
            rows.append([tag, kind, json.dumps(dataclasses.asdict(params), sort_keys=True),
                         "" if np.isnan(score) else repr(score)])
    scores = run / "models" / "scores.csv"
    with open(scores, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "kind", "params", "heldout_mean_auroc"])
        w.writerows(rows)
    _record(run, "train-clf", inputs, written + [scores])
    return written


# ----------------------------------------------------------------- evaluate

@dataclass(frozen=True)
class EvalRow:
    tag: str
    kind: str
    latent_dim: int
    role: str          # "member" or "ensemble"
    method: str        # "" for members
    members: tuple[str, ...]
    report: AurocReport

    def to_json(self) -> dict:
        r = self.report
        return {"tag": self.tag, "kind": self.kind, "latent_dim": self.latent_dim, "role": self.role,
                "method": self.method, "members": list(self.members), "class_names": list(r.class_names),
                "per_class": [None if np.isnan(v) else v for v in r.per_class],
                "mean": None if np.isnan(r.mean) else r.mean, "bands": list(r.bands),
                "excluded": list(r.excluded)}


def cmd_evaluate(cfg: RunConfig, out) -> list[EvalRow]:
    """Score every model on the test embeddings, then ensemble each classifier
    kind across VAE sources of the same latent size."""
    run = RunDir(out)
    manifest = load_manifest(run)
    manifest.check_access("test", "evaluate")
    names = tuple(cfg.labels.eval_classes)
    ev_dir = run / "evaluation"
    (ev_dir / "models").mkdir(parents=True, exist_ok=True)
    (ev_dir / "roc").mkdir(parents=True, exist_ok=True)
    rows: list[EvalRow] = []
    preds: dict[tuple[str, int], list[PredictionMatrix]] = {}
    targets, row_ids, inputs = None, None, []
    for tag, _, _, dim, _ in cfg.vae_runs():
        test_path = run.embedding(tag, "test")
        if not test_path.exists():
            raise DataError(f"missing {test_path}; run 'extract' first")
        test = read_embeddings(test_path).table
        inputs.append(test_path)
        if row_ids is None:
            row_ids, targets = test.row_ids, test.targets
        elif test.row_ids != row_ids or not np.array_equal(test.targets, targets):
            raise StructuralError(f"{test_path} rows are not aligned with the other test embeddings")
        for kind in cfg.classifiers.kinds:
            path = run.model(tag, kind)
            if not path.exists():
                raise DataError(f"missing {path}; run 'train-clf' first")
            inputs.append(path)
            table = None
            if kind == "KNN":
                ref = run / read_header(path)["extra"]["embedding"]
                table = read_embeddings(ref).table
            model = load_model(path, table)
            P = PredictionMatrix(model.predict_proba(test.features), SourceTag(tag, kind, dim), test.row_ids)
            rep = auroc_report(P, test.targets, names, tag=f"{tag}-{kind}")
            report_csv([rep], ev_dir / "models" / f"{tag}.{kind}.csv")
            roc_csv(P, test.targets, names, ev_dir / "roc" / f"{tag}.{kind}.csv")
            rows.append(EvalRow(rep.tag, kind, dim, "member", "", (tag,), rep))
            preds.setdefault((kind, dim), []).append(P)

    for (kind, dim), members in preds.items():
        for m in cfg.ensemble.methods:
            method = Method(m)
            ens = combine(members, method)
            label = f"{ENSEMBLE_LABELS[method]}-{kind}-D{dim}"
            rep = auroc_report(ens.values, targets, names, tag=label)
            rows.append(EvalRow(label, kind, dim, "ensemble", method.value,
                                tuple(p.tag.vae for p in members), rep))

    rows.sort(key=lambda r: (r.latent_dim, r.role != "member"))
    report_csv([r.report for r in rows], ev_dir / "evaluation.csv")
    atomic_write(ev_dir / "evaluation.json", json.dumps([r.to_json() for r in rows], indent=1) + "\n")
    _record(run, "evaluate", inputs, [ev_dir / "evaluation.csv", ev_dir / "evaluation.json"])
    return rows


# ------------------------------------------------------------------- report

EXPECTED = ("config.yaml", "manifest.json", "records/prepare.json", "records/train-vae.json",
            "records/extract.json", "records/train-clf.json", "records/evaluate.json",
            "evaluation/evaluation.json")


def verify_digest_chain(run: RunDir) -> list[str]:
    """Problems found while checking every recorded digest against the files
    on disk and against the digest recorded by the producing stage."""
    problems, produced = [], {}
    for stage in ("prepare", "train-vae", "extract", "train-clf", "evaluate"):
        path = run / "records" / f"{stage}.json"
        if not path.exists():
            continue
        rec = json.loads(path.read_text())
        for rel, digest in rec["inputs"].items():
            if rel in produced and produced[rel] != digest:
                problems.append(f"{stage}: input {rel} differs from what {produced[rel + '#stage']} produced")
        for rel, digest in rec["outputs"].items():
            p = run / rel
            if not p.exists():
                problems.append(f"{stage}: output {rel} is missing")
            elif file_digest(p) != digest:
                problems.append(f"{stage}: output {rel} changed after it was written")
            produced[rel] = digest
            produced[rel + "#stage"] = stage
    return problems


def _reconstruction_grid(cfg: RunConfig, run: RunDir, manifest: Manifest, path: Path) -> int:
    """Rows: validation images; columns: the original, then one per checkpoint."""
    images, _ = load_split(run, manifest, "validation", "report")
    images = images[:cfg.report.reconstruction_rows]
    columns = [images[:, 0]]
    for tag, *_ in cfg.vae_runs():
        ck_path = run.checkpoint(tag)
        if not ck_path.exists():
            continue
        params = read_checkpoint(ck_path).state.params
        mean, _ = encode(params, images)
        columns.append(decode(params, mean)[:, 0])
    n, h, w = columns[0].shape
    pad = 1
    grid = np.ones((n * (h + pad) + pad, len(columns) * (w + pad) + pad))
    for c, col in enumerate(columns):
        for r in range(n):
            y0, x0 = pad + r * (h + pad), pad + c * (w + pad)
            grid[y0:y0 + h, x0:x0 + w] = col[r]
    save_gray(np.clip(grid, 0.0, 1.0), path)
    return len(columns)


def cmd_report(out) -> Path:
    """Markdown and CSV summary of a run, one table per latent size."""
    run = RunDir(out)
    missing = [p for p in EXPECTED if not (run / p).exists()]
    if len(missing) == len(EXPECTED):
        raise DataError("nothing to report; expected artifacts:\n" + "\n".join(f"  {p}" for p in EXPECTED))
    cfg = load_config(run.config) if run.config.exists() else RunConfig()
    rep_dir = run / "report"
    rep_dir.mkdir(parents=True, exist_ok=True)
    lines = ["# Run summary", ""]
    rows = []
    if (run / "evaluation" / "evaluation.json").exists():
        rows = json.loads((run / "evaluation" / "evaluation.json").read_text())
    names = tuple(rows[0]["class_names"]) if rows else tuple(cfg.labels.eval_classes)

    def fmt(v):
        return "n/a" if v is None else f"{v:.3f}"

    for dim in sorted({r["latent_dim"] for r in rows}):
        lines += [f"## Latent size {dim}", "",
                  "| Model | " + " | ".join(names) + " | Mean |",
                  "|---" * (len(names) + 2) + "|"]
        for r in rows:
            if r["latent_dim"] == dim:
                lines.append(f"| {r['tag']} | " + " | ".join(fmt(v) for v in r["per_class"])
                             + f" | {fmt(r['mean'])} |")
        lines.append("")
    with open(rep_dir / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "latent_dim", "role", *names, "mean"])
        for r in rows:
            w.writerow([r["tag"], r["latent_dim"], r["role"],
                        *["" if v is None else f"{v:.6f}" for v in r["per_class"]],
                        "" if r["mean"] is None else f"{r['mean']:.6f}"])

    if run.manifest.exists():
        try:
            n_cols = _reconstruction_grid(cfg, run, load_manifest(run), rep_dir / "reconstructions.png")
            lines += ["## Reconstructions", "",
                      f"`reconstructions.png`: original plus {n_cols - 1} checkpoint column(s).", ""]
        except CxrVaeError as exc:
            missing.append(f"reconstructions ({exc})")

    problems = verify_digest_chain(run)
    lines += ["## Integrity", ""]
    lines += [f"- digest chain: {'ok' if not problems else 'BROKEN'}"] + [f"  - {p}" for p in problems]
    if missing:
        lines += ["- missing artifacts:"] + [f"  - {m}" for m in missing]
    lines.append("")
    md = rep_dir / "summary.md"
    md.write_text("\n".join(lines))
    return md
