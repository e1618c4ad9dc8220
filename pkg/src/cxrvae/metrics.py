"""One-vs-all AUROC, per-class reports and their CSV forms."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import StructuralError, UndefinedMetricError

BANDS = ((0.9, "outstanding"), (0.8, "very-good"), (0.7, "acceptable"))


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks, tied values sharing the mean of their positions."""
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.r_[True, sx[1:] != sx[:-1]])
    ends = np.r_[starts[1:], sx.size]
    run_rank = 0.5 * (starts + ends + 1)  # mean of positions start+1 .. end
    ranks = np.empty(x.size)
    ranks[order] = np.repeat(run_rank, ends - starts)
    return ranks


def auroc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative, ties
    counting one half (Mann-Whitney U / (n_pos * n_neg))."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).astype(bool).ravel()
    if s.size != y.size or s.size == 0:
        raise StructuralError(f"scores ({s.size}) and labels ({y.size}) must be equal, non-empty")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(n_pos, n_neg)
    ranks = _average_ranks(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def band(value: float) -> str:
    for lower, name in BANDS:
        if value > lower:
            return name
    return "below"


def mean_auroc(values: Sequence[float]) -> float:
    """Mean over the defined (non-NaN) per-class values; NaN if none are."""
    v = np.asarray(values, dtype=np.float64)
    v = v[~np.isnan(v)]
    return float(v.mean()) if v.size else float("nan")


@dataclass(frozen=True)
class AurocReport:
    class_names: tuple[str, ...]
    # NaN for classes whose targets were single-valued
    per_class: tuple[float, ...]
    mean: float
    bands: tuple[str, ...]
    excluded: tuple[str, ...] = ()
    tag: str = ""

    def row(self) -> list:
        return [self.tag, *self.per_class, self.mean]


def auroc_report(pred, targets, class_names: Sequence[str] | None = None, tag: str = "") -> AurocReport:
    values = getattr(pred, "values", pred)
    P = np.asarray(values, dtype=np.float64)
    T = np.asarray(targets).astype(bool)
    if P.shape != T.shape or P.ndim != 2:
        raise StructuralError(f"predictions {P.shape} and targets {T.shape} must be equal N x K")
    names = tuple(class_names) if class_names is not None else tuple(f"class{k}" for k in range(P.shape[1]))
    if len(names) != P.shape[1]:
        raise StructuralError("one class name per column required")
    per, bands, excluded = [], [], []
    for k in range(P.shape[1]):
        try:
            a = auroc(P[:, k], T[:, k])
        except UndefinedMetricError:
            per.append(float("nan"))
            bands.append("undefined")
            excluded.append(names[k])
            continue
        per.append(a)
        bands.append(band(a))
    return AurocReport(names, tuple(per), mean_auroc(per), tuple(bands), tuple(excluded), tag)


def report_csv(reports: Sequence[AurocReport], dest=None, digits: int | None = None) -> str:
    """Table layout: model tag, one column per class, mean."""
    if not reports:
        raise StructuralError("no reports to write")
    names = reports[0].class_names
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", *names, "mean"])
    for r in reports:
        if r.class_names != names:
            raise StructuralError("reports cover different classes")
        vals = [*r.per_class, r.mean]
        w.writerow([r.tag, *[_fmt(v, digits) for v in vals]])
    text = buf.getvalue()
    if dest is not None:
        with open(dest, "w", newline="") as fh:
            fh.write(text)
    return text


def _fmt(v: float, digits: int | None) -> str:
    if np.isnan(v):
        return ""
    return repr(float(v)) if digits is None else f"{v:.{digits}f}"


def read_report_csv(source) -> list[tuple[str, list[float], float]]:
    with open(source, newline="") as fh:
        rows = list(csv.reader(fh))
    out = []
    for row in rows[1:]:
        vals = [float(x) if x else float("nan") for x in row[1:]]
        out.append((row[0], vals[:-1], vals[-1]))
    return out


def roc_points(scores, labels) -> np.ndarray:
    """(FPR, TPR, threshold) rows, one per distinct score plus the origin."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).astype(bool).ravel()
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(n_pos, n_neg)
    order = np.argsort(-s, kind="mergesort")
    ss, yy = s[order], y[order]
    last = np.r_[ss[1:] != ss[:-1], True]
    tp = np.cumsum(yy)[last]
    fp = np.cumsum(~yy)[last]
    pts = np.column_stack([fp / n_neg, tp / n_pos, ss[last]])
    return np.vstack([[0.0, 0.0, np.inf], pts])


def roc_csv(pred, targets, class_names: Sequence[str], dest) -> None:
    P = np.asarray(getattr(pred, "values", pred), dtype=np.float64)
    T = np.asarray(targets).astype(bool)
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "fpr", "tpr", "threshold"])
        for k, name in enumerate(class_names):
            try:
                pts = roc_points(P[:, k], T[:, k])
            except UndefinedMetricError:
                continue
            for fpr, tpr, thr in pts:
                w.writerow([name, repr(float(fpr)), repr(float(tpr)), repr(float(thr))])
