"""CheXpert-style ternary labels and uncertainty-resolution policies."""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, ParseError, PolicyConfigError
from .numerics import RngStream

CLASS_NAMES = (
    "No Finding",
    "Enlarged Cardiomediastinum",
    "Cardiomegaly",
    "Lung Opacity",
    "Lung Lesion",
    "Edema",
    "Consolidation",
    "Pneumonia",
    "Atelectasis",
    "Pneumothorax",
    "Pleural Effusion",
    "Pleural Other",
    "Fracture",
    "Support Devices",
)
N_FINDINGS = len(CLASS_NAMES)

# positive share of each class in the CheXpert training set
CHEXPERT_POSITIVE_RATE = (
    0.0889, 0.1622, 0.1224, 0.7201, 0.0369, 0.2600, 0.0883,
    0.0245, 0.1556, 0.0926, 0.4026, 0.0131, 0.0389, 0.5610,
)

EVAL_CLASS_NAMES = ("Cardiomegaly", "Edema", "Consolidation", "Atelectasis", "Pleural Effusion")


class FindingState(enum.IntEnum):
    NEGATIVE = 0
    POSITIVE = 1
    UNCERTAIN = -1
    UNMENTIONED = 2


_CELL_STATES = {
    "1.0": FindingState.POSITIVE,
    "1": FindingState.POSITIVE,
    "0.0": FindingState.NEGATIVE,
    "0": FindingState.NEGATIVE,
    "-1.0": FindingState.UNCERTAIN,
    "-1": FindingState.UNCERTAIN,
    "": FindingState.UNMENTIONED,
}
_STATE_CELLS = {
    FindingState.POSITIVE: "1.0",
    FindingState.NEGATIVE: "0.0",
    FindingState.UNCERTAIN: "-1.0",
    FindingState.UNMENTIONED: "",
}


@dataclass(frozen=True)
class LabelRecord:
    path: str
    findings: tuple[FindingState, ...]

    def __post_init__(self):
        if len(self.findings) != N_FINDINGS:
            raise ParseError(f"expected {N_FINDINGS} findings, got {len(self.findings)}")


@dataclass(frozen=True)
class EvalClassSet:
    indices: tuple[int, ...]

    def __post_init__(self):
        if len(set(self.indices)) != len(self.indices) or not all(0 <= i < N_FINDINGS for i in self.indices):
            raise DomainError(f"invalid evaluation class indices {self.indices}")

    @classmethod
    def default(cls) -> "EvalClassSet":
        return cls(tuple(CLASS_NAMES.index(n) for n in EVAL_CLASS_NAMES))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(CLASS_NAMES[i] for i in self.indices)


# Policies. Each is a small frozen value object; ``resolve`` handles dispatch.

@dataclass(frozen=True)
class UOnes:
    tag = "U-Ones"


@dataclass(frozen=True)
class UZeros:
    tag = "U-Zeros"


@dataclass(frozen=True)
class LSR:
    """Label-smoothing: each uncertain label becomes a draw from U(alpha, beta)."""

    alpha: float = 0.55
    beta: float = 0.85
    tag = "LSR"

    def __post_init__(self):
        if not (0.5 < self.alpha < self.beta <= 1.0):
            raise PolicyConfigError(
                f"LSR needs 0.5 < alpha < beta <= 1, got alpha={self.alpha}, beta={self.beta}"
            )


Policy = UOnes | UZeros | LSR


def policy_from_name(name: str, alpha: float = 0.55, beta: float = 0.85) -> Policy:
    key = name.strip().lower().replace("_", "-")
    if key in ("u-ones", "uones", "ones"):
        return UOnes()
    if key in ("u-zeros", "uzeros", "zeros"):
        return UZeros()
    if key == "lsr":
        return LSR(alpha, beta)
    raise PolicyConfigError(f"unknown uncertainty policy {name!r}")


@dataclass(frozen=True)
class ResolvedTargets:
    values: np.ndarray
    policy: str


def parse_label_row(row: Sequence[str], columns: Sequence[str] | None = None) -> LabelRecord:
    """Turn one CSV row (path + 14 finding cells) into a LabelRecord."""
    if len(row) != N_FINDINGS + 1:
        raise ParseError(f"expected {N_FINDINGS + 1} columns, got {len(row)}", column=None)
    names = columns[1:] if columns is not None else CLASS_NAMES
    states = []
    for name, cell in zip(names, row[1:]):
        try:
            states.append(_CELL_STATES[cell.strip()])
        except KeyError:
            raise ParseError(f"column {name!r}: unrecognized cell value {cell!r}", column=name) from None
    return LabelRecord(row[0], tuple(states))


def read_label_csv(source) -> list[LabelRecord]:
    """Read a label CSV from a path or text stream. The header row is checked for arity only."""
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, newline="", encoding="utf-8") as fh:
            return read_label_csv(fh)
    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("label CSV is empty") from None
    if len(header) != N_FINDINGS + 1:
        raise ParseError(f"header has {len(header)} columns, expected {N_FINDINGS + 1}")
    return [parse_label_row(row, header) for row in reader if row]


def write_label_csv(records: Iterable[LabelRecord], dest) -> None:
    if isinstance(dest, (str, bytes)) or hasattr(dest, "__fspath__"):
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            write_label_csv(records, fh)
        return
    writer = csv.writer(dest, lineterminator="\n")
    writer.writerow(("path",) + CLASS_NAMES)
    for rec in records:
        writer.writerow([rec.path] + [_STATE_CELLS[s] for s in rec.findings])


def label_csv_text(records: Iterable[LabelRecord]) -> str:
    buf = io.StringIO()
    write_label_csv(records, buf)
    return buf.getvalue()


def apply_uncertainty_policy(
    record: LabelRecord,
    policy: Policy,
    rng: RngStream | None = None,
    unmentioned: float = 0.0,
) -> ResolvedTargets:
    """Map the 14 findings to soft targets in [0, 1].

    Positive -> 1, negative -> 0, blank -> ``unmentioned`` (0 by default);
    uncertain depends on the policy. LSR consumes one uniform draw per
    uncertain finding, in class order.
    """
    if not 0.0 <= unmentioned <= 1.0:
        raise PolicyConfigError("unmentioned value must lie in [0, 1]")
    out = np.empty(N_FINDINGS, dtype=np.float64)
    for i, state in enumerate(record.findings):
        if state is FindingState.POSITIVE:
            out[i] = 1.0
        elif state is FindingState.NEGATIVE:
            out[i] = 0.0
        elif state is FindingState.UNMENTIONED:
            out[i] = unmentioned
        elif isinstance(policy, UOnes):
            out[i] = 1.0
        elif isinstance(policy, UZeros):
            out[i] = 0.0
        elif isinstance(policy, LSR):
            if rng is None:
                raise PolicyConfigError("LSR needs an RngStream")
            out[i] = _lsr_draw(rng, policy)
        else:
            raise PolicyConfigError(f"unknown policy {policy!r}")
    return ResolvedTargets(out, policy.tag)


def _lsr_draw(rng: RngStream, policy: LSR) -> float:
    # U(alpha, beta) but kept strictly above alpha so LSR never ties the lower bound
    while True:
        x = policy.alpha + (policy.beta - policy.alpha) * rng.generator.random()
        if policy.alpha < x < policy.beta:
            return float(x)


def binarize_targets(targets: ResolvedTargets | np.ndarray, threshold: float = 0.5) -> np.ndarray:
    if not 0.0 < threshold < 1.0:
        raise DomainError(f"threshold must lie in (0, 1), got {threshold}")
    values = targets.values if isinstance(targets, ResolvedTargets) else np.asarray(targets)
    return values >= threshold


def resolve_records(
    records: Sequence[LabelRecord],
    policy: Policy,
    rng: RngStream | None = None,
    unmentioned: float = 0.0,
) -> np.ndarray:
    """Stack resolved targets for many records into an N x 14 matrix."""
    if not records:
        return np.zeros((0, N_FINDINGS))
    return np.stack([apply_uncertainty_policy(r, policy, rng, unmentioned).values for r in records])
