"""Dataset manifests, class statistics, and deterministic stratified k-fold splits.

A manifest is a UTF-8 JSONL file, one record per line, with fields
`id`, `image_path`, `text`, and optional `label_a` / `label_b`. Text is kept
byte-faithful: no stripping, no case folding, hashtags/emojis/URLs preserved.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

TASK_A = "A"
TASK_B = "B"
LABELS_PER_TASK = {TASK_A: 2, TASK_B: 3}


class DataError(ValueError):
    """Malformed manifest, labels, or fold inputs."""


@dataclass(frozen=True)
class MemeSample:
    id: str
    image_path: str
    ocr_text: str
    label_a: int | None = None
    label_b: int | None = None

    def label_for(self, task: str) -> int | None:
        return self.label_a if task == TASK_A else self.label_b


@dataclass
class DatasetManifest:
    samples: list[MemeSample]
    task: str

    def __len__(self) -> int:
        return len(self.samples)

    def labels(self) -> list[int]:
        out = []
        for s in self.samples:
            lab = s.label_for(self.task)
            if lab is None:
                raise DataError(f"sample {s.id!r} has no label for task {self.task}")
            out.append(lab)
        return out


@dataclass
class ClassStats:
    counts: dict[int, int]
    proportions: dict[int, float]
    imbalance_ratio: float


@dataclass
class FoldAssignment:
    k: int
    seed: int
    assignment: dict[str, int] = field(default_factory=dict)

    def fold_ids(self, fold: int) -> list[str]:
        return [sid for sid, f in self.assignment.items() if f == fold]


def _validate_label(value, n_classes: int, field_name: str, sample_id: str, line_no: int):
    if value is None:
        return None
    if not isinstance(value, int) or isinstance(value, bool) or not (0 <= value < n_classes):
        raise DataError(
            f"line {line_no}: sample {sample_id!r} has out-of-range {field_name}={value!r} "
            f"(expected integer in [0, {n_classes}))"
        )
    return value


def load_manifest(path: str | Path, task: str) -> DatasetManifest:
    """Load a JSONL manifest, validating ids and labels for `task`.

    Record order is preserved; ocr_text is taken verbatim from the file.
    """
    if task not in LABELS_PER_TASK:
        raise DataError(f"unknown task {task!r}; expected one of {sorted(LABELS_PER_TASK)}")
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")

    samples: list[MemeSample] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {line_no}: malformed record: {exc}") from exc
            for key in ("id", "image_path", "text"):
                if key not in rec:
                    raise DataError(f"line {line_no}: missing required field {key!r}")
            sid = str(rec["id"])
            if sid in seen:
                raise DataError(f"line {line_no}: duplicate id {sid!r}")
            seen.add(sid)
            samples.append(
                MemeSample(
                    id=sid,
                    image_path=str(rec["image_path"]),
                    ocr_text=rec["text"],
                    label_a=_validate_label(rec.get("label_a"), 2, "label_a", sid, line_no),
                    label_b=_validate_label(rec.get("label_b"), 3, "label_b", sid, line_no),
                )
            )
    return DatasetManifest(samples=samples, task=task)


def compute_class_stats(manifest: DatasetManifest) -> ClassStats:
    """Exact per-class counts, proportions, and max/min imbalance ratio."""
    labels = manifest.labels()
    counts: dict[int, int] = {}
    for lab in labels:
        counts[lab] = counts.get(lab, 0) + 1
    n_classes = LABELS_PER_TASK[manifest.task]
    for c in range(n_classes):
        if counts.get(c, 0) == 0:
            raise DataError(f"class {c} has zero samples; imbalance ratio undefined")
    total = len(labels)
    proportions = {c: counts[c] / total for c in sorted(counts)}
    ratio = max(counts.values()) / min(counts.values())
    return ClassStats(counts=dict(sorted(counts.items())), proportions=proportions, imbalance_ratio=ratio)


def stratified_kfold(manifest: DatasetManifest, k: int, seed: int) -> FoldAssignment:
    """Deterministic stratified split: seeded shuffle within each class, then
    round-robin dealing into folds with a running offset so overall fold sizes
    differ by at most one.
    """
    if k < 2:
        raise DataError(f"k must be >= 2, got {k}")
    by_class: dict[int, list[str]] = {}
    labels = manifest.labels()
    for s, lab in zip(manifest.samples, labels):
        by_class.setdefault(lab, []).append(s.id)
    for c, ids in sorted(by_class.items()):
        if len(ids) < k:
            raise DataError(f"class {c} has {len(ids)} samples, fewer than k={k}")

    rng = np.random.default_rng(seed)
    assignment: dict[str, int] = {}
    offset = 0
    for c in sorted(by_class):
        ids = list(by_class[c])
        rng.shuffle(ids)
        for i, sid in enumerate(ids):
            assignment[sid] = (i + offset) % k
        offset = (offset + len(ids)) % k
    # restore manifest order for a stable serialization
    ordered = {s.id: assignment[s.id] for s in manifest.samples}
    return FoldAssignment(k=k, seed=seed, assignment=ordered)


def save_fold_assignment(folds: FoldAssignment, path: str | Path) -> None:
    """Write the two-column `id,fold` table."""
    lines = ["id,fold"]
    lines += [f"{sid},{f}" for sid, f in folds.assignment.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_fold_assignment(path: str | Path, k: int | None = None, seed: int = -1) -> FoldAssignment:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or text[0] != "id,fold":
        raise DataError(f"fold file {path} missing 'id,fold' header")
    assignment: dict[str, int] = {}
    for line in text[1:]:
        if not line:
            continue
        sid, f = line.rsplit(",", 1)
        assignment[sid] = int(f)
    inferred_k = max(assignment.values()) + 1 if assignment else 0
    return FoldAssignment(k=k if k is not None else inferred_k, seed=seed, assignment=assignment)


def train_val_split(manifest: DatasetManifest, folds: FoldAssignment, val_fold: int) -> tuple[list[MemeSample], list[MemeSample]]:
    """Samples outside `val_fold` for training, inside it for validation."""
    train, val = [], []
    for s in manifest.samples:
        (val if folds.assignment[s.id] == val_fold else train).append(s)
    return train, val
