import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from memeclf import corpus


def write_manifest(path: Path, records: list[dict]) -> Path:
    path.write_text("\n".join(json.dumps(r, ensure_ascii=False) for r in records), encoding="utf-8")
    return path


def make_imbalanced_manifest(path: Path, n_hate: int = 720, n_nonhate: int = 348) -> corpus.DatasetManifest:
    """Synthetic Subtask A manifest with the 67.4%/32.6% class split."""
    records = []
    labels = [1] * n_hate + [0] * n_nonhate
    # interleave deterministically so classes are not ordered blocks
    rng = np.random.default_rng(7)
    rng.shuffle(labels)
    for i, lab in enumerate(labels):
        records.append({"id": f"m{i:04d}", "image_path": f"img_{i:04d}.jpg", "text": f"text {i}", "label_a": lab})
    write_manifest(path, records)
    return corpus.load_manifest(path, "A")


@pytest.fixture(scope="session")
def mixed_modality_dataset(tmp_path_factory):
    """240-sample synthetic corpus where the label is carried by a text marker
    for half the samples and by an image block for the other half. The
    uninformative modality carries a conflicting random signal, and text
    length cues which modality to trust, so per-sample gating pays off."""
    root = tmp_path_factory.mktemp("mixed")
    img_dir = root / "imgs"
    img_dir.mkdir()
    rng = np.random.default_rng(1234)
    filler = ["".join(rng.choice(list("abcdefghijklmnopqrstuvwxyz"), 5)) for _ in range(200)]
    records = []
    for i in range(240):
        label = int(rng.integers(0, 2))
        text_informative = i % 2 == 0
        marker_label = label if text_informative else int(rng.integers(0, 2))
        block_label = label if not text_informative else int(rng.integers(0, 2))
        words = list(rng.choice(filler, 10 if text_informative else 3))
        words.insert(int(rng.integers(0, len(words))), "zebra" if marker_label else "okapi")
        base = rng.integers(60, 196, size=(224, 224, 3)).astype(np.uint8)
        base[:56, :56, :] = 255 if block_label else 0
        fname = f"img_{i:03d}.png"
        Image.fromarray(base).save(img_dir / fname)
        records.append({"id": f"s{i:03d}", "image_path": fname, "text": " ".join(words), "label_a": label})
    manifest_path = write_manifest(root / "manifest.jsonl", records)
    return {"root": root, "img_dir": img_dir, "manifest_path": manifest_path}
