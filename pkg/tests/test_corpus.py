import numpy as np
import pytest

from memeclf import corpus
from memeclf.corpus import DataError

from conftest import make_imbalanced_manifest, write_manifest


def test_load_manifest_preserves_order_and_text(tmp_path):
    records = [
        {"id": "a", "image_path": "a.jpg", "text": "#नेपाल 😀 http://x", "label_a": 1},
        {"id": "b", "image_path": "b.jpg", "text": "  raw   SPACES  ", "label_a": 0},
        {"id": "c", "image_path": "c.jpg", "text": "plain", "label_a": 1},
    ]
    path = write_manifest(tmp_path / "m.jsonl", records)
    manifest = corpus.load_manifest(path, "A")
    assert [s.id for s in manifest.samples] == ["a", "b", "c"]
    assert manifest.samples[0].ocr_text == "#नेपाल 😀 http://x"
    assert manifest.samples[1].ocr_text == "  raw   SPACES  "  # no stripping, no folding


def test_load_manifest_missing_file(tmp_path):
    with pytest.raises(DataError, match="not found"):
        corpus.load_manifest(tmp_path / "nope.jsonl", "A")


def test_load_manifest_out_of_range_label_names_id(tmp_path):
    path = write_manifest(tmp_path / "m.jsonl", [{"id": "bad1", "image_path": "x.jpg", "text": "t", "label_a": 2}])
    with pytest.raises(DataError, match="bad1"):
        corpus.load_manifest(path, "A")


def test_load_manifest_duplicate_id(tmp_path):
    recs = [{"id": "dup", "image_path": "x.jpg", "text": "t", "label_a": 0}] * 2
    path = write_manifest(tmp_path / "m.jsonl", recs)
    with pytest.raises(DataError, match="duplicate id"):
        corpus.load_manifest(path, "A")


def test_load_manifest_malformed_line_reports_number(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text('{"id": "a", "image_path": "a.jpg", "text": "t"}\nnot json\n', encoding="utf-8")
    with pytest.raises(DataError, match="line 2"):
        corpus.load_manifest(path, "A")


def test_label_b_range(tmp_path):
    path = write_manifest(tmp_path / "m.jsonl", [{"id": "x", "image_path": "x.jpg", "text": "t", "label_b": 3}])
    with pytest.raises(DataError, match="label_b"):
        corpus.load_manifest(path, "B")


def test_imbalanced_manifest_roundtrip(tmp_path):
    manifest = make_imbalanced_manifest(tmp_path / "big.jsonl")
    assert len(manifest) == 1068
    stats = corpus.compute_class_stats(manifest)
    assert stats.counts == {0: 348, 1: 720}
    assert stats.proportions[1] == pytest.approx(0.674, abs=0.001)


def test_class_stats_hate_imbalance():
    manifest = _manifest_from_counts({0: 348, 1: 720})
    stats = corpus.compute_class_stats(manifest)
    assert stats.proportions[0] == pytest.approx(0.326, abs=5e-4)
    assert stats.proportions[1] == pytest.approx(0.674, abs=5e-4)
    assert stats.imbalance_ratio == pytest.approx(720 / 348)  # ~2.07
    assert sum(stats.proportions.values()) == pytest.approx(1.0, abs=1e-9)


def test_class_stats_balanced():
    stats = corpus.compute_class_stats(_manifest_from_counts({0: 10, 1: 10}))
    assert stats.imbalance_ratio == 1.0


def test_class_stats_three_classes():
    stats = corpus.compute_class_stats(_manifest_from_counts({0: 39, 1: 50, 2: 29}, task="B"))
    total = 39 + 50 + 29
    assert stats.proportions[0] == pytest.approx(39 / total, abs=1e-12)
    assert stats.proportions[1] == pytest.approx(50 / total, abs=1e-12)
    assert stats.proportions[2] == pytest.approx(29 / total, abs=1e-12)
    assert stats.imbalance_ratio == pytest.approx(50 / 29)


def test_class_stats_unlabeled_sample_errors():
    manifest = corpus.DatasetManifest(
        samples=[corpus.MemeSample(id="u", image_path="u.jpg", ocr_text="t")], task="A"
    )
    with pytest.raises(DataError, match="no label"):
        corpus.compute_class_stats(manifest)


def test_class_stats_zero_count_class_errors():
    with pytest.raises(DataError, match="zero samples"):
        corpus.compute_class_stats(_manifest_from_counts({0: 5, 1: 0}))


def _manifest_from_counts(counts: dict, task: str = "A") -> corpus.DatasetManifest:
    samples = []
    i = 0
    for c, n in counts.items():
        for _ in range(n):
            samples.append(
                corpus.MemeSample(
                    id=f"s{i}",
                    image_path=f"{i}.jpg",
                    ocr_text="t",
                    label_a=c if task == "A" else None,
                    label_b=c if task == "B" else None,
                )
            )
            i += 1
    return corpus.DatasetManifest(samples=samples, task=task)


class TestStratifiedKFold:
    def test_balanced_tiny(self):
        manifest = _manifest_from_counts({0: 5, 1: 5})
        folds = corpus.stratified_kfold(manifest, k=5, seed=0)
        labels = {s.id: s.label_a for s in manifest.samples}
        for f in range(5):
            ids = folds.fold_ids(f)
            assert len(ids) == 2
            assert sorted(labels[i] for i in ids) == [0, 1]

    def test_determinism(self, tmp_path):
        manifest = _manifest_from_counts({0: 13, 1: 29})
        a = corpus.stratified_kfold(manifest, k=5, seed=42)
        b = corpus.stratified_kfold(manifest, k=5, seed=42)
        pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
        corpus.save_fold_assignment(a, pa)
        corpus.save_fold_assignment(b, pb)
        assert pa.read_bytes() == pb.read_bytes()

    def test_seed_changes_assignment(self):
        manifest = _manifest_from_counts({0: 13, 1: 29})
        a = corpus.stratified_kfold(manifest, k=5, seed=42)
        b = corpus.stratified_kfold(manifest, k=5, seed=43)
        assert a.assignment != b.assignment

    def test_full_scale_sizes(self, tmp_path):
        manifest = make_imbalanced_manifest(tmp_path / "m.jsonl")
        folds = corpus.stratified_kfold(manifest, k=5, seed=42)
        labels = {s.id: s.label_a for s in manifest.samples}
        sizes = sorted(len(folds.fold_ids(f)) for f in range(5))
        assert sizes == [213, 213, 214, 214, 214]
        for f in range(5):
            hate = sum(labels[i] for i in folds.fold_ids(f))
            assert hate in (144, 145)

    def test_partition_property(self):
        manifest = _manifest_from_counts({0: 17, 1: 33, 2: 8}, task="B")
        folds = corpus.stratified_kfold(manifest, k=4, seed=3)
        all_ids = [i for f in range(4) for i in folds.fold_ids(f)]
        assert sorted(all_ids) == sorted(s.id for s in manifest.samples)

    def test_stratification_property(self):
        rng = np.random.default_rng(0)
        for trial in range(20):
            counts = {0: int(rng.integers(10, 60)), 1: int(rng.integers(10, 60))}
            manifest = _manifest_from_counts(counts)
            k = int(rng.integers(2, 6))
            folds = corpus.stratified_kfold(manifest, k=k, seed=trial)
            labels = {s.id: s.label_a for s in manifest.samples}
            total = sum(counts.values())
            for f in range(k):
                ids = folds.fold_ids(f)
                for c in counts:
                    count_f = sum(1 for i in ids if labels[i] == c)
                    expected = len(ids) * counts[c] / total
                    assert abs(count_f - round(expected)) <= 1

    def test_k_too_small(self):
        with pytest.raises(DataError, match="k must be >= 2"):
            corpus.stratified_kfold(_manifest_from_counts({0: 5, 1: 5}), k=1, seed=0)

    def test_class_smaller_than_k(self):
        with pytest.raises(DataError, match="fewer than k"):
            corpus.stratified_kfold(_manifest_from_counts({0: 2, 1: 10}), k=5, seed=0)


def test_fold_assignment_file_roundtrip(tmp_path):
    manifest = _manifest_from_counts({0: 6, 1: 6})
    folds = corpus.stratified_kfold(manifest, k=3, seed=1)
    path = tmp_path / "folds.csv"
    corpus.save_fold_assignment(folds, path)
    loaded = corpus.load_fold_assignment(path)
    assert loaded.assignment == folds.assignment
    assert loaded.k == 3
    assert path.read_text(encoding="utf-8").splitlines()[0] == "id,fold"


def test_train_val_split():
    manifest = _manifest_from_counts({0: 6, 1: 6})
    folds = corpus.stratified_kfold(manifest, k=3, seed=1)
    train, val = corpus.train_val_split(manifest, folds, val_fold=0)
    assert len(train) + len(val) == 12
    assert {s.id for s in train}.isdisjoint({s.id for s in val})
