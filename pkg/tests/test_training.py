import json

import numpy as np
import pytest

from memeclf.autodiff import Tensor
from memeclf.corpus import DataError, FoldAssignment
from memeclf.fusion import HybridHeadConfig, ModelConfigId
from memeclf.training import (
    ClassWeights,
    EmbeddedDataset,
    HeadPredictor,
    SchedulerState,
    StopState,
    TrainConfig,
    TrainingDivergence,
    compute_class_weights,
    early_stop_step,
    load_train_config,
    run_cv,
    scheduler_step,
    smoothed_weighted_ce,
    train_fold,
)


class TestClassWeights:
    def test_balanced(self):
        w = compute_class_weights([100, 100], beta=0.3)
        assert np.allclose(w.weights, [1.0, 1.0])

    def test_beta_zero(self):
        w = compute_class_weights([10, 500, 3], beta=0.0)
        assert np.allclose(w.weights, 1.0)

    def test_imbalance_ratio_2_07(self):
        w = compute_class_weights({0: 348, 1: 720}, beta=0.3)
        assert w.weights[1] == 1.0
        assert w.weights[0] == pytest.approx((720 / 348) ** 0.3, abs=1e-12)
        assert w.weights[0] == pytest.approx(1.2439, abs=1e-3)

    def test_monotonicity(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            counts = rng.integers(1, 1000, size=4)
            w = compute_class_weights(counts, beta=0.3).weights
            assert w.min() == 1.0
            order = np.argsort(counts)
            assert np.all(np.diff(w[order]) <= 1e-12)  # rarer class never lighter

    def test_zero_count_errors(self):
        with pytest.raises(DataError, match="positive"):
            compute_class_weights([5, 0], beta=0.3)


class TestLoss:
    def test_uniform_logits_gives_weighted_log_k(self):
        w = ClassWeights(np.array([1.25, 1.0]))
        loss = smoothed_weighted_ce(np.zeros((1, 2)), 0, w, epsilon=0.1)
        assert float(loss.data) == pytest.approx(1.25 * np.log(2), abs=1e-12)
        loss3 = smoothed_weighted_ce(np.zeros((1, 3)), 2, ClassWeights(np.ones(3)), epsilon=0.3)
        assert float(loss3.data) == pytest.approx(np.log(3), abs=1e-12)

    def test_smoothed_target_distribution(self):
        # eps=0.1, K=2: q = (0.95, 0.05) for target 0
        logits = np.array([[0.7, -0.4]])
        logp = logits - np.log(np.exp(logits).sum())
        expected = -(0.95 * logp[0, 0] + 0.05 * logp[0, 1])
        loss = smoothed_weighted_ce(logits, 0, ClassWeights(np.ones(2)), epsilon=0.1)
        assert float(loss.data) == pytest.approx(expected, abs=1e-12)

    def test_reduces_to_plain_ce_at_eps_zero(self):
        rng = np.random.default_rng(3)
        logits = rng.standard_normal((8, 3))
        targets = rng.integers(0, 3, 8)
        weights = ClassWeights(np.array([1.5, 1.0, 2.0]))
        loss = smoothed_weighted_ce(logits, targets, weights, epsilon=0.0)
        # independent plain weighted CE oracle
        shifted = logits - logits.max(axis=1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        ref = np.mean(-weights.weights[targets] * logp[np.arange(8), targets])
        assert float(loss.data) == pytest.approx(ref, abs=1e-12)

    def test_positivity(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            logits = rng.standard_normal((4, 2)) * 10
            loss = smoothed_weighted_ce(logits, rng.integers(0, 2, 4), ClassWeights(np.ones(2)), 0.1)
            assert float(loss.data) > 0

    def test_gradient_matches_finite_differences(self):
        for k in (2, 3):
            rng = np.random.default_rng(k)
            logits = Tensor(rng.standard_normal((5, k)), requires_grad=True)
            targets = rng.integers(0, k, 5)
            weights = ClassWeights(1.0 + rng.random(k))
            loss = smoothed_weighted_ce(logits, targets, weights, epsilon=0.1)
            loss.backward()
            h = 1e-7
            for i in range(5):
                for j in range(k):
                    orig = logits.data[i, j]
                    logits.data[i, j] = orig + h
                    lp = float(smoothed_weighted_ce(logits.data, targets, weights, 0.1).data)
                    logits.data[i, j] = orig - h
                    lm = float(smoothed_weighted_ce(logits.data, targets, weights, 0.1).data)
                    logits.data[i, j] = orig
                    fd = (lp - lm) / (2 * h)
                    a = logits.grad[i, j]
                    assert abs(fd - a) / max(abs(fd), abs(a), 1e-3) < 1e-6

    def test_non_finite_logits_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            smoothed_weighted_ce(np.array([[np.nan, 0.0]]), 0, ClassWeights(np.ones(2)), 0.1)


CFG = TrainConfig()


class TestScheduler:
    def test_improving_metrics_keep_lr(self):
        state = SchedulerState(current_lr=1e-3)
        for epoch in range(20):
            state = scheduler_step(state, 0.5 + 0.01 * epoch, CFG)
        assert state.current_lr == 1e-3

    def test_six_epoch_plateau_halves_once(self):
        state = SchedulerState(current_lr=1e-3)
        state = scheduler_step(state, 0.8, CFG)
        for _ in range(6):
            state = scheduler_step(state, 0.8, CFG)  # no improvement > min_delta
        assert state.current_lr == pytest.approx(5e-4)
        state = scheduler_step(state, 0.8, CFG)
        assert state.current_lr == pytest.approx(5e-4)  # counter was reset

    def test_two_plateaus_quarter_lr(self):
        state = SchedulerState(current_lr=1e-3)
        state = scheduler_step(state, 0.8, CFG)
        for _ in range(12):
            state = scheduler_step(state, 0.8, CFG)
        assert state.current_lr == pytest.approx(2.5e-4)

    def test_min_delta_gates_improvement(self):
        state = SchedulerState(current_lr=1e-3)
        state = scheduler_step(state, 0.8, CFG)
        for _ in range(6):
            state = scheduler_step(state, 0.8 + 5e-5, CFG)  # below min_delta
        assert state.current_lr == pytest.approx(5e-4)


class TestEarlyStop:
    def test_eleven_epoch_plateau_stops(self):
        state = StopState()
        state = early_stop_step(state, 0.8, CFG)
        for i in range(11):
            state = early_stop_step(state, 0.8, CFG)
            if i < 10:
                assert not state.stop_flag
        assert state.stop_flag
        assert state.best_epoch == 1

    def test_improvement_resets_counter(self):
        state = StopState()
        state = early_stop_step(state, 0.5, CFG)
        for _ in range(9):
            state = early_stop_step(state, 0.5, CFG)
        state = early_stop_step(state, 0.6, CFG)
        assert state.epochs_since_improvement == 0
        assert not state.stop_flag

    def test_monotone_improvement_never_stops(self):
        state = StopState()
        for epoch in range(100):
            state = early_stop_step(state, 0.01 * epoch, CFG)
            assert not state.stop_flag
        assert state.best_epoch == 100


def _separable_data(n=64, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    txt = rng.standard_normal((n, 1024)) * 0.05
    txt[:, 0] += labels * 6.0 - 3.0
    img = rng.standard_normal((n, 512))
    return EmbeddedDataset(ids=[f"s{i}" for i in range(n)], labels=labels, img=img, txt=txt)


class TestTrainFold:
    def test_separable_data_reaches_perfect_f1(self):
        data = _separable_data()
        train, val = data.subset(range(48)), data.subset(range(48, 64))
        cfg = TrainConfig(learning_rate=1e-3, max_epochs=50, seed=1)
        record, _ = train_fold(ModelConfigId.of("M1"), train, val, cfg)
        assert max(record.val_macro_f1) == 1.0

    def test_determinism(self):
        data = _separable_data()
        train, val = data.subset(range(48)), data.subset(range(48, 64))
        cfg = TrainConfig(learning_rate=1e-3, max_epochs=8, seed=5)
        rec_a, model_a = train_fold(ModelConfigId.of("M7"), train, val, cfg)
        rec_b, model_b = train_fold(ModelConfigId.of("M7"), train, val, cfg)
        assert rec_a.losses == rec_b.losses
        assert rec_a.val_macro_f1 == rec_b.val_macro_f1
        for name, p in model_a.parameters().items():
            assert np.array_equal(p.data, model_b.parameters()[name].data)

    def test_lr_trace_non_increasing(self):
        data = _separable_data()
        train, val = data.subset(range(48)), data.subset(range(48, 64))
        cfg = TrainConfig(learning_rate=1e-3, max_epochs=30, seed=2)
        record, _ = train_fold(ModelConfigId.of("M2"), train, val, cfg)
        assert all(b <= a for a, b in zip(record.lrs, record.lrs[1:]))
        assert record.stopped_epoch <= cfg.max_epochs

    def test_divergence_reports_epoch(self):
        data = _separable_data(n=16)
        data.txt[0, 0] = np.nan
        train, val = data.subset(range(12)), data.subset(range(12, 16))
        with pytest.raises(TrainingDivergence) as err:
            train_fold(ModelConfigId.of("M1"), train, val, TrainConfig(max_epochs=3))
        assert err.value.epoch == 1

    def test_empty_sets_rejected(self):
        data = _separable_data(n=8)
        with pytest.raises(DataError, match="non-empty"):
            train_fold(ModelConfigId.of("M1"), data.subset([]), data, TrainConfig())

    def test_best_epoch_checkpoint_restored(self):
        data = _separable_data()
        train, val = data.subset(range(48)), data.subset(range(48, 64))
        cfg = TrainConfig(learning_rate=1e-3, max_epochs=25, seed=3)
        record, model = train_fold(ModelConfigId.of("M1"), train, val, cfg)
        probs = HeadPredictor(model).predict_proba(val)
        from memeclf.evalreport import confusion, metrics_from_confusion

        f1 = metrics_from_confusion(confusion(probs.argmax(axis=-1), val.labels, 2)).f1_macro
        assert f1 == pytest.approx(max(record.val_macro_f1), abs=1e-12)


class TestRunCV:
    def _folds(self, data, k):
        # deal consecutive (0,1) label pairs so every fold sees both classes
        assignment = {sid: (i // 2) % k for i, sid in enumerate(data.ids)}
        return FoldAssignment(k=k, seed=0, assignment=assignment)

    def test_each_sample_evaluated_once(self):
        data = _separable_data(n=20)
        folds = self._folds(data, 5)
        cfg = TrainConfig(learning_rate=1e-3, max_epochs=3, seed=0)
        results = run_cv(ModelConfigId.of("M1"), data, folds, cfg)
        assert len(results) == 5
        evaluated = [sid for (_r, _m, _p, val) in results for sid in val.ids]
        assert sorted(evaluated) == sorted(data.ids)

    def test_k2_train_sizes(self):
        data = _separable_data(n=10)
        folds = FoldAssignment(k=2, seed=0, assignment={sid: 0 if i < 5 else 1 for i, sid in enumerate(data.ids)})
        cfg = TrainConfig(learning_rate=1e-3, max_epochs=2, seed=0)
        results = run_cv(ModelConfigId.of("M1"), data, folds, cfg)
        for _r, _m, _p, val in results:
            assert len(val) == 5

    def test_aggregate_is_unweighted_mean(self):
        from memeclf.evalreport import aggregate_folds

        data = _separable_data(n=20)
        folds = self._folds(data, 2)
        cfg = TrainConfig(learning_rate=1e-3, max_epochs=3, seed=0)
        results = run_cv(ModelConfigId.of("M1"), data, folds, cfg)
        reports = [m for (_r, m, _p, _v) in results]
        agg = aggregate_folds(reports)
        assert agg.mean.f1_macro == pytest.approx(np.mean([r.f1_macro for r in reports]), abs=1e-15)


class TestTrainConfigIO:
    def test_json_roundtrip(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"learning_rate": 0.001, "batch_size": 8, "seed": 7}))
        cfg = load_train_config(path)
        assert cfg.learning_rate == 0.001
        assert cfg.batch_size == 8
        assert cfg.seed == 7
        assert cfg.label_smoothing == 0.1  # defaults preserved

    def test_yaml(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text("learning_rate: 0.01\nstop_patience: 4\n")
        cfg = load_train_config(path)
        assert cfg.learning_rate == 0.01
        assert cfg.stop_patience == 4

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(label_smoothing=1.5)
        with pytest.raises(ValueError):
            TrainConfig(lr_patience=0)
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=-1)

    def test_record_csv(self, tmp_path):
        from memeclf.training import TrainRecord

        rec = TrainRecord(losses=[0.9, 0.5], val_macro_f1=[0.6, 0.7], lrs=[1e-3, 1e-3])
        path = tmp_path / "trace.csv"
        rec.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,loss,val_macro_f1,lr"
        assert lines[1].startswith("1,0.9")
