import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trpfuse.errors import AlignmentError, ValidationError
from trpfuse.evaluation import (
    ConfusionCounts,
    PassThrough,
    Recording,
    binarize,
    evaluate_run,
    kfold_split,
    loo_split,
    metrics,
    rtf,
    threshold_sweep,
    windowed_confusion,
    write_trace,
)
from trpfuse.ensembles import LogisticPredictor
from trpfuse.timeline import EvalConfig, FrameStream, GroundTruth, dilate_events


def oracle_confusion(pred, events, window):
    tp = fp = tn = fn = 0
    for f, p in enumerate(pred):
        eff = any(abs(f - e) <= window for e in events)
        if p and eff:
            tp += 1
        elif p:
            fp += 1
        elif eff:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp, fp, tn, fn)


class TestBinarize:
    def test_inclusive_boundary(self):
        assert binarize([0.8], 0.8)[0] == 1

    def test_flip(self):
        assert binarize([0.2], 0.8, flipped=True)[0] == 1

    def test_all_negative(self):
        assert not binarize(np.full(10, 0.5), 0.9).any()


class TestWindowedConfusion:
    def test_perfect(self):
        truth = GroundTruth([100], 300)
        c = windowed_confusion(dilate_events(truth, 75), truth)
        assert c.fp == c.fn == 0 and metrics(c).accuracy == 1.0

    def test_single_positive(self):
        pred = np.zeros(300, dtype=int)
        pred[150] = 1
        assert windowed_confusion(pred, GroundTruth([100], 300)) == ConfusionCounts(tp=1, fp=0, tn=149, fn=150)

    def test_all_negative(self):
        c = windowed_confusion(np.zeros(300), GroundTruth([100], 300))
        assert (c.tp, c.fp, c.fn) == (0, 0, 151)

    def test_length_mismatch(self):
        with pytest.raises(AlignmentError):
            windowed_confusion(np.zeros(10), GroundTruth([], 11))

    @settings(max_examples=80, deadline=None)
    @given(st.integers(1, 500), st.integers(0, 80), st.integers(0, 2**32 - 1))
    def test_matches_oracle(self, total, window, seed):
        r = np.random.default_rng(seed)
        events = sorted(set(r.integers(0, total, size=r.integers(0, 6)).tolist()))
        pred = r.random(total) < r.random()
        assert windowed_confusion(pred, GroundTruth(events, total), window) == oracle_confusion(pred, events, window)


class TestMetrics:
    def test_hand_example(self):
        r = metrics(ConfusionCounts(tp=5, fp=10, tn=90, fn=5))
        assert r.balanced_accuracy == pytest.approx(0.7, abs=1e-12)
        assert r.accuracy == pytest.approx(95 / 110, abs=1e-12)
        assert r.precision == pytest.approx(1 / 3, abs=1e-12)
        assert r.recall == 0.5
        assert r.f1 == pytest.approx(0.4, abs=1e-12)

    def test_perfect(self):
        r = metrics(ConfusionCounts(tp=3, tn=7))
        assert (r.accuracy, r.balanced_accuracy, r.precision, r.recall, r.f1) == (1.0, 1.0, 1.0, 1.0, 1.0)

    def test_zero_over_zero(self):
        r = metrics(ConfusionCounts(tp=4, fn=4))
        assert r.balanced_accuracy == 0.25
        r = metrics(ConfusionCounts(tn=5))
        assert (r.precision, r.recall, r.f1) == (0.0, 0.0, 0.0)

    def test_empty(self):
        with pytest.raises(ValidationError):
            metrics(ConfusionCounts())

    @given(*(st.integers(0, 1000) for _ in range(4)))
    def test_symmetries(self, tp, fp, tn, fn):
        if tp + fp + tn + fn == 0:
            return
        a = metrics(ConfusionCounts(tp, fp, tn, fn))
        # complement predictor on complemented labels swaps tp<->tn, fp<->fn
        b = metrics(ConfusionCounts(tn, fn, tp, fp))
        assert a.balanced_accuracy == pytest.approx(b.balanced_accuracy, abs=1e-15)
        assert a.accuracy == b.accuracy


class TestRtf:
    def test_values(self):
        assert rtf(1.0, 10.0) == 0.1
        assert rtf(0.203, 10.0) == pytest.approx(0.0203)
        assert rtf(0, 5) == 0.0

    def test_bad_duration(self):
        with pytest.raises(ValidationError):
            rtf(1.0, 0.0)


class TestSweep:
    truth = GroundTruth([100, 400], 600)

    def test_perfect_signal(self):
        eff = dilate_events(self.truth, 75).astype(float)
        res = threshold_sweep(FrameStream(eff), self.truth)
        assert res.report.balanced_accuracy == 1.0
        assert (res.best_threshold, res.flipped) == (0.05, False)

    def test_inverted_signal(self):
        eff = dilate_events(self.truth, 75).astype(float)
        res = threshold_sweep(FrameStream(1 - eff), self.truth)
        assert res.report.balanced_accuracy == 1.0 and res.flipped is True

    def test_constant_half(self):
        res = threshold_sweep(FrameStream(np.full(600, 0.5)), self.truth)
        assert all(v == 0.5 for _, _, v in res.grid)
        assert (res.best_threshold, res.flipped) == (0.05, False)
        assert len(res.grid) == 38

    def test_no_flip_grid(self):
        res = threshold_sweep(FrameStream(np.full(600, 0.5)), self.truth, EvalConfig(allow_flip=False))
        assert len(res.grid) == 19

    def test_f1_objective(self):
        eff = dilate_events(self.truth, 75).astype(float)
        assert threshold_sweep(FrameStream(eff), self.truth, objective="f1").report.f1 == 1.0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_flip_invariance(self, seed):
        p = np.random.default_rng(seed).random(600)
        a = threshold_sweep(FrameStream(p), self.truth)
        b = threshold_sweep(FrameStream(1 - p), self.truth)
        assert a.report.balanced_accuracy == b.report.balanced_accuracy


class TestSplits:
    def test_kfold(self):
        folds = kfold_split(10, 5, seed=3)
        assert [len(f) for f in folds] == [2] * 5
        assert sorted(np.concatenate(folds).tolist()) == list(range(10))

    def test_kfold_uneven_and_deterministic(self):
        folds = kfold_split(11, 3, seed=1)
        assert sorted(len(f) for f in folds) == [3, 4, 4]
        assert all(np.array_equal(a, b) for a, b in zip(folds, kfold_split(11, 3, seed=1)))

    def test_loo(self):
        assert [f.tolist() for f in loo_split(4)] == [[0], [1], [2], [3]]

    def test_too_many_folds(self):
        with pytest.raises(ValidationError):
            kfold_split(3, 5)
        with pytest.raises(ValidationError):
            loo_split(1)


def perfect_recording(name, events, total):
    truth = GroundTruth(events, total)
    eff = dilate_events(truth, 75).astype(float)
    return Recording(name, FrameStream(eff), FrameStream(np.full(total, 0.5)), truth)


class TestEvaluateRun:
    def test_identity_on_perfect_stream(self):
        recs = [perfect_recording(f"r{i}", [200 + 50 * i], 600) for i in range(4)]
        result = evaluate_run(lambda: PassThrough("vap"), recs, folds=loo_split(4))
        assert result.aggregate.balanced_accuracy == 1.0
        assert len(result.folds) == 4

    def test_pooled_equals_concatenated(self, small_synthetic):
        recs = small_synthetic
        result = evaluate_run(lambda: PassThrough("llm"), recs, folds=kfold_split(4, 2, seed=0), measure=False)
        total = ConfusionCounts()
        for fold in result.folds:
            for name in fold.test_names:
                rec = next(r for r in recs if r.name == name)
                total = total + oracle_confusion(
                    binarize(rec.llm, fold.sweep.best_threshold, fold.sweep.flipped), rec.truth.events.tolist(), 75
                )
        assert result.confusion == total

    def test_lr_beats_pass_throughs(self, small_synthetic):
        folds = kfold_split(4, 2, seed=0)
        scores = {
            name: evaluate_run(make, small_synthetic, folds=folds, measure=False).aggregate.balanced_accuracy
            for name, make in (
                ("lr", LogisticPredictor),
                ("vap", lambda: PassThrough("vap")),
                ("llm", lambda: PassThrough("llm")),
            )
        }
        assert scores["lr"] > max(scores["vap"], scores["llm"])

    def test_single_class_fold_skipped(self):
        good = [perfect_recording(f"r{i}", [300], 600) for i in range(2)]
        empty = Recording("e", FrameStream(np.zeros(600)), FrameStream(np.zeros(600)), GroundTruth([], 600))
        result = evaluate_run(LogisticPredictor, [empty] + good, folds=[[1, 2]], measure=False)
        assert result.folds[0].skipped and result.warnings
        assert result.aggregate is None

    def test_passthrough_rtf_is_small(self):
        rec = perfect_recording("r", [1000], 3000)  # 60 s
        result = evaluate_run(lambda: PassThrough("vap"), [rec])
        assert result.rtf < 0.05

    def test_parallel_folds_match_serial(self, small_synthetic):
        folds = kfold_split(4, 2, seed=0)
        a = evaluate_run(LogisticPredictor, small_synthetic, folds=folds, measure=False)
        b = evaluate_run(LogisticPredictor, small_synthetic, folds=folds, measure=False, jobs=2)
        assert a.confusion == b.confusion


def test_trace_file(tmp_path):
    truth = GroundTruth([2], 6)
    probs = FrameStream([0.1, 0.9, 0.8, 0.2, 0.0, 0.7])
    write_trace(probs, truth, 0.5, False, 1, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "frame,truth_event,effective_label,pred_binary,prob"
    assert lines[2] == "1,0,1,1,0.900000"
    assert lines[3] == "2,1,1,1,0.800000"
    assert lines[6] == "5,0,0,1,0.700000"
