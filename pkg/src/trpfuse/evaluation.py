"""Windowed scoring, threshold sweeps and cross-validation drivers.

Scoring is frame level: point events are dilated by the evaluation window
into effective labels and every frame is one confusion-matrix entry. Any
0/0 ratio is defined as 0.
"""

from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .errors import AlignmentError, ValidationError
from .timeline import EvalConfig, FrameStream, GroundTruth, dilate_events

log = logging.getLogger(__name__)

REPORT_COLUMNS = (
    "dataset", "model", "prompt", "threshold", "flipped",
    "accuracy", "balanced_acc", "precision", "recall", "f1", "rtf",
)
TRACE_COLUMNS = ("frame", "truth_event", "effective_label", "pred_binary", "prob")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)


@dataclass(frozen=True)
class MetricReport:
    accuracy: float
    balanced_accuracy: float
    precision: float
    recall: float
    f1: float
    rtf: Optional[float] = None


@dataclass(frozen=True)
class SweepResult:
    best_threshold: float
    flipped: bool
    report: MetricReport
    grid: tuple  # (threshold, flipped, objective) per evaluated pair


def _ratio(num, den) -> float:
    return num / den if den else 0.0


def binarize(stream, threshold: float, flipped: bool = False) -> np.ndarray:
    p = np.asarray(stream.values if isinstance(stream, FrameStream) else stream, dtype=np.float64)
    if flipped:
        p = 1.0 - p
    return (p >= threshold).astype(np.int8)


def confusion_from_labels(pred: np.ndarray, effective: np.ndarray) -> ConfusionCounts:
    pred = np.asarray(pred).astype(bool)
    eff = np.asarray(effective).astype(bool)
    tp = int(np.count_nonzero(pred & eff))
    fp = int(np.count_nonzero(pred & ~eff))
    fn = int(np.count_nonzero(~pred & eff))
    return ConfusionCounts(tp, fp, pred.size - tp - fp - fn, fn)


def windowed_confusion(pred, truth: GroundTruth, window: int = 75) -> ConfusionCounts:
    pred = np.asarray(pred)
    if pred.size != truth.total_frames:
        raise AlignmentError(f"{pred.size} predictions for {truth.total_frames} frames")
    return confusion_from_labels(pred, dilate_events(truth, window))


def metrics(conf: ConfusionCounts, rtf: Optional[float] = None) -> MetricReport:
    if conf.total <= 0:
        raise ValidationError("empty confusion counts")
    tpr = _ratio(conf.tp, conf.tp + conf.fn)
    tnr = _ratio(conf.tn, conf.tn + conf.fp)
    precision = _ratio(conf.tp, conf.tp + conf.fp)
    return MetricReport(
        accuracy=(conf.tp + conf.tn) / conf.total,
        balanced_accuracy=0.5 * (tpr + tnr),
        precision=precision,
        recall=tpr,
        f1=_ratio(2 * precision * tpr, precision + tpr),
        rtf=rtf,
    )


def rtf(processing_s: float, audio_s: float) -> float:
    if audio_s <= 0:
        raise ValidationError("audio duration must be positive")
    return processing_s / audio_s


OBJECTIVES = {
    "balanced_accuracy": lambda r: r.balanced_accuracy,
    "f1": lambda r: r.f1,
}


def sweep_many(pairs: Sequence[tuple], cfg: EvalConfig = EvalConfig(), objective: str = "balanced_accuracy") -> SweepResult:
    """Threshold sweep over several ``(probs, truth)`` recordings pooled.

    Unflipped entries are tried before flipped ones and thresholds ascend, so
    ties resolve to the first such entry.
    """
    score = OBJECTIVES[objective]
    prepared = []
    for probs, truth in pairs:
        p = np.asarray(probs.values if isinstance(probs, FrameStream) else probs, dtype=np.float64)
        if p.size != truth.total_frames:
            raise AlignmentError(f"{p.size} predictions for {truth.total_frames} frames")
        prepared.append((p, dilate_events(truth, cfg.window_frames)))
    if not prepared:
        raise ValidationError("nothing to sweep")

    grid, best = [], None
    for flipped in (False, True) if cfg.allow_flip else (False,):
        for t in cfg.threshold_grid:
            conf = ConfusionCounts()
            for p, eff in prepared:
                conf = conf + confusion_from_labels(binarize(p, t, flipped), eff)
            report = metrics(conf)
            value = score(report)
            grid.append((t, flipped, value))
            if best is None or value > best[0]:
                best = (value, t, flipped, report)
    return SweepResult(best[1], best[2], best[3], tuple(grid))


def threshold_sweep(probs, truth: GroundTruth, cfg: EvalConfig = EvalConfig(), objective: str = "balanced_accuracy") -> SweepResult:
    return sweep_many([(probs, truth)], cfg, objective)


def kfold_split(n_items: int, k: int = 5, seed: int = 0) -> List[np.ndarray]:
    if k < 1 or k > n_items:
        raise ValidationError(f"cannot split {n_items} items into {k} folds")
    order = np.random.default_rng(seed).permutation(n_items)
    return [np.sort(f) for f in np.array_split(order, k)]


def loo_split(n_items: int) -> List[np.ndarray]:
    if n_items < 2:
        raise ValidationError("leave-one-out needs at least 2 items")
    return [np.array([i]) for i in range(n_items)]


# ---------------------------------------------------------------------------
# run orchestration
# ---------------------------------------------------------------------------


@dataclass
class Recording:
    name: str
    vap: FrameStream
    llm: FrameStream
    truth: GroundTruth
    spans: Optional[list] = None  # (start_s, end_s, speaker, text), for the prompt ensemble

    def __post_init__(self):
        n = self.truth.total_frames
        if len(self.vap) != n or len(self.llm) != n:
            raise AlignmentError(
                f"{self.name}: stream lengths {len(self.vap)}/{len(self.llm)} do not match total_frames {n}"
            )

    @property
    def duration_s(self) -> float:
        return self.truth.total_frames / self.vap.frame_rate


class Predictor:
    """Interface for ensembles driven by :func:`evaluate_run`.

    ``fit`` receives training recordings (ignored by stateless predictors) and
    ``predict`` maps one recording to a probability stream.
    """

    name = "predictor"
    needs_training = False

    def fit(self, recordings: Sequence[Recording], cfg: EvalConfig, seed: int = 0) -> "Predictor":
        return self

    def predict(self, rec: Recording) -> FrameStream:
        raise NotImplementedError


class PassThrough(Predictor):
    def __init__(self, which: str = "vap"):
        if which not in ("vap", "llm"):
            raise ValidationError(f"unknown pass-through source {which!r}")
        self.which = which
        self.name = f"passthrough-{which}"

    def predict(self, rec: Recording) -> FrameStream:
        return getattr(rec, self.which)


@dataclass
class FoldResult:
    fold: int
    test_names: List[str]
    sweep: Optional[SweepResult]
    confusion: Optional[ConfusionCounts]
    report: Optional[MetricReport]
    rtf: Optional[float] = None
    skipped: Optional[str] = None
    predictions: dict = field(default_factory=dict)


@dataclass
class RunResult:
    model: str
    folds: List[FoldResult]
    aggregate: Optional[MetricReport]
    confusion: Optional[ConfusionCounts]
    rtf: Optional[float]
    warnings: List[str] = field(default_factory=list)


def measure_rtf(predictor: Predictor, recordings: Sequence[Recording]) -> float:
    """Wall-clock prediction time over audio time, run sequentially."""
    audio = sum(r.duration_s for r in recordings)
    start = time.perf_counter()
    for rec in recordings:
        predictor.predict(rec)
    return rtf(time.perf_counter() - start, audio)


def _has_both_classes(recordings: Sequence[Recording], window: int) -> bool:
    labels = np.concatenate([dilate_events(r.truth, window) for r in recordings]) if recordings else np.zeros(0)
    return labels.size > 0 and 0 < labels.sum() < labels.size


def evaluate_run(
    make_predictor: Callable[[], Predictor],
    recordings: Sequence[Recording],
    cfg: EvalConfig = EvalConfig(),
    folds: Optional[Sequence[Sequence[int]]] = None,
    seed: int = 0,
    objective: str = "balanced_accuracy",
    jobs: int = 1,
    measure: bool = True,
) -> RunResult:
    """Train on each fold's complement, sweep there, score the held-out fold.

    The (threshold, flip) pair chosen on training recordings is frozen and
    applied to the test recordings. Confusion counts are pooled across folds
    for the aggregate. ``folds=None`` means a single fold where the model is
    fit, swept and scored on all recordings.
    """
    recordings = list(recordings)
    if folds is None:
        plan = [(list(range(len(recordings))), list(range(len(recordings))))]
    else:
        plan = []
        for test in folds:
            test = [int(i) for i in test]
            train = [i for i in range(len(recordings)) if i not in set(test)]
            plan.append((train, test))

    def run_fold(k):
        train_idx, test_idx = plan[k]
        train = [recordings[i] for i in train_idx]
        test = [recordings[i] for i in test_idx]
        names = [r.name for r in test]
        predictor = make_predictor()
        if not train or not _has_both_classes(train, cfg.window_frames):
            reason = f"fold {k}: training labels contain a single class"
            return FoldResult(k, names, None, None, None, skipped=reason), predictor
        predictor.fit(train, cfg, seed=seed + k)
        sweep = sweep_many([(predictor.predict(r), r.truth) for r in train], cfg, objective)
        conf = ConfusionCounts()
        preds = {}
        for rec in test:
            probs = predictor.predict(rec)
            preds[rec.name] = probs
            conf = conf + windowed_confusion(binarize(probs, sweep.best_threshold, sweep.flipped), rec.truth, cfg.window_frames)
        return FoldResult(k, names, sweep, conf, metrics(conf), predictions=preds), predictor

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(run_fold, range(len(plan))))
    else:
        outcomes = [run_fold(k) for k in range(len(plan))]

    # timing runs after the (possibly parallel) fold work, one stream at a time
    proc_s = audio_s = 0.0
    warnings = []
    for (result, predictor), (_, test_idx) in zip(outcomes, plan):
        if result.skipped:
            log.warning(result.skipped)
            warnings.append(result.skipped)
            continue
        if measure:
            test = [recordings[i] for i in test_idx]
            result.rtf = measure_rtf(predictor, test)
            audio = sum(r.duration_s for r in test)
            proc_s += result.rtf * audio
            audio_s += audio
            result.report = metrics(result.confusion, result.rtf)

    folds_out = [r for r, _ in outcomes]
    scored = [f.confusion for f in folds_out if f.confusion is not None]
    pooled = sum(scored, ConfusionCounts()) if scored else None
    total_rtf = rtf(proc_s, audio_s) if measure and audio_s > 0 else None
    aggregate = metrics(pooled, total_rtf) if pooled is not None and pooled.total else None
    name = outcomes[0][1].name if outcomes else "predictor"
    return RunResult(name, folds_out, aggregate, pooled, total_rtf, warnings)


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def report_row(dataset: str, model: str, prompt: str, threshold, flipped, report: Optional[MetricReport], include_rtf=True) -> dict:
    row = {"dataset": dataset, "model": model, "prompt": prompt, "threshold": threshold, "flipped": flipped}
    if report is not None:
        row.update(
            accuracy=report.accuracy,
            balanced_acc=report.balanced_accuracy,
            precision=report.precision,
            recall=report.recall,
            f1=report.f1,
            rtf=report.rtf if include_rtf else None,
        )
    return {k: _fmt(row.get(k)) for k in REPORT_COLUMNS}


def write_report(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def write_trace(probs: FrameStream, truth: GroundTruth, threshold: float, flipped: bool, window: int, path) -> None:
    """Per-frame trace: truth events, effective labels, decisions, probabilities."""
    eff = dilate_events(truth, window)
    pred = binarize(probs, threshold, flipped)
    is_event = np.zeros(truth.total_frames, dtype=np.int8)
    is_event[truth.events] = 1
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for f in range(truth.total_frames):
            writer.writerow([f, int(is_event[f]), int(eff[f]), int(pred[f]), f"{probs.values[f]:.6f}"])
