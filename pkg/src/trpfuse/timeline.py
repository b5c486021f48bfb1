"""Frame-domain types and alignment helpers.

Every stream in a run shares one frame clock (50 Hz by default). Streams are
immutable numpy-backed values; all helpers here are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import AlignmentError, ValidationError

FRAME_RATE = 50


def _frozen(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FrameStream:
    """Per-frame probabilities from one predictor."""

    values: np.ndarray
    frame_rate: int = FRAME_RATE
    source_id: str = ""

    def __post_init__(self):
        values = _frozen(self.values, np.float64)
        if values.size and (np.isnan(values).any() or values.min() < 0.0 or values.max() > 1.0):
            bad = int(np.flatnonzero(~((values >= 0.0) & (values <= 1.0)))[0])
            raise ValidationError(f"{self.source_id or 'stream'}: frame {bad} has value {values[bad]!r} outside [0, 1]")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def duration_s(self) -> float:
        return len(self) / self.frame_rate

    def with_values(self, values) -> "FrameStream":
        return FrameStream(values, self.frame_rate, self.source_id)


@dataclass(frozen=True)
class GroundTruth:
    """Labeled TRP positions (frame indices) for one recording."""

    events: np.ndarray
    total_frames: int

    def __post_init__(self):
        events = _frozen(self.events, np.int64)
        total = int(self.total_frames)
        if total < 0:
            raise ValidationError(f"total_frames must be non-negative, got {total}")
        if events.size:
            if np.any(np.diff(events) <= 0):
                raise ValidationError("events must be strictly increasing")
            if events[0] < 0 or events[-1] >= total:
                raise ValidationError(f"events must lie in [0, {total}), got {events[0]}..{events[-1]}")
        object.__setattr__(self, "events", events)
        object.__setattr__(self, "total_frames", total)


def default_grid() -> tuple:
    return tuple(round(0.05 * k, 2) for k in range(1, 20))


@dataclass(frozen=True)
class EvalConfig:
    window_frames: int = 75
    frame_rate: int = FRAME_RATE
    threshold_grid: tuple = field(default_factory=default_grid)
    allow_flip: bool = True

    def __post_init__(self):
        if self.window_frames < 0:
            raise ValidationError("window_frames must be >= 0")
        grid = tuple(float(t) for t in self.threshold_grid)
        if not grid:
            raise ValidationError("threshold grid is empty")
        if any(not 0.0 < t < 1.0 for t in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValidationError("threshold grid must be strictly increasing values in (0, 1)")
        object.__setattr__(self, "threshold_grid", grid)


def expand_utterance_predictions(
    spans: Iterable[tuple],
    total_frames: int,
    frame_rate: int = FRAME_RATE,
    fill: float = 0.0,
    source_id: str = "",
) -> FrameStream:
    """Paint utterance-level probabilities onto the frame clock.

    Frame ``f`` takes the probability of the span whose ``[start_s, end_s)``
    contains ``f / frame_rate``. Frames outside every span get ``fill``.
    """
    ordered = sorted((float(s), float(e), float(p)) for s, e, p in spans)
    for s, e, p in ordered:
        if not s < e:
            raise ValidationError(f"span ({s}, {e}) has start >= end")
        if not 0.0 <= p <= 1.0:
            raise ValidationError(f"span ({s}, {e}) has probability {p} outside [0, 1]")
    for a, b in zip(ordered, ordered[1:]):
        if b[0] < a[1]:
            raise AlignmentError(f"overlapping spans {a[:2]} and {b[:2]}")

    values = np.full(int(total_frames), float(fill))
    for s, e, p in ordered:
        # frames f with s <= f/rate < e
        lo = max(0, math.ceil(s * frame_rate - 1e-9))
        hi = min(int(total_frames), math.ceil(e * frame_rate - 1e-9))
        if hi > lo:
            values[lo:hi] = p
    return FrameStream(values, frame_rate, source_id)


def dilate_events(truth: GroundTruth, window_frames: int) -> np.ndarray:
    """Effective per-frame labels: 1 within ``window_frames`` of any event."""
    n = truth.total_frames
    marks = np.zeros(n + 1, dtype=np.int64)
    if truth.events.size:
        lo = np.clip(truth.events - window_frames, 0, n)
        hi = np.clip(truth.events + window_frames + 1, 0, n)
        np.add.at(marks, lo, 1)
        np.add.at(marks, hi, -1)
    return (np.cumsum(marks[:n]) > 0).astype(np.int8)


def align_streams(a: FrameStream, b: FrameStream) -> tuple:
    if a.frame_rate != b.frame_rate:
        raise AlignmentError(f"frame rates differ: {a.frame_rate} vs {b.frame_rate}")
    n = min(len(a), len(b))
    return a.with_values(a.values[:n]), b.with_values(b.values[:n])


def shift_events(truth: GroundTruth, offset_frames: int) -> GroundTruth:
    """Move every event by ``offset_frames``, clamping into the recording."""
    if truth.total_frames == 0:
        return truth
    shifted = np.clip(truth.events + int(offset_frames), 0, truth.total_frames - 1)
    return GroundTruth(np.unique(shifted), truth.total_frames)


def seconds_to_frames(seconds: float, frame_rate: int = FRAME_RATE) -> int:
    return int(round(seconds * frame_rate))


def events_from_frames(frames: Sequence[int], total_frames: int) -> GroundTruth:
    return GroundTruth(np.unique(np.asarray(frames, dtype=np.int64)), total_frames)
