"""Engineered per-frame features for the logistic-regression ensemble."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import AlignmentError, ValidationError
from .timeline import FrameStream

WINDOWS = (5, 10, 20)
STATS = ("mean", "std", "max", "min")
STREAM_NAMES = ("vap", "llm")


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray  # (n_frames, n_features)
    column_names: Tuple[str, ...]

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def to_csv(self, path) -> None:
        header = ",".join(self.column_names)
        np.savetxt(path, self.values, delimiter=",", header=header, comments="", fmt="%.17g")


def column_names(windows: Sequence[int] = WINDOWS) -> Tuple[str, ...]:
    names = list(STREAM_NAMES)
    for stream in STREAM_NAMES:
        for w in windows:
            names += [f"{stream}_w{w}_{stat}" for stat in STATS]
    return tuple(names) + ("vap_x_llm", "max_vap_llm", "min_vap_llm")


def rolling_stats(stream, windows: Sequence[int] = WINDOWS) -> dict:
    """Trailing-window mean/std/max/min per frame.

    Near the start the window shrinks to the available prefix, so frame ``f``
    uses ``min(w, f + 1)`` values. ``std`` is the population deviation.
    Returns ``{w: array of shape (n, 4)}`` with columns in ``STATS`` order.
    """
    x = np.asarray(stream.values if isinstance(stream, FrameStream) else stream, dtype=np.float64)
    if x.size == 0:
        raise ValidationError("rolling_stats needs a non-empty stream")
    out = {}
    for w in windows:
        padded = np.concatenate((np.full(w - 1, np.nan), x))
        view = sliding_window_view(padded, w)
        counts = np.minimum(np.arange(1, x.size + 1), w)
        mean = np.nansum(view, axis=1) / counts
        var = np.nansum((view - mean[:, None]) ** 2, axis=1) / counts
        hi, lo = np.nanmax(view, axis=1), np.nanmin(view, axis=1)
        # rounding can push the mean of a flat window just past its extremes
        mean = np.clip(mean, lo, hi)
        out[w] = np.column_stack((mean, np.sqrt(var), hi, lo))
    return out


def interaction(p_vap, p_llm):
    """Product, maximum and minimum of the two probabilities."""
    a, b = np.asarray(p_vap, dtype=np.float64), np.asarray(p_llm, dtype=np.float64)
    return a * b, np.maximum(a, b), np.minimum(a, b)


def build_feature_matrix(vap: FrameStream, llm: FrameStream, windows: Sequence[int] = WINDOWS) -> FeatureMatrix:
    if len(vap) != len(llm):
        raise AlignmentError(f"stream lengths differ: {len(vap)} vs {len(llm)}")
    names = column_names(windows)
    n = len(vap)
    if n == 0:
        return FeatureMatrix(np.zeros((0, len(names))), names)
    blocks = [vap.values[:, None], llm.values[:, None]]
    for s in (vap, llm):
        stats = rolling_stats(s, windows)
        blocks += [stats[w] for w in windows]
    blocks.append(np.column_stack(interaction(vap.values, llm.values)))
    return FeatureMatrix(np.hstack(blocks), names)
