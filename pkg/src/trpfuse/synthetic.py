"""Synthetic recordings where the turn label depends on both streams jointly.

Each recording is a sequence of segments. A segment's center carries one of
three region kinds:

* ``joint`` – both streams rise to a plateau and a TRP event sits at the center
* ``vap``   – only the audio stream rises (an acoustic decoy)
* ``llm``   – only the text stream rises (a lexical decoy)

Plateaus span the evaluation window around the center with a few frames of
edge jitter, so a single stream cannot separate true regions from its own
decoys while the conjunction of both can.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .evaluation import Recording
from .timeline import FRAME_RATE, FrameStream, GroundTruth


@dataclass(frozen=True)
class SyntheticConfig:
    n_frames: int = 3000
    segment_frames: int = 250
    half_width: int = 75
    edge_jitter: int = 5
    p_joint: float = 0.4
    p_vap_only: float = 0.3
    low_mean: float = 0.3
    high_mean: float = 0.85
    noise: float = 0.12


def make_recording(name: str, seed: int, cfg: SyntheticConfig = SyntheticConfig()) -> Recording:
    rng = np.random.default_rng(seed)
    n = cfg.n_frames
    vap_hi = np.zeros(n, dtype=bool)
    llm_hi = np.zeros(n, dtype=bool)
    events = []
    for start in range(0, n - cfg.segment_frames + 1, cfg.segment_frames):
        center = start + cfg.segment_frames // 2
        u = rng.random()
        kind = "joint" if u < cfg.p_joint else "vap" if u < cfg.p_joint + cfg.p_vap_only else "llm"
        for hi, active in ((vap_hi, kind in ("joint", "vap")), (llm_hi, kind in ("joint", "llm"))):
            if active:
                lo_j, hi_j = rng.integers(-cfg.edge_jitter, cfg.edge_jitter + 1, size=2)
                hi[max(0, center - cfg.half_width + lo_j) : min(n, center + cfg.half_width + 1 + hi_j)] = True
        if kind == "joint":
            events.append(center)

    def stream(hi, source):
        base = np.where(hi, cfg.high_mean, cfg.low_mean)
        return FrameStream(np.clip(base + rng.normal(0.0, cfg.noise, n), 0.0, 1.0), FRAME_RATE, source)

    return Recording(name, stream(vap_hi, "vap"), stream(llm_hi, "llm"), GroundTruth(events, n))


def make_dataset(n_recordings: int, seed: int, cfg: SyntheticConfig = SyntheticConfig(), prefix: str = "syn"):
    return [make_recording(f"{prefix}{i:03d}", seed * 1000 + i, cfg) for i in range(n_recordings)]
