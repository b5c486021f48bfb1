"""Dataset ingestion: CCPE dialogs, ICC participant responses, stream files.

File formats
------------
prediction stream   CSV ``frame,prob``; frames dense from 0.
ground truth        CSV ``event_frame`` plus ``<name>.meta`` holding
                    ``total_frames=<n>`` (key=value lines).
turn spans          CSV ``start_s,end_s,speaker,text``.
ICC responses       CSV ``participant_id,response_frame``.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .errors import SchemaError, ValidationError
from .timeline import FRAME_RATE, FrameStream, GroundTruth, dilate_events

SPEAKERS = ("USER", "ASSISTANT")


@dataclass(frozen=True)
class Dialog:
    id: str
    utterances: Tuple[Tuple[str, str], ...]


@dataclass(frozen=True)
class TimelineConfig:
    gap_s: float = 2.0
    words_per_s: float = 2.5
    frame_rate: int = FRAME_RATE

    def __post_init__(self):
        if self.gap_s < 0:
            raise ValidationError("gap_s must be >= 0")
        if self.words_per_s <= 0:
            raise ValidationError("words_per_s must be > 0")


@dataclass(frozen=True)
class ParticipantResponses:
    n_participants: int
    responses: Tuple[Tuple[int, ...], ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.n_participants < 1:
            raise ValidationError("n_participants must be >= 1")
        if len(self.responses) > self.n_participants:
            raise ValidationError("more response lists than participants")
        if any(f < 0 for frames in self.responses for f in frames):
            raise ValidationError("response frames must be non-negative")


# ---------------------------------------------------------------------------
# CCPE
# ---------------------------------------------------------------------------


def parse_ccpe(document) -> List[Dialog]:
    """Parse the public CCPE ``data.json`` layout.

    Only ``conversationId`` and ``utterances[].speaker/text`` are used; segment
    annotations are accepted and ignored.
    """
    raw = document if isinstance(document, bytes) else str(document).encode("utf-8")
    text = raw.decode("utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise SchemaError(f"malformed JSON at byte offset {offset}: {exc.msg}") from None
    if not isinstance(data, list):
        raise SchemaError("top-level JSON value must be an array of conversations")

    dialogs = []
    for i, conv in enumerate(data):
        if not isinstance(conv, dict):
            raise SchemaError(f"conversation #{i} is not an object")
        if "conversationId" not in conv:
            raise SchemaError(f"conversation #{i}: missing field 'conversationId'")
        conv_id = str(conv["conversationId"])
        if "utterances" not in conv:
            raise SchemaError(f"dialog {conv_id}: missing field 'utterances'")
        utterances = []
        for j, utt in enumerate(conv["utterances"]):
            for key in ("speaker", "text"):
                if not isinstance(utt, dict) or key not in utt:
                    raise SchemaError(f"dialog {conv_id}: utterance {j} missing field '{key}'")
            speaker = str(utt["speaker"]).upper()
            if speaker not in SPEAKERS:
                raise SchemaError(f"dialog {conv_id}: utterance {j} has unknown speaker {utt['speaker']!r}")
            utterances.append((speaker, str(utt["text"])))
        dialogs.append(Dialog(conv_id, tuple(utterances)))
    return dialogs


def group_turns(dialog: Dialog) -> List[Tuple[str, str]]:
    """Merge consecutive same-speaker utterances into turns."""
    turns: List[Tuple[str, List[str]]] = []
    for speaker, text in dialog.utterances:
        if turns and turns[-1][0] == speaker:
            turns[-1][1].append(text)
        else:
            turns.append((speaker, [text]))
    return [(speaker, " ".join(parts)) for speaker, parts in turns]


def build_ccpe_timeline(dialog: Dialog, cfg: TimelineConfig = TimelineConfig()):
    """Lay turns out on the frame clock with ``gap_s`` silence after each.

    Returns ``(GroundTruth, spans)`` where spans are
    ``(start_s, end_s, speaker, text)`` per turn and one TRP event sits on the
    final frame of every turn.
    """
    if not dialog.utterances:
        raise ValidationError(f"dialog {dialog.id} has no utterances")
    rate = cfg.frame_rate
    gap = int(round(cfg.gap_s * rate))
    cursor = 0
    events, spans = [], []
    for speaker, text in group_turns(dialog):
        n_words = len(text.split())
        length = max(1, int(round(n_words / cfg.words_per_s * rate)))
        start, end = cursor, cursor + length
        events.append(end - 1)
        spans.append((start / rate, end / rate, speaker, text))
        cursor = end + gap
    return GroundTruth(events, cursor), spans


# ---------------------------------------------------------------------------
# ICC
# ---------------------------------------------------------------------------


def required_agreement(agreement: float, n_participants: int) -> int:
    # tolerance keeps 0.3 * 10 from rounding up to 4
    return max(1, math.ceil(agreement * n_participants - 1e-9))


def aggregate_icc_labels(
    resp: ParticipantResponses,
    total_frames: int,
    agreement: float = 0.30,
    smear_frames: int = 37,
) -> GroundTruth:
    """Turn participant button presses into consensus TRP events.

    Each participant's presses are widened by ``smear_frames``; frames covered
    by at least ``ceil(agreement * n)`` distinct participants form runs, and
    each run yields one event at its (floored) midpoint.
    """
    if total_frames <= 0:
        raise ValidationError("total_frames must be positive")
    # runs are found on a timeline padded by the smear so that a press near
    # the recording edge keeps its own center; centers are clamped afterwards
    pad = smear_frames
    span = total_frames + 2 * pad
    coverage = np.zeros(span, dtype=np.int64)
    for frames in resp.responses:
        frames = np.unique([f + pad for f in frames if f < total_frames])
        if frames.size:
            coverage += dilate_events(GroundTruth(frames, span), smear_frames)
    hit = np.concatenate(([0], (coverage >= required_agreement(agreement, resp.n_participants)).astype(np.int8), [0]))
    edges = np.flatnonzero(np.diff(hit))
    starts, ends = edges[0::2], edges[1::2] - 1
    centers = np.clip((starts + ends) // 2 - pad, 0, total_frames - 1)
    return GroundTruth(np.unique(centers), total_frames)


def load_icc_responses(path, n_participants: Optional[int] = None) -> ParticipantResponses:
    by_participant = defaultdict(list)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"participant_id", "response_frame"} <= set(reader.fieldnames):
            raise SchemaError(f"{path}: expected header participant_id,response_frame")
        for row_no, row in enumerate(reader, start=2):
            try:
                frame = int(row["response_frame"])
            except ValueError:
                raise ValidationError(f"{path}:{row_no}: bad response_frame {row['response_frame']!r}") from None
            by_participant[row["participant_id"]].append(frame)
    n = n_participants if n_participants is not None else len(by_participant)
    responses = tuple(tuple(sorted(v)) for _, v in sorted(by_participant.items()))
    return ParticipantResponses(max(n, 1), responses)


# ---------------------------------------------------------------------------
# stream / ground-truth files
# ---------------------------------------------------------------------------


def store_prediction_stream(stream: FrameStream, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["frame", "prob"])
        for i, v in enumerate(stream.values.tolist()):
            writer.writerow([i, repr(v)])


def load_prediction_stream(path, frame_rate: int = FRAME_RATE) -> FrameStream:
    values = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["frame", "prob"]:
            raise SchemaError(f"{path}: expected header frame,prob, got {header}")
        for row_no, row in enumerate(reader, start=2):
            try:
                frame, prob = int(row[0]), float(row[1])
            except (ValueError, IndexError):
                raise ValidationError(f"{path}:{row_no}: malformed row {row}") from None
            if frame != len(values):
                raise ValidationError(f"{path}:{row_no}: frame indices not dense, missing frame {len(values)}")
            if not 0.0 <= prob <= 1.0:
                raise ValidationError(f"{path}:{row_no}: prob {prob} outside [0, 1]")
            values.append(prob)
    return FrameStream(values, frame_rate, Path(path).stem)


def read_meta(path) -> dict:
    meta = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
    return meta


def write_meta(path, meta: dict) -> None:
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in meta.items()))


def store_ground_truth(truth: GroundTruth, events_path, meta_path, extra: Optional[dict] = None) -> None:
    with open(events_path, "w", newline="") as fh:
        fh.write("event_frame\n")
        for e in truth.events.tolist():
            fh.write(f"{e}\n")
    write_meta(meta_path, {"total_frames": truth.total_frames, **(extra or {})})


def load_ground_truth(events_path, meta_path) -> GroundTruth:
    meta = read_meta(meta_path)
    if "total_frames" not in meta:
        raise SchemaError(f"{meta_path}: missing total_frames")
    with open(events_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["event_frame"]:
            raise SchemaError(f"{events_path}: expected header event_frame, got {header}")
        events = [int(row[0]) for row in reader if row]
    return GroundTruth(events, int(meta["total_frames"]))


def store_spans(spans, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["start_s", "end_s", "speaker", "text"])
        for start, end, speaker, text in spans:
            writer.writerow([repr(float(start)), repr(float(end)), speaker, text])


def load_spans(path):
    with open(path, newline="") as fh:
        return [(float(r["start_s"]), float(r["end_s"]), r["speaker"], r["text"]) for r in csv.DictReader(fh)]
