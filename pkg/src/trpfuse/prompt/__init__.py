"""Prompt ensemble: VAP-augmented turn-completion prompts for an external LLM."""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import List, Sequence

from ..errors import TransportError, ValidationError
from ..timeline import FrameStream, expand_utterance_predictions
from .client import LlmReply, NdjsonClient, ReplayClient, StaticClient


def load_template(name: str) -> str:
    """System text for ``prompt1``, ``prompt2`` or ``prompt3``."""
    return resources.files(__package__).joinpath("templates", f"{name}.txt").read_text(encoding="utf-8")


@dataclass(frozen=True)
class PromptConfig:
    vap_threshold_display: float = 0.9
    vap_yes_cutoff: float = 0.1
    max_context_s: float = 10.0
    temperature: float = 0.1
    top_p: float = 0.9
    system_text: str = field(default_factory=lambda: load_template("prompt2"))

    def __post_init__(self):
        if not 0.0 < self.vap_yes_cutoff < 1.0:
            raise ValidationError("vap_yes_cutoff must lie in (0, 1)")
        if self.max_context_s <= 0:
            raise ValidationError("max_context_s must be positive")


@dataclass(frozen=True)
class RenderedPrompt:
    system: str
    user: str

    @property
    def text(self) -> str:
        return f"System: {self.system}\n\nUser: {self.user}\n"


class Verdict(enum.Enum):
    YES = "yes"
    NO = "no"
    UNPARSEABLE = "unparseable"


@dataclass(frozen=True)
class LlmVerdict:
    value: Verdict
    raw_text: str


def format_number(x: float) -> str:
    """Up to 4 significant digits, no trailing zeros."""
    s = f"{x:.4g}"
    if "e" not in s and "." in s:
        s = s.rstrip("0").rstrip(".")
    return s


def render_prompt(segment_text: str, vap_confidence: float, cfg: PromptConfig = PromptConfig()) -> RenderedPrompt:
    if not 0.0 <= vap_confidence <= 1.0:
        raise ValidationError(f"vap_confidence {vap_confidence} outside [0, 1]")
    prediction = "yes" if vap_confidence <= cfg.vap_yes_cutoff else "no"
    user = (
        f"Speech segment: {segment_text}\n"
        f"VAP confidence: {format_number(1.0 - vap_confidence)} "
        f"(threshold: {format_number(cfg.vap_threshold_display)}, prediction: {prediction})"
    )
    return RenderedPrompt(cfg.system_text, user)


_LEADING_WORD = re.compile(r"[\W_]*([a-z]+)")


def parse_response(raw_text: str) -> LlmVerdict:
    """Case-insensitive yes/no on the leading word; anything else is UNPARSEABLE."""
    m = _LEADING_WORD.match(raw_text.lower())
    word = m.group(1) if m else ""
    if word == "yes":
        return LlmVerdict(Verdict.YES, raw_text)
    if word == "no":
        return LlmVerdict(Verdict.NO, raw_text)
    return LlmVerdict(Verdict.UNPARSEABLE, raw_text)


def truncate_context(words: Sequence[tuple], now_s: float, max_context_s: float = 10.0) -> str:
    """Join tokens heard in the last ``max_context_s`` seconds up to ``now_s``."""
    cutoff = now_s - max_context_s
    return " ".join(tok for t, tok in words if cutoff < t <= now_s)


def span_words(spans: Sequence[tuple]) -> List[tuple]:
    """Timestamp words by spreading each span's words evenly over it.

    A word is stamped with the time it finishes.
    """
    words = []
    for span in spans:
        start, end, text = span[0], span[1], span[-1]
        toks = str(text).split()
        for k, tok in enumerate(toks):
            words.append((start + (end - start) * (k + 1) / len(toks), tok))
    words.sort(key=lambda w: w[0])
    return words


def verdict_probability(reply: LlmReply, vap_confidence: float) -> float:
    if reply.prob is not None:
        return reply.prob
    verdict = parse_response(reply.text).value
    if verdict is Verdict.YES:
        return 1.0
    if verdict is Verdict.NO:
        return 0.0
    return 1.0 - vap_confidence


def prompt_ensemble_predict(spans: Sequence[tuple], vap: FrameStream, client, cfg: PromptConfig = PromptConfig()) -> FrameStream:
    """Query the LLM once at the end of every span and paint verdicts on frames.

    ``spans`` are ``(start_s, end_s, ..., text)`` tuples on the stream's clock.
    The VAP confidence shown in the prompt is the stream value at the span's
    last frame.
    """
    rate = vap.frame_rate
    n = len(vap)
    words = span_words(spans)
    painted = []
    for k, span in enumerate(sorted(spans, key=lambda s: s[0])):
        start, end = float(span[0]), float(span[1])
        if start * rate >= n:
            continue
        frame = min(n - 1, max(0, math.ceil(end * rate - 1e-9) - 1))
        conf = float(vap.values[frame])
        prompt = render_prompt(truncate_context(words, end, cfg.max_context_s), conf, cfg)
        try:
            reply = client.complete(prompt.system, prompt.user, cfg.temperature, cfg.top_p)
        except (TransportError, OSError) as exc:
            raise TransportError(f"decision point {k} (frame {frame}): {exc}", decision_index=k) from None
        painted.append((start, end, verdict_probability(reply, conf)))
    return expand_utterance_predictions(painted, n, rate, source_id="prompt")


__all__ = [
    "LlmReply",
    "LlmVerdict",
    "NdjsonClient",
    "PromptConfig",
    "RenderedPrompt",
    "ReplayClient",
    "StaticClient",
    "Verdict",
    "format_number",
    "load_template",
    "parse_response",
    "prompt_ensemble_predict",
    "render_prompt",
    "truncate_context",
]
