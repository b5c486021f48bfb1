"""Adapters exposing each ensemble through the evaluation ``Predictor`` API."""

from __future__ import annotations

from dataclasses import replace
from typing import Callable, Optional, Sequence

import numpy as np

from .ensemble_lr import LogisticModel, LRConfig, fit_logistic, predict_logistic
from .errors import ValidationError
from .evaluation import PassThrough, Predictor, Recording
from .features import build_feature_matrix
from .lstm import LstmModel, TrainConfig, predict_lstm, train_lstm
from .prompt import PromptConfig, prompt_ensemble_predict
from .timeline import EvalConfig, FrameStream, dilate_events

KINDS = ("lr", "prompt", "lstm", "passthrough-vap", "passthrough-llm")


class LogisticPredictor(Predictor):
    name = "lr"
    needs_training = True

    def __init__(self, cfg: LRConfig = LRConfig(), model: Optional[LogisticModel] = None):
        self.cfg = cfg
        self.model = model

    def fit(self, recordings: Sequence[Recording], cfg: EvalConfig, seed: int = 0):
        X = np.vstack([build_feature_matrix(r.vap, r.llm).values for r in recordings])
        y = np.concatenate([dilate_events(r.truth, cfg.window_frames) for r in recordings])
        self.model = fit_logistic(X, y, replace(self.cfg, seed=seed))
        return self

    def predict(self, rec: Recording) -> FrameStream:
        return predict_logistic(self.model, build_feature_matrix(rec.vap, rec.llm), rec.vap.frame_rate)


class LstmPredictor(Predictor):
    name = "lstm"
    needs_training = True

    def __init__(self, cfg: TrainConfig = TrainConfig(), model: Optional[LstmModel] = None):
        self.cfg = cfg
        self.model = model
        self.history = []

    def fit(self, recordings: Sequence[Recording], cfg: EvalConfig, seed: int = 0):
        train_cfg = replace(self.cfg, seed=seed, window_frames=cfg.window_frames)
        self.model, self.history = train_lstm(recordings, train_cfg)
        return self

    def predict(self, rec: Recording) -> FrameStream:
        return predict_lstm(self.model, rec.vap, rec.llm)


class PromptPredictor(Predictor):
    """Stateless; ``client_factory`` opens one client per recording."""

    name = "prompt"

    def __init__(self, client_factory: Callable, cfg: PromptConfig = PromptConfig()):
        self.client_factory = client_factory
        self.cfg = cfg

    def predict(self, rec: Recording) -> FrameStream:
        if rec.spans is None:
            raise ValidationError(f"{rec.name}: the prompt ensemble needs turn spans")
        client = self.client_factory()
        try:
            return prompt_ensemble_predict(rec.spans, rec.vap, client, self.cfg)
        finally:
            client.close()


def make_predictor(kind: str, **kwargs) -> Predictor:
    if kind == "passthrough-vap":
        return PassThrough("vap")
    if kind == "passthrough-llm":
        return PassThrough("llm")
    if kind == "lr":
        return LogisticPredictor(**kwargs)
    if kind == "lstm":
        return LstmPredictor(**kwargs)
    if kind == "prompt":
        return PromptPredictor(**kwargs)
    raise ValidationError(f"unknown ensemble kind {kind!r}; expected one of {', '.join(KINDS)}")
