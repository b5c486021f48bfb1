"""Mini-batch training and windowed inference for the LSTM ensemble."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from ..errors import AlignmentError, TrainingError
from ..timeline import FrameStream, dilate_events
from .loss import focal_loss
from .model import (
    LstmModel,
    TrainConfig,
    compute_gradients,
    init_model,
    make_dropout_mask,
    predict_logits,
)
from .optim import AdamWState, adamw_step

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "train_loss", "val_loss", "balanced_acc", "sensitivity", "specificity", "pos_ratio")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    balanced_acc: float
    sensitivity: float
    specificity: float
    pos_ratio: float


def chunk_sequence(features: np.ndarray, seq_len: int, labels: Optional[np.ndarray] = None):
    """Split ``(T, F)`` into non-overlapping ``seq_len`` windows, padding the tail.

    Returns ``(X, y, mask)`` with shapes ``(N, seq_len, F)``, ``(N, seq_len)``
    and ``(N, seq_len)``.
    """
    T, F = features.shape
    n = max(1, -(-T // seq_len))
    X = np.zeros((n, seq_len, F))
    y = np.zeros((n, seq_len))
    mask = np.zeros((n, seq_len))
    for k in range(n):
        seg = features[k * seq_len : (k + 1) * seq_len]
        X[k, : len(seg)] = seg
        mask[k, : len(seg)] = 1.0
        if labels is not None:
            y[k, : len(seg)] = labels[k * seq_len : (k + 1) * seq_len]
    return X, y, mask


def _streams(rec):
    if hasattr(rec, "vap"):
        return rec.vap, rec.llm, rec.truth
    return rec


def _stack(vap: FrameStream, llm: FrameStream) -> np.ndarray:
    if len(vap) != len(llm):
        raise AlignmentError(f"stream lengths differ: {len(vap)} vs {len(llm)}")
    return np.column_stack((vap.values, llm.values))


def build_chunks(recordings, cfg: TrainConfig):
    Xs, ys, ms = [], [], []
    for rec in recordings:
        vap, llm, truth = _streams(rec)
        feats = _stack(vap, llm)
        if len(feats) == 0:
            continue
        X, y, m = chunk_sequence(feats, cfg.seq_len, dilate_events(truth, cfg.window_frames))
        Xs.append(X)
        ys.append(y)
        ms.append(m)
    if not Xs:
        raise TrainingError("no training frames")
    return np.concatenate(Xs), np.concatenate(ys), np.concatenate(ms)


def _probs(model: LstmModel, X, mask, batch_size=64):
    out = np.empty(X.shape[:2])
    for s in range(0, len(X), batch_size):
        z = predict_logits(model, X[s : s + batch_size], mask[s : s + batch_size])
        out[s : s + batch_size] = 0.5 * (1.0 + np.tanh(0.5 * z))
    return out


def _evaluate(model, X, y, mask, cfg):
    p = _probs(model, X, mask)
    valid = mask > 0
    loss = focal_loss(p, y, cfg.gamma, cfg.alpha, mask)
    pred = p[valid] >= 0.5
    truth = y[valid] > 0.5
    tp = np.count_nonzero(pred & truth)
    tn = np.count_nonzero(~pred & ~truth)
    pos, neg = np.count_nonzero(truth), np.count_nonzero(~truth)
    sens = tp / pos if pos else 0.0
    specificity = tn / neg if neg else 0.0
    return loss, 0.5 * (sens + specificity), sens, specificity, float(pred.mean()) if pred.size else 0.0


def train_lstm(recordings: Sequence, cfg: TrainConfig = TrainConfig(), val_recordings: Optional[Sequence] = None):
    """Train on ``(vap, llm, truth)`` recordings; returns ``(model, history)``.

    Targets are the dilated effective labels. Without explicit validation
    recordings, ``cfg.val_fraction`` of the chunks is held out (chosen by the
    seed); the remaining chunks are shuffled into batches every epoch.
    """
    X, y, mask = build_chunks(recordings, cfg)
    if not np.any(y[mask > 0] > 0.5):
        raise TrainingError("training data has no positive labels")

    rng = np.random.default_rng(cfg.seed)
    model = init_model(X.shape[2], cfg.hidden, cfg.heads, cfg.layers, cfg.dropout, cfg.seq_len, seed=cfg.seed)
    if val_recordings is not None:
        Xv, yv, mv = build_chunks(val_recordings, cfg)
    elif cfg.val_fraction > 0 and len(X) > 1:
        order = rng.permutation(len(X))
        n_val = min(len(X) - 1, max(1, int(round(cfg.val_fraction * len(X)))))
        val_idx, train_idx = np.sort(order[:n_val]), np.sort(order[n_val:])
        Xv, yv, mv = X[val_idx], y[val_idx], mask[val_idx]
        X, y, mask = X[train_idx], y[train_idx], mask[train_idx]
    else:
        Xv, yv, mv = X, y, mask

    params, state = model.params, AdamWState()
    history: List[EpochStats] = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(X))
        total, frames = 0.0, 0.0
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            drop = make_dropout_mask(rng, (len(idx), cfg.seq_len, model.model_dim), cfg.dropout)
            loss, grads = compute_gradients(model, X[idx], y[idx], mask[idx], cfg, drop)
            params, state = adamw_step(params, grads, state, cfg)
            model.params = params
            n = mask[idx].sum()
            total += loss * n
            frames += n
        val_loss, bacc, sens, specificity, pos_ratio = _evaluate(model, Xv, yv, mv, cfg)
        stats = EpochStats(epoch, total / frames, val_loss, bacc, sens, specificity, pos_ratio)
        history.append(stats)
        log.info("epoch %d train_loss=%.5f val_loss=%.5f bacc=%.4f", epoch, stats.train_loss, val_loss, bacc)
    return model, history


def predict_lstm(model: LstmModel, vap: FrameStream, llm: FrameStream) -> FrameStream:
    """Per-frame probabilities over stride-``seq_len`` windows, dropout off."""
    feats = _stack(vap, llm)
    if len(feats) == 0:
        return FrameStream(np.zeros(0), vap.frame_rate, "lstm")
    X, _, mask = chunk_sequence(feats, model.seq_len)
    p = _probs(model, X, mask).reshape(-1)[: len(feats)]
    return FrameStream(np.clip(p, 0.0, 1.0), vap.frame_rate, "lstm")


def write_history(history: Sequence[EpochStats], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HISTORY_COLUMNS)
        for h in history:
            writer.writerow([h.epoch] + [f"{getattr(h, c):.8f}" for c in HISTORY_COLUMNS[1:]])
