"""Binary focal loss."""

from __future__ import annotations

import numpy as np

EPS = 1e-7


def _prepare(p, y, mask):
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: p{p.shape} vs y{y.shape}")
    m = np.ones_like(p) if mask is None else np.asarray(mask, dtype=np.float64)
    if m.shape != p.shape:
        raise ValueError(f"mask shape {m.shape} does not match {p.shape}")
    return p, y, m


def focal_terms(p, y, gamma=3.0, alpha=0.75):
    """Per-element ``-alpha_t (1 - p_t)^gamma log(p_t)``."""
    p = np.clip(p, EPS, 1.0 - EPS)
    pt = np.where(y > 0.5, p, 1.0 - p)
    at = np.where(y > 0.5, alpha, 1.0 - alpha)
    return -at * (1.0 - pt) ** gamma * np.log(pt)


def focal_loss(p, y, gamma=3.0, alpha=0.75, mask=None) -> float:
    """Mean focal loss over (unmasked) elements."""
    p, y, m = _prepare(p, y, mask)
    count = m.sum()
    if count == 0:
        return 0.0
    return float(np.sum(focal_terms(p, y, gamma, alpha) * m) / count)


def focal_loss_grad_logits(z, y, gamma=3.0, alpha=0.75, mask=None):
    """Mean focal loss of ``sigmoid(z)`` and its gradient w.r.t. ``z``.

    Elements pushed into the probability clamp get zero gradient.
    """
    z = np.asarray(z, dtype=np.float64)
    p = 0.5 * (1.0 + np.tanh(0.5 * z))
    p, y, m = _prepare(p, y, mask)
    count = m.sum()
    if count == 0:
        return 0.0, np.zeros_like(z)
    clipped = (p < EPS) | (p > 1.0 - EPS)
    pc = np.clip(p, EPS, 1.0 - EPS)
    pos = y > 0.5
    pt = np.where(pos, pc, 1.0 - pc)
    at = np.where(pos, alpha, 1.0 - alpha)
    loss = float(np.sum(-at * (1.0 - pt) ** gamma * np.log(pt) * m) / count)
    one_minus = 1.0 - pt
    # d/dpt of -(1-pt)^g log(pt)
    if gamma == 0:
        dpt = -1.0 / pt
    else:
        dpt = gamma * one_minus ** (gamma - 1.0) * np.log(pt) - one_minus**gamma / pt
    dp = at * dpt * np.where(pos, 1.0, -1.0)
    dz = dp * pc * (1.0 - pc)
    dz = np.where(clipped, 0.0, dz) * m / count
    return loss, dz
