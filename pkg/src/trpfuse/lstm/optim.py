"""AdamW with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamWState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adamw_update(theta, grad, m, v, t, lr=1e-3, weight_decay=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
    """Single-tensor AdamW update for step ``t`` (1-based).

    Returns ``(theta, m, v)``. Decay uses the pre-update ``theta`` and is not
    scaled by the adaptive denominator.
    """
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    theta = theta - lr * m_hat / (np.sqrt(v_hat) + eps) - lr * weight_decay * theta
    return theta, m, v


def adamw_step(params: dict, grads: dict, state: AdamWState, cfg) -> tuple:
    """Apply one AdamW step to every tensor in ``params``.

    ``cfg`` supplies learning_rate, weight_decay, beta1, beta2 and epsilon.
    Returns new ``(params, state)``; inputs are left untouched.
    """
    t = state.t + 1
    new_params, new_m, new_v = {}, {}, {}
    for name, theta in params.items():
        g = grads[name]
        if np.shape(g) != np.shape(theta):
            raise ValueError(f"{name}: grad shape {np.shape(g)} != param shape {np.shape(theta)}")
        m = state.m.get(name, np.zeros_like(theta))
        v = state.v.get(name, np.zeros_like(theta))
        new_params[name], new_m[name], new_v[name] = adamw_update(
            theta, g, m, v, t, cfg.learning_rate, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.epsilon
        )
    return new_params, AdamWState(new_m, new_v, t)
