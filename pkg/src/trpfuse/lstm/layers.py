"""Forward and backward passes for the recurrent and attention layers.

Arrays are batch-major: sequences are ``(B, T, D)`` and masks ``(B, T)`` with
1 for real frames and 0 for padding. Gate order everywhere is i, f, g, o.
"""

from __future__ import annotations

import numpy as np


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_cell_forward(x, h, c, W, U, b):
    """One LSTM step. ``W``: (in, 4H), ``U``: (H, 4H), ``b``: (4H,)."""
    x, h, c = np.asarray(x, float), np.asarray(h, float), np.asarray(c, float)
    H = U.shape[0]
    if W.shape != (x.shape[-1], 4 * H) or U.shape != (H, 4 * H) or b.shape != (4 * H,):
        raise ValueError(f"shape mismatch: x{x.shape} W{W.shape} U{U.shape} b{b.shape}")
    if h.shape[-1] != H or c.shape[-1] != H:
        raise ValueError(f"state size {h.shape[-1]}/{c.shape[-1]} does not match hidden {H}")
    a = x @ W + h @ U + b
    i, f, o = sigmoid(a[..., :H]), sigmoid(a[..., H : 2 * H]), sigmoid(a[..., 3 * H :])
    g = np.tanh(a[..., 2 * H : 3 * H])
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


def lstm_direction_forward(X, mask, W, U, b):
    """Run one direction left to right.

    On padded frames the state is carried through unchanged, so a reversed
    pass over a right-padded chunk starts from zeros at the last real frame.
    """
    B, T, _ = X.shape
    H = U.shape[0]
    xw = X @ W + b
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    out = np.empty((B, T, H))
    cache = {"X": X, "mask": mask, "h_prev": [], "c_prev": [], "gates": [], "tc": []}
    for t in range(T):
        a = xw[:, t] + h @ U
        i, f, o = sigmoid(a[:, :H]), sigmoid(a[:, H : 2 * H]), sigmoid(a[:, 3 * H :])
        g = np.tanh(a[:, 2 * H : 3 * H])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        m = mask[:, t, None]
        cache["h_prev"].append(h)
        cache["c_prev"].append(c)
        cache["gates"].append((i, f, g, o))
        cache["tc"].append(tc)
        h = m * h_new + (1.0 - m) * h
        c = m * c_new + (1.0 - m) * c
        out[:, t] = h
    return out, cache


def lstm_direction_backward(dout, cache, W, U):
    X, mask = cache["X"], cache["mask"]
    B, T, _ = X.shape
    H = U.shape[0]
    dxw = np.empty((B, T, 4 * H))
    dU = np.zeros_like(U)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in reversed(range(T)):
        m = mask[:, t, None]
        i, f, g, o = cache["gates"][t]
        tc = cache["tc"][t]
        dh = dout[:, t] + dh_next
        dh_new, dc_new = m * dh, m * dc_next
        do = dh_new * tc
        dc_new = dc_new + dh_new * o * (1.0 - tc * tc)
        da = np.concatenate(
            (
                dc_new * g * i * (1.0 - i),
                dc_new * cache["c_prev"][t] * f * (1.0 - f),
                dc_new * i * (1.0 - g * g),
                do * o * (1.0 - o),
            ),
            axis=1,
        )
        dxw[:, t] = da
        dU += cache["h_prev"][t].T @ da
        dh_next = da @ U.T + (1.0 - m) * dh
        dc_next = dc_new * f + (1.0 - m) * dc_next
    flat = dxw.reshape(B * T, 4 * H)
    dW = X.reshape(B * T, -1).T @ flat
    db = flat.sum(axis=0)
    dX = dxw @ W.T
    return dX, dW, dU, db


def _reverse_valid(X, lengths):
    """Reverse each sequence within its valid prefix, keeping padding at the end."""
    out = X.copy()
    for k, n in enumerate(lengths):
        out[k, :n] = X[k, :n][::-1]
    return out


def bilstm_forward(X, mask, params, n_layers=2):
    """Stacked bidirectional LSTM; each layer emits ``concat(fwd, bwd)``."""
    if X.shape[1] < 1:
        raise ValueError("empty sequence")
    lengths = mask.sum(axis=1).astype(int)
    caches = []
    inp = X
    for layer in range(n_layers):
        Wf, Uf, bf = params[f"lstm{layer}_fwd_W"], params[f"lstm{layer}_fwd_U"], params[f"lstm{layer}_fwd_b"]
        Wb, Ub, bb = params[f"lstm{layer}_bwd_W"], params[f"lstm{layer}_bwd_U"], params[f"lstm{layer}_bwd_b"]
        out_f, cache_f = lstm_direction_forward(inp, mask, Wf, Uf, bf)
        out_b_rev, cache_b = lstm_direction_forward(_reverse_valid(inp, lengths), mask, Wb, Ub, bb)
        out = np.concatenate((out_f, _reverse_valid(out_b_rev, lengths)), axis=2)
        if not np.all(np.isfinite(out)):
            raise FloatingPointError(f"non-finite activations in BiLSTM layer {layer}")
        caches.append((cache_f, cache_b))
        inp = out
    return inp, (caches, lengths)


def bilstm_backward(dout, cache, params, n_layers=2):
    caches, lengths = cache
    grads = {}
    d = dout
    for layer in reversed(range(n_layers)):
        cache_f, cache_b = caches[layer]
        H = params[f"lstm{layer}_fwd_U"].shape[0]
        dX_f, *g_f = lstm_direction_backward(d[:, :, :H], cache_f, params[f"lstm{layer}_fwd_W"], params[f"lstm{layer}_fwd_U"])
        dX_b_rev, *g_b = lstm_direction_backward(
            _reverse_valid(d[:, :, H:], lengths), cache_b, params[f"lstm{layer}_bwd_W"], params[f"lstm{layer}_bwd_U"]
        )
        for name, g in zip(("W", "U", "b"), g_f):
            grads[f"lstm{layer}_fwd_{name}"] = g
        for name, g in zip(("W", "U", "b"), g_b):
            grads[f"lstm{layer}_bwd_{name}"] = g
        d = dX_f + _reverse_valid(dX_b_rev, lengths)
    return d, grads


def _split_heads(X, heads):
    B, T, D = X.shape
    return X.reshape(B, T, heads, D // heads).transpose(0, 2, 1, 3)


def _merge_heads(X):
    B, h, T, dk = X.shape
    return X.transpose(0, 2, 1, 3).reshape(B, T, h * dk)


def softmax(S, axis=-1):
    S = S - np.max(S, axis=axis, keepdims=True)
    E = np.exp(S)
    return E / E.sum(axis=axis, keepdims=True)


def mha_forward(X, mask, params, heads):
    """Non-causal multi-head self-attention; padded frames are masked as keys."""
    B, T, D = X.shape
    if D % heads:
        raise ValueError(f"model dim {D} not divisible by {heads} heads")
    if params["attn_Wq"].shape != (D, D):
        raise ValueError(f"attention expects dim {params['attn_Wq'].shape[0]}, got {D}")
    dk = D // heads
    Q = _split_heads(X @ params["attn_Wq"] + params["attn_bq"], heads)
    K = _split_heads(X @ params["attn_Wk"] + params["attn_bk"], heads)
    V = _split_heads(X @ params["attn_Wv"] + params["attn_bv"], heads)
    S = Q @ K.transpose(0, 1, 3, 2) / np.sqrt(dk)
    S = np.where(mask[:, None, None, :] > 0, S, -np.inf)
    A = softmax(S)
    C = _merge_heads(A @ V)
    Y = C @ params["attn_Wo"] + params["attn_bo"]
    if not np.all(np.isfinite(Y)):
        raise FloatingPointError("non-finite activations in attention layer")
    return Y, (X, Q, K, V, A, C, heads)


def mha_backward(dY, cache, params):
    X, Q, K, V, A, C, heads = cache
    B, T, D = X.shape
    dk = D // heads
    grads = {
        "attn_Wo": C.reshape(-1, D).T @ dY.reshape(-1, D),
        "attn_bo": dY.sum(axis=(0, 1)),
    }
    dC = _split_heads(dY @ params["attn_Wo"].T, heads)
    dA = dC @ V.transpose(0, 1, 3, 2)
    dV = A.transpose(0, 1, 3, 2) @ dC
    dS = A * (dA - np.sum(dA * A, axis=-1, keepdims=True)) / np.sqrt(dk)
    dQ = _merge_heads(dS @ K)
    dK = _merge_heads(dS.transpose(0, 1, 3, 2) @ Q)
    dV = _merge_heads(dV)
    Xf = X.reshape(-1, D)
    dX = np.zeros_like(X)
    for name, dP in (("q", dQ), ("k", dK), ("v", dV)):
        grads[f"attn_W{name}"] = Xf.T @ dP.reshape(-1, D)
        grads[f"attn_b{name}"] = dP.sum(axis=(0, 1))
        dX += dP @ params[f"attn_W{name}"].T
    return dX, grads
