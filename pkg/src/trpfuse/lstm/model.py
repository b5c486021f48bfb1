"""BiLSTM -> multi-head attention -> dropout -> per-frame logistic head."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import SchemaError
from .layers import bilstm_backward, bilstm_forward, mha_backward, mha_forward
from .loss import focal_loss_grad_logits

MAGIC = b"LSTMv1"


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 3.0
    alpha: float = 0.75
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    batch_size: int = 32
    seq_len: int = 100
    epochs: int = 20
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    hidden: int = 128
    heads: int = 4
    layers: int = 2
    dropout: float = 0.3
    window_frames: int = 75  # label dilation for per-frame targets
    val_fraction: float = 0.2

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.seq_len < 1 or self.batch_size < 1:
            raise ValueError("seq_len and batch_size must be >= 1")
        if (2 * self.hidden) % self.heads:
            raise ValueError(f"model dim {2 * self.hidden} not divisible by {self.heads} heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


@dataclass
class LstmModel:
    params: dict
    heads: int = 4
    layers: int = 2
    dropout: float = 0.3
    input_dim: int = 2
    seq_len: int = 100

    @property
    def hidden(self) -> int:
        return self.params["lstm0_fwd_U"].shape[0]

    @property
    def model_dim(self) -> int:
        return 2 * self.hidden

    def copy(self) -> "LstmModel":
        return LstmModel({k: v.copy() for k, v in self.params.items()}, self.heads, self.layers, self.dropout, self.input_dim, self.seq_len)


def param_shapes(input_dim=2, hidden=128, layers=2):
    D = 2 * hidden
    shapes = {}
    for layer in range(layers):
        fan = input_dim if layer == 0 else D
        for d in ("fwd", "bwd"):
            shapes[f"lstm{layer}_{d}_W"] = (fan, 4 * hidden)
            shapes[f"lstm{layer}_{d}_U"] = (hidden, 4 * hidden)
            shapes[f"lstm{layer}_{d}_b"] = (4 * hidden,)
    for name in ("q", "k", "v", "o"):
        shapes[f"attn_W{name}"] = (D, D)
        shapes[f"attn_b{name}"] = (D,)
    shapes["head_w"] = (D,)
    shapes["head_b"] = (1,)
    return shapes


def init_model(input_dim=2, hidden=128, heads=4, layers=2, dropout=0.3, seq_len=100, seed=0) -> LstmModel:
    """Uniform(-k, k) init with k = 1/sqrt(fan_in); forget bias +1; zero head."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(input_dim, hidden, layers).items():
        if name.startswith("head"):
            params[name] = np.zeros(shape)
            continue
        if name.startswith("lstm"):
            fan_in = shape[0] if name.endswith("_W") else hidden
        else:
            fan_in = 2 * hidden
        k = 1.0 / np.sqrt(fan_in)
        params[name] = rng.uniform(-k, k, size=shape)
        if name.startswith("lstm") and name.endswith("_b"):
            params[name][hidden : 2 * hidden] += 1.0
    return LstmModel(params, heads, layers, dropout, input_dim, seq_len)


def forward(model: LstmModel, X, mask, dropout_mask=None):
    """Logits ``(B, T)`` plus a cache for :func:`backward`.

    ``dropout_mask`` (already scaled by 1/keep) is applied after attention;
    ``None`` means inference mode.
    """
    X = np.asarray(X, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if X.ndim != 3 or X.shape[2] != model.input_dim:
        raise ValueError(f"expected input (B, T, {model.input_dim}), got {X.shape}")
    p = model.params
    H1, c_lstm = bilstm_forward(X, mask, p, model.layers)
    A, c_attn = mha_forward(H1, mask, p, model.heads)
    Ad = A if dropout_mask is None else A * dropout_mask
    z = Ad @ p["head_w"] + p["head_b"][0]
    if not np.all(np.isfinite(z)):
        raise FloatingPointError("non-finite activations in output head")
    return z, (c_lstm, c_attn, Ad, dropout_mask)


def backward(model: LstmModel, dz, cache):
    c_lstm, c_attn, Ad, dropout_mask = cache
    p = model.params
    grads = {
        "head_w": np.einsum("btd,bt->d", Ad, dz),
        "head_b": np.array([dz.sum()]),
    }
    dA = dz[:, :, None] * p["head_w"]
    if dropout_mask is not None:
        dA = dA * dropout_mask
    dH1, g_attn = mha_backward(dA, c_attn, p)
    _, g_lstm = bilstm_backward(dH1, c_lstm, p, model.layers)
    grads.update(g_attn)
    grads.update(g_lstm)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
    return grads


def compute_gradients(model: LstmModel, X, y, mask, cfg: TrainConfig, dropout_mask=None):
    """Mean focal loss over unmasked frames and exact gradients for every tensor."""
    z, cache = forward(model, X, mask, dropout_mask)
    loss, dz = focal_loss_grad_logits(z, y, cfg.gamma, cfg.alpha, mask)
    return loss, backward(model, dz, cache)


def make_dropout_mask(rng, shape, rate):
    if rate <= 0:
        return None
    keep = 1.0 - rate
    return (rng.random(shape) < keep) / keep


def predict_logits(model: LstmModel, X, mask):
    return forward(model, X, mask)[0]


# ---------------------------------------------------------------------------
# persistence: magic, meta JSON, shape table, then little-endian float64 data
# ---------------------------------------------------------------------------


def save_model(model: LstmModel, path) -> None:
    meta = json.dumps(
        {"heads": model.heads, "layers": model.layers, "dropout": model.dropout,
         "input_dim": model.input_dim, "seq_len": model.seq_len},
        sort_keys=True,
    ).encode()
    names = list(model.params)
    parts = [MAGIC, struct.pack("<I", len(meta)), meta, struct.pack("<I", len(names))]
    for name in names:
        arr = model.params[name]
        enc = name.encode()
        parts.append(struct.pack("<H", len(enc)) + enc + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    for name in names:
        parts.append(np.ascontiguousarray(model.params[name], dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_model(path) -> LstmModel:
    buf = Path(path).read_bytes()
    if not buf.startswith(MAGIC):
        raise SchemaError(f"{path}: not an LSTMv1 model file")
    try:
        pos = len(MAGIC)
        (meta_len,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        meta = json.loads(buf[pos : pos + meta_len])
        pos += meta_len
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        table = []
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos : pos + n].decode()
            pos += n
            (ndim,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
            pos += 8 * ndim
            table.append((name, shape))
        params = {}
        for name, shape in table:
            size = int(np.prod(shape))
            params[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).astype(np.float64).reshape(shape)
            pos += 8 * size
    except (struct.error, ValueError) as exc:
        raise SchemaError(f"{path}: truncated or corrupt model file ({exc})") from None
    if pos != len(buf):
        raise SchemaError(f"{path}: {len(buf) - pos} trailing bytes")
    return LstmModel(params, meta["heads"], meta["layers"], meta["dropout"], meta["input_dim"], meta["seq_len"])
