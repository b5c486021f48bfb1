"""BiLSTM + attention fusion model written directly against numpy."""

from .layers import bilstm_forward, lstm_cell_forward, mha_forward
from .loss import focal_loss
from .model import LstmModel, TrainConfig, compute_gradients, init_model, load_model, save_model
from .optim import AdamWState, adamw_step, adamw_update
from .train import predict_lstm, train_lstm, write_history

__all__ = [
    "AdamWState",
    "LstmModel",
    "TrainConfig",
    "adamw_step",
    "adamw_update",
    "bilstm_forward",
    "compute_gradients",
    "focal_loss",
    "init_model",
    "load_model",
    "lstm_cell_forward",
    "mha_forward",
    "predict_lstm",
    "save_model",
    "train_lstm",
    "write_history",
]
