from ohlcast.nn.layers import (
    Activation,
    DenseLayer,
    LstmCellParams,
    LstmState,
    dense_backward,
    dense_forward,
    lstm_batch_backward,
    lstm_batch_forward,
    lstm_cell_step,
    lstm_sequence_forward,
    mse_loss,
    sigmoid,
)
from ohlcast.nn.optim import AdamState, glorot_init, init_dense, init_lstm_cell, optimizer_step
from ohlcast.nn.gradcheck import finite_difference_gradient

__all__ = [
    "Activation",
    "AdamState",
    "DenseLayer",
    "LstmCellParams",
    "LstmState",
    "dense_backward",
    "dense_forward",
    "finite_difference_gradient",
    "glorot_init",
    "init_dense",
    "init_lstm_cell",
    "lstm_batch_backward",
    "lstm_batch_forward",
    "lstm_cell_step",
    "lstm_sequence_forward",
    "mse_loss",
    "optimizer_step",
    "sigmoid",
]
