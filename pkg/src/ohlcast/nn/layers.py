"""Dense and LSTM layers with exact analytic gradients.

Everything runs in float64. Two LSTM code paths exist:

* ``lstm_cell_step`` / ``lstm_sequence_forward`` follow the gate equations
  one term at a time and serve as the readable reference.
* ``lstm_batch_forward`` / ``lstm_batch_backward`` stack the four gate
  matrices into one matmul per time step and carry a full activation cache
  for backpropagation through time.  The model trains on this path.

The two paths agree to float-roundoff and both are checked against finite
differences in the test suite.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import expit

from ohlcast.errors import ConfigError


def sigmoid(x):
    """Numerically stable logistic function."""
    return expit(x)


class Activation(str, Enum):
    SIGMOID = "sigmoid"
    TANH = "tanh"
    IDENTITY = "identity"


def _apply_activation(kind: Activation, z: np.ndarray) -> np.ndarray:
    if kind == Activation.SIGMOID:
        return sigmoid(z)
    if kind == Activation.TANH:
        return np.tanh(z)
    return z


def _activation_grad(kind: Activation, y: np.ndarray) -> np.ndarray:
    # Derivatives expressed through the cached output y, not the pre-activation.
    if kind == Activation.SIGMOID:
        return y * (1.0 - y)
    if kind == Activation.TANH:
        return 1.0 - y * y
    return np.ones_like(y)


@dataclass
class DenseLayer:
    """Fully connected layer ``activation(W x + b)`` with W of shape (out, in)."""

    weights: np.ndarray
    bias: np.ndarray
    activation: Activation = Activation.IDENTITY

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        self.activation = Activation(self.activation)
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ConfigError("dense layer expects a 2-d weight matrix and 1-d bias")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise ConfigError(
                f"dense layer weight rows {self.weights.shape[0]} != bias size {self.bias.shape[0]}"
            )

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    """Apply the layer to ``x`` of shape (in,) or (batch, in)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.in_dim:
        raise ConfigError(f"dense layer expects input size {layer.in_dim}, got {x.shape[-1]}")
    z = x @ layer.weights.T + layer.bias
    return _apply_activation(layer.activation, z)


def dense_backward(layer: DenseLayer, x: np.ndarray, y: np.ndarray, dy: np.ndarray):
    """Gradients of a dense layer given cached input x and output y.

    Accepts (batch, dim) arrays; gradients are summed over the batch.
    Returns (dW, db, dx).
    """
    x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y2 = np.atleast_2d(np.asarray(y, dtype=np.float64))
    dy2 = np.atleast_2d(np.asarray(dy, dtype=np.float64))
    dz = dy2 * _activation_grad(layer.activation, y2)
    dw = dz.T @ x2
    db = dz.sum(axis=0)
    dx = dz @ layer.weights
    if np.asarray(x).ndim == 1:
        dx = dx[0]
    return dw, db, dx


@dataclass
class LstmCellParams:
    """Gate weights for one LSTM cell.

    Each matrix has shape (hidden, hidden + input) and acts on the
    concatenation [h_prev, x]; biases have shape (hidden,).
    """

    w_f: np.ndarray
    w_i: np.ndarray
    w_c: np.ndarray
    w_o: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray

    def __post_init__(self):
        for name in ("w_f", "w_i", "w_c", "w_o", "b_f", "b_i", "b_c", "b_o"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        shape = self.w_f.shape
        if any(getattr(self, n).shape != shape for n in ("w_i", "w_c", "w_o")):
            raise ConfigError("all four gate matrices must share one shape")
        hidden = shape[0]
        if any(getattr(self, n).shape != (hidden,) for n in ("b_f", "b_i", "b_c", "b_o")):
            raise ConfigError("gate biases must have shape (hidden,)")
        if shape[1] <= hidden:
            raise ConfigError("gate matrices must span hidden + input columns")

    @property
    def hidden_size(self) -> int:
        return self.w_f.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_f.shape[1] - self.w_f.shape[0]

    def stacked(self):
        """All gates as one (4*hidden, hidden+input) matrix, order f, i, c, o."""
        w = np.vstack([self.w_f, self.w_i, self.w_c, self.w_o])
        b = np.concatenate([self.b_f, self.b_i, self.b_c, self.b_o])
        return w, b


@dataclass
class LstmState:
    """Hidden and cell state after one step; gate activations kept for backprop."""

    h: np.ndarray
    c: np.ndarray
    f: np.ndarray | None = field(default=None, repr=False)
    i: np.ndarray | None = field(default=None, repr=False)
    c_bar: np.ndarray | None = field(default=None, repr=False)
    o: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def zeros(cls, hidden: int) -> "LstmState":
        return cls(h=np.zeros(hidden), c=np.zeros(hidden))


def lstm_cell_step(params: LstmCellParams, prev: LstmState, x: np.ndarray) -> LstmState:
    """One LSTM step: forget/input/candidate/output gates, then state update."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.input_size,):
        raise ConfigError(f"lstm step expects input shape ({params.input_size},), got {x.shape}")
    if prev.h.shape != (params.hidden_size,) or prev.c.shape != (params.hidden_size,):
        raise ConfigError("previous state does not match the cell's hidden size")
    z = np.concatenate([prev.h, x])
    f = sigmoid(params.w_f @ z + params.b_f)
    i = sigmoid(params.w_i @ z + params.b_i)
    c_bar = np.tanh(params.w_c @ z + params.b_c)
    c = f * prev.c + i * c_bar
    o = sigmoid(params.w_o @ z + params.b_o)
    h = o * np.tanh(c)
    return LstmState(h=h, c=c, f=f, i=i, c_bar=c_bar, o=o)


def lstm_sequence_forward(
    params: LstmCellParams, inputs, init: LstmState | None = None
) -> list[LstmState]:
    """Fold ``lstm_cell_step`` over ``inputs``; returns every intermediate state."""
    inputs = list(inputs)
    if not inputs:
        raise ValueError("lstm_sequence_forward needs a nonempty input sequence")
    state = init if init is not None else LstmState.zeros(params.hidden_size)
    states = []
    for x in inputs:
        state = lstm_cell_step(params, state, x)
        states.append(state)
    return states


def mse_loss(pred, target) -> float:
    """Mean squared error between two equal-length vectors."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss shape mismatch: {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise ValueError("mse_loss needs at least one element")
    d = pred - target
    return float(np.mean(d * d))


@dataclass
class LstmBatchCache:
    """Per-step activations of one LSTM layer over a (T, B, in) sequence."""

    z: np.ndarray        # (T, B, hidden+in) concatenated [h_prev, x]
    f: np.ndarray        # (T, B, hidden)
    i: np.ndarray
    c_bar: np.ndarray
    o: np.ndarray
    c: np.ndarray        # cell state after each step
    tanh_c: np.ndarray
    c0: np.ndarray       # (B, hidden) initial cell state


def lstm_batch_forward(
    params: LstmCellParams,
    seq: np.ndarray,
    h0: np.ndarray | None = None,
    c0: np.ndarray | None = None,
):
    """Run a whole (T, B, in) sequence through one LSTM layer.

    Returns the hidden states (T, B, hidden) and the cache for backprop.
    """
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 3:
        raise ConfigError("lstm_batch_forward expects a (T, B, in) array")
    t_len, batch, in_dim = seq.shape
    if in_dim != params.input_size:
        raise ConfigError(f"sequence feature size {in_dim} != cell input size {params.input_size}")
    hidden = params.hidden_size
    w_all, b_all = params.stacked()

    h = np.zeros((batch, hidden)) if h0 is None else np.asarray(h0, dtype=np.float64)
    c = np.zeros((batch, hidden)) if c0 is None else np.asarray(c0, dtype=np.float64)

    cache = LstmBatchCache(
        z=np.empty((t_len, batch, hidden + in_dim)),
        f=np.empty((t_len, batch, hidden)),
        i=np.empty((t_len, batch, hidden)),
        c_bar=np.empty((t_len, batch, hidden)),
        o=np.empty((t_len, batch, hidden)),
        c=np.empty((t_len, batch, hidden)),
        tanh_c=np.empty((t_len, batch, hidden)),
        c0=c.copy(),
    )
    hs = np.empty((t_len, batch, hidden))
    for t in range(t_len):
        z = np.concatenate([h, seq[t]], axis=1)
        acts = z @ w_all.T + b_all
        f = sigmoid(acts[:, :hidden])
        i = sigmoid(acts[:, hidden : 2 * hidden])
        c_bar = np.tanh(acts[:, 2 * hidden : 3 * hidden])
        o = sigmoid(acts[:, 3 * hidden :])
        c = f * c + i * c_bar
        tanh_c = np.tanh(c)
        h = o * tanh_c
        cache.z[t], cache.f[t], cache.i[t] = z, f, i
        cache.c_bar[t], cache.o[t], cache.c[t], cache.tanh_c[t] = c_bar, o, c, tanh_c
        hs[t] = h
    return hs, cache


def lstm_batch_backward(
    params: LstmCellParams,
    cache: LstmBatchCache,
    d_hs: np.ndarray,
    d_c_last: np.ndarray | None = None,
):
    """Backpropagate through ``lstm_batch_forward``.

    ``d_hs`` holds the loss gradient w.r.t. every emitted hidden state
    (zero rows for steps the loss never touched).  Returns a dict of
    parameter gradients plus the gradient w.r.t. the input sequence.
    """
    hidden = params.hidden_size
    t_len, batch, _ = cache.z.shape
    w_all, _ = params.stacked()

    d_w_all = np.zeros_like(w_all)
    d_b_all = np.zeros(4 * hidden)
    d_seq = np.empty((t_len, batch, params.input_size))
    dh = np.zeros((batch, hidden))
    dc = np.zeros((batch, hidden)) if d_c_last is None else d_c_last.copy()

    d_acts = np.empty((batch, 4 * hidden))
    for t in reversed(range(t_len)):
        dh = dh + d_hs[t]
        f, i, c_bar, o = cache.f[t], cache.i[t], cache.c_bar[t], cache.o[t]
        tanh_c = cache.tanh_c[t]
        c_prev = cache.c[t - 1] if t > 0 else cache.c0

        d_o = dh * tanh_c
        d_c = dc + dh * o * (1.0 - tanh_c * tanh_c)
        d_f = d_c * c_prev
        d_i = d_c * c_bar
        d_cbar = d_c * i

        d_acts[:, :hidden] = d_f * f * (1.0 - f)
        d_acts[:, hidden : 2 * hidden] = d_i * i * (1.0 - i)
        d_acts[:, 2 * hidden : 3 * hidden] = d_cbar * (1.0 - c_bar * c_bar)
        d_acts[:, 3 * hidden :] = d_o * o * (1.0 - o)

        d_w_all += d_acts.T @ cache.z[t]
        d_b_all += d_acts.sum(axis=0)
        dz = d_acts @ w_all
        dh = dz[:, :hidden]
        d_seq[t] = dz[:, hidden:]
        dc = d_c * f

    grads = {
        "w_f": d_w_all[:hidden],
        "w_i": d_w_all[hidden : 2 * hidden],
        "w_c": d_w_all[2 * hidden : 3 * hidden],
        "w_o": d_w_all[3 * hidden :],
        "b_f": d_b_all[:hidden],
        "b_i": d_b_all[hidden : 2 * hidden],
        "b_c": d_b_all[2 * hidden : 3 * hidden],
        "b_o": d_b_all[3 * hidden :],
    }
    return grads, d_seq, dh, dc
