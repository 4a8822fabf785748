"""Parameter initialization and the Adam optimizer.

Parameters travel as flat dicts mapping a path like ``"shared.0.w_f"`` to the
underlying float64 array; updates happen in place so the owning dataclasses
see them immediately.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ohlcast.errors import ConfigError
from ohlcast.nn.layers import Activation, DenseLayer, LstmCellParams

ParamTree = dict[str, np.ndarray]


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def glorot_init(shape: tuple[int, int], seed) -> np.ndarray:
    """Uniform init in +-sqrt(6 / (fan_in + fan_out)); deterministic per seed."""
    rows, cols = shape
    if rows <= 0 or cols <= 0:
        raise ValueError(f"glorot_init needs positive dimensions, got {shape}")
    bound = np.sqrt(6.0 / (rows + cols))
    return _as_rng(seed).uniform(-bound, bound, size=shape)


def init_dense(out_dim: int, in_dim: int, activation: Activation, rng) -> DenseLayer:
    return DenseLayer(
        weights=glorot_init((out_dim, in_dim), rng),
        bias=np.zeros(out_dim),
        activation=activation,
    )


def init_lstm_cell(hidden: int, in_dim: int, rng, forget_bias: float = 1.0) -> LstmCellParams:
    # Forget-gate bias starts at 1.0 so early gradients flow through the cell state.
    shape = (hidden, hidden + in_dim)
    return LstmCellParams(
        w_f=glorot_init(shape, rng),
        w_i=glorot_init(shape, rng),
        w_c=glorot_init(shape, rng),
        w_o=glorot_init(shape, rng),
        b_f=np.full(hidden, forget_bias),
        b_i=np.zeros(hidden),
        b_c=np.zeros(hidden),
        b_o=np.zeros(hidden),
    )


@dataclass
class AdamState:
    """Adam with bias correction; moments keyed like the parameter tree."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: ParamTree = field(default_factory=dict)
    v: ParamTree = field(default_factory=dict)


def optimizer_step(state: AdamState, params: ParamTree, grads: ParamTree):
    """One Adam update, in place. Returns (params, state) for convenience."""
    if set(grads) - set(params):
        raise ConfigError("gradient keys do not match parameter keys")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    lr_t = state.learning_rate * np.sqrt(1.0 - b2**t) / (1.0 - b1**t)
    for key, g in grads.items():
        p = params[key]
        if g.shape != p.shape:
            raise ConfigError(f"gradient shape mismatch for {key}: {g.shape} vs {p.shape}")
        m = state.m.setdefault(key, np.zeros_like(p))
        v = state.v.setdefault(key, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr_t * m / (np.sqrt(v) + state.epsilon)
    return params, state
