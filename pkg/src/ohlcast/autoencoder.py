"""Pretraining for the 8-to-4 feature encoder.

A one-hidden-layer autoencoder (dense sigmoid 8->4 encoder, dense sigmoid
4->8 decoder) is fit to reproduce normalized daily feature vectors.  All
features live in (0, 1), so a sigmoid output can represent them exactly.
After pretraining only the encoder half is kept and spliced into the
predictor, where it is fine-tuned with everything else by default.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ohlcast.errors import ConfigError
from ohlcast.nn.layers import Activation, DenseLayer, dense_backward, dense_forward
from ohlcast.nn.optim import AdamState, init_dense, optimizer_step

N_FEATURES = 8
ENCODED_DIM = 4
MIN_VECTORS = 10


def _seed_entropy(seed) -> list[int]:
    return list(seed) if isinstance(seed, (list, tuple)) else [int(seed)]


@dataclass(frozen=True)
class AutoencoderConfig:
    encoded_dim: int = ENCODED_DIM
    epochs: int = 500
    learning_rate: float = 1e-3
    batch_size: int | None = 32          # None trains full-batch
    early_stop_patience: int | None = None
    early_stop_min_delta: float = 0.0

    def __post_init__(self):
        if self.encoded_dim < 1:
            raise ConfigError("encoded_dim must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1 or None")


@dataclass
class AutoencoderParams:
    encoder: DenseLayer
    decoder: DenseLayer


def encode(params: AutoencoderParams, x: np.ndarray) -> np.ndarray:
    return dense_forward(params.encoder, x)


def reconstruct(params: AutoencoderParams, x: np.ndarray) -> np.ndarray:
    return dense_forward(params.decoder, dense_forward(params.encoder, x))


def reconstruction_loss(params: AutoencoderParams, x: np.ndarray) -> float:
    diff = reconstruct(params, x) - x
    return float((diff * diff).mean())


def pretrain(
    features: np.ndarray, seed, config: AutoencoderConfig | None = None
) -> tuple[AutoencoderParams, list[float]]:
    """Fit the autoencoder with full-batch Adam; returns params + loss history.

    Deterministic for a given (features, seed, config).  The loss history
    holds the pre-update reconstruction MSE of each epoch.
    """
    cfg = config if config is not None else AutoencoderConfig()
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != N_FEATURES:
        raise ValueError(f"expected (N, {N_FEATURES}) feature matrix, got {x.shape}")
    if x.shape[0] < MIN_VECTORS:
        raise ValueError(f"pretraining needs at least {MIN_VECTORS} feature vectors")

    rng = np.random.default_rng(seed)
    params = AutoencoderParams(
        encoder=init_dense(cfg.encoded_dim, N_FEATURES, Activation.SIGMOID, rng),
        decoder=init_dense(N_FEATURES, cfg.encoded_dim, Activation.SIGMOID, rng),
    )
    tree = {
        "encoder.weights": params.encoder.weights,
        "encoder.bias": params.encoder.bias,
        "decoder.weights": params.decoder.weights,
        "decoder.bias": params.decoder.bias,
    }
    adam = AdamState(learning_rate=cfg.learning_rate)

    def step(batch: np.ndarray) -> float:
        hidden = dense_forward(params.encoder, batch)
        out = dense_forward(params.decoder, hidden)
        diff = out - batch
        loss = float((diff * diff).mean())
        d_out = 2.0 * diff / diff.size
        dw_d, db_d, d_hidden = dense_backward(params.decoder, hidden, out, d_out)
        dw_e, db_e, _ = dense_backward(params.encoder, batch, hidden, d_hidden)
        optimizer_step(
            adam,
            tree,
            {
                "encoder.weights": dw_e,
                "encoder.bias": db_e,
                "decoder.weights": dw_d,
                "decoder.bias": db_d,
            },
        )
        return loss

    shuffle_rng = np.random.default_rng(_seed_entropy(seed) + [0x5EED])
    history: list[float] = []
    best = np.inf
    stale = 0
    for _ in range(cfg.epochs):
        if cfg.batch_size is None or cfg.batch_size >= len(x):
            loss = step(x)
        else:
            order = shuffle_rng.permutation(len(x))
            loss = 0.0
            for start in range(0, len(order), cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                loss += step(x[idx]) * len(idx)
            loss /= len(x)
        history.append(loss)
        if cfg.early_stop_patience is not None:
            if loss < best - cfg.early_stop_min_delta:
                best = loss
                stale = 0
            else:
                stale += 1
                if stale >= cfg.early_stop_patience:
                    break
    return params, history
