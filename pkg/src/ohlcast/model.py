"""The windowed multi-task predictor and its price reconstruction.

Architecture, front to back: an optional pretrained encoder squeezes each
day's 8 features to 4, a stack of shared LSTM layers digests the window,
and the last time step's hidden state feeds the task branches (one LSTM
step plus a sigmoid dense output per predicted variable).  Multi-task
models run four single-output branches; single-task models run one
four-output branch.

Four variants cover the ablation grid:

===========  =======  ==========
variant      encoder  multi-task
===========  =======  ==========
``ae-mtl``   yes      yes   (the proposed model)
``mtl``      no       yes
``ae-lstm``  yes      no
``lstm``     no       no
===========  =======  ==========

``reconstruct_prices`` turns the four sigmoid outputs back into prices in
a way that satisfies every OHLC constraint unconditionally: the low comes
from inverting its range feature (clamped so the logit stays positive),
the high is ``low / (1 - rel_high)`` which always clears the low, and
open/close are placed inside [low, high] by their relative positions.
"""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ohlcast.errors import ConfigError
from ohlcast.features import TARGET_NAMES, WindowedSample, denorm_range, stack_windows
from ohlcast.nn.layers import (
    Activation,
    DenseLayer,
    LstmBatchCache,
    LstmCellParams,
    dense_backward,
    dense_forward,
    lstm_batch_backward,
    lstm_batch_forward,
)
from ohlcast.nn.optim import AdamState, ParamTree, init_dense, init_lstm_cell, optimizer_step

N_FEATURES = 8
N_TARGETS = 4
ENCODED_DIM = 4

# (use_ae, multi_task) per variant name.
VARIANTS = {
    "ae-mtl": (True, True),
    "mtl": (False, True),
    "ae-lstm": (True, False),
    "lstm": (False, False),
}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int | None = None          # None trains full-batch
    freeze_encoder: bool = False
    early_stop_patience: int | None = None  # epochs without improvement before stopping
    early_stop_min_delta: float = 0.0


@dataclass(frozen=True)
class ModelConfig:
    use_ae: bool = True
    multi_task: bool = True
    shared_layers: int = 2
    task_layers: int = 1
    shared_hidden: int = 32
    head_hidden: int = 16
    window: int = 20
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.shared_layers < 0 or self.task_layers < 0:
            raise ConfigError("layer counts must be >= 0")
        if self.shared_hidden < 1 or self.head_hidden < 1 or self.window < 1:
            raise ConfigError("hidden sizes and window must be >= 1")

    @property
    def variant(self) -> str:
        for name, flags in VARIANTS.items():
            if flags == (self.use_ae, self.multi_task):
                return name
        raise AssertionError("unreachable")


def config_for_variant(name: str, **overrides) -> ModelConfig:
    if name not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}")
    use_ae, multi_task = VARIANTS[name]
    return ModelConfig(use_ae=use_ae, multi_task=multi_task, **overrides)


@dataclass
class TaskHead:
    lstm: list[LstmCellParams]
    out: DenseLayer


@dataclass
class ModelParams:
    config: ModelConfig
    encoder: DenseLayer | None
    shared: list[LstmCellParams]
    heads: list[TaskHead]

    @property
    def n_heads(self) -> int:
        return len(self.heads)


def build_model(config: ModelConfig, encoder: DenseLayer | None = None) -> ModelParams:
    """Instantiate all weights for the configured variant.

    With ``use_ae`` the pretrained encoder is required; its weights are
    copied in and fine-tuned with the rest unless training freezes them.
    """
    rng = np.random.default_rng(config.seed)
    if config.use_ae:
        if encoder is None:
            raise ConfigError("use_ae=True requires a pretrained encoder")
        if encoder.in_dim != N_FEATURES:
            raise ConfigError(f"encoder must consume {N_FEATURES} features")
        enc = DenseLayer(
            weights=encoder.weights.copy(),
            bias=encoder.bias.copy(),
            activation=encoder.activation,
        )
        stack_in = enc.out_dim
    else:
        enc = None
        stack_in = N_FEATURES

    shared = []
    dim = stack_in
    for _ in range(config.shared_layers):
        shared.append(init_lstm_cell(config.shared_hidden, dim, rng))
        dim = config.shared_hidden
    shared_out = dim

    n_heads = N_TARGETS if config.multi_task else 1
    out_dim = 1 if config.multi_task else N_TARGETS
    heads = []
    for _ in range(n_heads):
        branch = []
        dim = shared_out
        for _ in range(config.task_layers):
            branch.append(init_lstm_cell(config.head_hidden, dim, rng))
            dim = config.head_hidden
        heads.append(TaskHead(lstm=branch, out=init_dense(out_dim, dim, Activation.SIGMOID, rng)))
    return ModelParams(config=config, encoder=enc, shared=shared, heads=heads)


LSTM_FIELDS = ("w_f", "w_i", "w_c", "w_o", "b_f", "b_i", "b_c", "b_o")


def param_tree(params: ModelParams) -> ParamTree:
    """Flat path -> array view of every learnable tensor (shared references)."""
    tree: ParamTree = {}
    if params.encoder is not None:
        tree["encoder.weights"] = params.encoder.weights
        tree["encoder.bias"] = params.encoder.bias
    for j, cell in enumerate(params.shared):
        for name in LSTM_FIELDS:
            tree[f"shared.{j}.{name}"] = getattr(cell, name)
    for k, head in enumerate(params.heads):
        for j, cell in enumerate(head.lstm):
            for name in LSTM_FIELDS:
                tree[f"heads.{k}.lstm.{j}.{name}"] = getattr(cell, name)
        tree[f"heads.{k}.out.weights"] = head.out.weights
        tree[f"heads.{k}.out.bias"] = head.out.bias
    return tree


def count_params(params: ModelParams) -> int:
    return sum(arr.size for arr in param_tree(params).values())


@dataclass
class ForwardCache:
    enc_in: np.ndarray | None
    enc_out: np.ndarray | None
    seq0: np.ndarray                      # (W, B, stack_in) fed to the shared stack
    shared_caches: list[LstmBatchCache]
    shared_last: np.ndarray               # (B, shared_out) handed to the heads
    head_caches: list[list[LstmBatchCache]]
    head_dense_in: list[np.ndarray]
    head_out: list[np.ndarray]
    outputs: np.ndarray                   # (B, 4)


def forward_batch(params: ModelParams, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Run (B, W, 8) windows through the model; returns (B, 4) outputs + cache."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != N_FEATURES:
        raise ConfigError(f"expected (B, W, {N_FEATURES}) windows, got {x.shape}")
    if x.shape[1] != params.config.window:
        raise ConfigError(f"window length {x.shape[1]} != configured {params.config.window}")
    batch, window, _ = x.shape

    if params.encoder is not None:
        enc_in = x.reshape(batch * window, N_FEATURES)
        enc_out = dense_forward(params.encoder, enc_in)
        seq0 = enc_out.reshape(batch, window, -1).transpose(1, 0, 2)
    else:
        enc_in = enc_out = None
        seq0 = x.transpose(1, 0, 2)

    seq = seq0
    shared_caches = []
    for cell in params.shared:
        seq, cache = lstm_batch_forward(cell, seq)
        shared_caches.append(cache)
    shared_last = seq[-1]

    head_caches: list[list[LstmBatchCache]] = []
    head_dense_in: list[np.ndarray] = []
    head_out: list[np.ndarray] = []
    for head in params.heads:
        v = shared_last
        caches = []
        for cell in head.lstm:
            hs, cache = lstm_batch_forward(cell, v[None, :, :])
            caches.append(cache)
            v = hs[0]
        y = dense_forward(head.out, v)
        head_caches.append(caches)
        head_dense_in.append(v)
        head_out.append(y)
    outputs = np.concatenate(head_out, axis=1)
    return outputs, ForwardCache(
        enc_in=enc_in,
        enc_out=enc_out,
        seq0=seq0,
        shared_caches=shared_caches,
        shared_last=shared_last,
        head_caches=head_caches,
        head_dense_in=head_dense_in,
        head_out=head_out,
        outputs=outputs,
    )


def backward_batch(params: ModelParams, cache: ForwardCache, d_out: np.ndarray) -> ParamTree:
    """Exact gradients of ``sum(d_out * outputs)``-style upstream signal."""
    grads: ParamTree = {}
    d_shared_last = np.zeros_like(cache.shared_last)

    col = 0
    for k, head in enumerate(params.heads):
        width = head.out.out_dim
        d_y = d_out[:, col : col + width]
        col += width
        dw, db, dv = dense_backward(head.out, cache.head_dense_in[k], cache.head_out[k], d_y)
        grads[f"heads.{k}.out.weights"] = dw
        grads[f"heads.{k}.out.bias"] = db
        for j in reversed(range(len(head.lstm))):
            cell_grads, d_seq, _, _ = lstm_batch_backward(
                head.lstm[j], cache.head_caches[k][j], dv[None, :, :]
            )
            for name in LSTM_FIELDS:
                grads[f"heads.{k}.lstm.{j}.{name}"] = cell_grads[name]
            dv = d_seq[0]
        d_shared_last += dv

    d_seq = np.zeros((cache.seq0.shape[0],) + cache.shared_last.shape)
    d_seq[-1] = d_shared_last
    for j in reversed(range(len(params.shared))):
        cell_grads, d_seq, _, _ = lstm_batch_backward(params.shared[j], cache.shared_caches[j], d_seq)
        for name in LSTM_FIELDS:
            grads[f"shared.{j}.{name}"] = cell_grads[name]

    if params.encoder is not None:
        window, batch, enc_dim = d_seq.shape
        d_enc_out = d_seq.transpose(1, 0, 2).reshape(batch * window, enc_dim)
        dw, db, _ = dense_backward(params.encoder, cache.enc_in, cache.enc_out, d_enc_out)
        grads["encoder.weights"] = dw
        grads["encoder.bias"] = db
    return grads


def batch_loss(outputs: np.ndarray, targets: np.ndarray, multi_task: bool):
    """Training loss and its gradient w.r.t. the outputs.

    Multi-task: sum over the four heads of each head's MSE across the batch.
    Single-task: one MSE over all four output components jointly.
    """
    targets = np.asarray(targets, dtype=np.float64)
    diff = outputs - targets
    batch = outputs.shape[0]
    if multi_task:
        loss = float((diff * diff).mean(axis=0).sum())
        d_out = 2.0 * diff / batch
    else:
        loss = float((diff * diff).mean())
        d_out = 2.0 * diff / diff.size
    return loss, d_out


def compute_gradients(params: ModelParams, x: np.ndarray, y: np.ndarray):
    """Loss and exact analytic gradients for one batch of windows."""
    outputs, cache = forward_batch(params, x)
    loss, d_out = batch_loss(outputs, y, params.config.multi_task)
    return loss, backward_batch(params, cache, d_out)


@dataclass
class TrainResult:
    loss_history: list[float]
    stopped_early: bool = False
    optimizer: "AdamState | None" = None

    @property
    def initial_loss(self) -> float:
        return self.loss_history[0]

    @property
    def final_loss(self) -> float:
        return self.loss_history[-1]


def train(
    params: ModelParams,
    samples: list[WindowedSample],
    train_config: TrainConfig | None = None,
    optimizer: AdamState | None = None,
) -> TrainResult:
    """Adam-train in place; one loss entry per epoch (measured pre-update)."""
    cfg = train_config if train_config is not None else params.config.train
    if not samples:
        raise ValueError("training needs at least one windowed sample")
    x, y = stack_windows(samples)
    tree = param_tree(params)
    if optimizer is None:
        optimizer = AdamState(
            learning_rate=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.epsilon
        )
    rng = np.random.default_rng([params.config.seed, 0x5EED])

    history: list[float] = []
    best = np.inf
    stale = 0
    stopped = False
    for _ in range(cfg.epochs):
        if cfg.batch_size is None or cfg.batch_size >= len(samples):
            loss, grads = compute_gradients(params, x, y)
            if cfg.freeze_encoder:
                grads = {k: g for k, g in grads.items() if not k.startswith("encoder.")}
            optimizer_step(optimizer, tree, grads)
        else:
            order = rng.permutation(len(samples))
            loss = 0.0
            for start in range(0, len(order), cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                b_loss, b_grads = compute_gradients(params, x[idx], y[idx])
                loss += b_loss * len(idx)
                if cfg.freeze_encoder:
                    b_grads = {k: g for k, g in b_grads.items() if not k.startswith("encoder.")}
                optimizer_step(optimizer, tree, b_grads)
            loss /= len(samples)
        history.append(loss)
        if cfg.early_stop_patience is not None:
            if loss < best - cfg.early_stop_min_delta:
                best = loss
                stale = 0
            else:
                stale += 1
                if stale >= cfg.early_stop_patience:
                    stopped = True
                    break
    return TrainResult(loss_history=history, stopped_early=stopped, optimizer=optimizer)


@dataclass(frozen=True)
class HeadOutputs:
    """The four sigmoid outputs, each strictly inside (0, 1)."""

    range_low: float
    rel_open: float
    rel_high: float
    rel_close: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in TARGET_NAMES], dtype=np.float64)


def predict_next(params: ModelParams, window: np.ndarray) -> HeadOutputs:
    """Predict the next day's target tuple from a (W, 8) feature window."""
    window = np.asarray(window, dtype=np.float64)
    if window.shape != (params.config.window, N_FEATURES):
        raise ValueError(
            f"expected window shape ({params.config.window}, {N_FEATURES}), got {window.shape}"
        )
    outputs, _ = forward_batch(params, window[None, :, :])
    return HeadOutputs(*(float(v) for v in outputs[0]))


def predict_batch(params: ModelParams, windows: np.ndarray) -> np.ndarray:
    """(B, 4) raw head outputs for many windows at once."""
    outputs, _ = forward_batch(params, windows)
    return outputs


@dataclass(frozen=True)
class PredictedBar:
    """A reconstructed next-day bar; satisfies all OHLC constraints."""

    open: float
    high: float
    low: float
    close: float

    def prices(self) -> tuple[float, float, float, float]:
        return (self.open, self.high, self.low, self.close)


def reconstruct_prices(h: HeadOutputs, clamp_delta: float = 1e-6) -> PredictedBar:
    """Prices from head outputs; the result passes every constraint by construction."""
    d = clamp_delta
    y_low = min(max(h.range_low, 0.5 + d), 1.0 - d)   # logit > 0 keeps the low positive
    y_high = min(max(h.rel_high, d), 1.0 - d)
    y_open = min(max(h.rel_open, 0.0), 1.0)
    y_close = min(max(h.rel_close, 0.0), 1.0)

    low = denorm_range(y_low, clamp_delta=d)
    high = low / (1.0 - y_high)
    spread = high - low
    # Clip guards the <=1-ulp float drift of the affine placement.
    open_ = min(max(y_open * spread + low, low), high)
    close = min(max(y_close * spread + low, low), high)
    return PredictedBar(open=open_, high=high, low=low, close=close)


MODEL_FORMAT = "ohlcast-model/1"


def save_model(params: ModelParams, path, optimizer: AdamState | None = None) -> None:
    """Write a deterministic JSON snapshot (config, weights, optimizer state)."""
    doc = {
        "format": MODEL_FORMAT,
        "config": asdict(params.config),
        "arrays": {
            key: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            for key, arr in param_tree(params).items()
        },
    }
    if optimizer is not None:
        doc["optimizer"] = {
            "learning_rate": optimizer.learning_rate,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "epsilon": optimizer.epsilon,
            "step": optimizer.step,
            "m": {k: v.ravel().tolist() for k, v in sorted(optimizer.m.items())},
            "v": {k: v.ravel().tolist() for k, v in sorted(optimizer.v.items())},
        }
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def load_model(path) -> tuple[ModelParams, AdamState | None]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != MODEL_FORMAT:
        raise ConfigError(f"unsupported model file format {doc.get('format')!r}")
    cfg_d = dict(doc["config"])
    cfg_d["train"] = TrainConfig(**cfg_d["train"])
    config = ModelConfig(**cfg_d)

    # Rebuild the skeleton with a throwaway encoder, then overwrite every array.
    skeleton_encoder = None
    if config.use_ae:
        skeleton_encoder = DenseLayer(
            weights=np.zeros((ENCODED_DIM, N_FEATURES)),
            bias=np.zeros(ENCODED_DIM),
            activation=Activation.SIGMOID,
        )
    params = build_model(config, encoder=skeleton_encoder)
    tree = param_tree(params)
    stored = doc["arrays"]
    if set(stored) != set(tree):
        raise ConfigError("model file arrays do not match the configured architecture")
    for key, arr in tree.items():
        entry = stored[key]
        data = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        if data.shape != arr.shape:
            raise ConfigError(f"shape mismatch for {key}: file {data.shape}, expected {arr.shape}")
        arr[...] = data

    optimizer = None
    if "optimizer" in doc:
        o = doc["optimizer"]
        optimizer = AdamState(
            learning_rate=o["learning_rate"],
            beta1=o["beta1"],
            beta2=o["beta2"],
            epsilon=o["epsilon"],
            step=o["step"],
            m={k: np.array(v).reshape(tree[k].shape) for k, v in o["m"].items()},
            v={k: np.array(v).reshape(tree[k].shape) for k, v in o["v"].items()},
        )
    return params, optimizer


def clone_params(params: ModelParams) -> ModelParams:
    """Deep copy, e.g. for before/after comparisons in tests."""
    return copy.deepcopy(params)
