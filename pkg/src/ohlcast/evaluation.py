"""Forecast scoring, the walk-forward backtest, and hyperparameter sweeps.

Metric conventions (component order open, high, low, close throughout):

* RMSE is the mean over days of the 4-dimensional Euclidean error norm;
* MAE is the mean over days of the summed absolute component errors;
* MAPE is the mean over days of the summed relative component errors,
  reported as a fraction (0.03 means 3%);
* R-squared pools residual and total sums of squares over all components,
  with per-component means as the reference.

The per-component breakdown uses the ordinary single-series definitions
(root mean squared error, mean absolute error, and so on), so the summed
conventions above are recoverable from it except for RMSE, whose norm
does not decompose.
"""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ohlcast.autoencoder import AutoencoderConfig, pretrain
from ohlcast.data import PRICE_FIELDS, OhlcSeries, bar_violations
from ohlcast.errors import DataError
from ohlcast.features import FeatureVector, PipelineConfig, build_features, make_windows
from ohlcast.indicators import (
    IndicatorConfig,
    Recommendation,
    actual_profit,
    build_recommendation,
    recommend_buy_signals,
    recommend_top_profit,
)
from ohlcast.model import (
    HeadOutputs,
    ModelConfig,
    ModelParams,
    PredictedBar,
    TrainResult,
    build_model,
    predict_batch,
    reconstruct_prices,
    train,
)

AE_SEED_TAG = 0xAE


@dataclass(frozen=True)
class MetricsReport:
    n_days: int
    rmse: float
    mae: float
    mape: float
    r2: float
    per_component: dict[str, dict[str, float]]

    def to_dict(self) -> dict:
        return {
            "n_days": self.n_days,
            "rmse": self.rmse,
            "mae": self.mae,
            "mape": self.mape,
            "r2": self.r2,
            "per_component": self.per_component,
        }


def compute_metrics(actual: np.ndarray, predicted: np.ndarray) -> MetricsReport:
    """Score (N, 4) predicted prices against actuals.

    Requires strictly positive actuals (they are prices) and at least two
    days with some variation, otherwise relative error and R-squared are
    undefined.
    """
    actual = np.asarray(actual, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if actual.shape != predicted.shape or actual.ndim != 2 or actual.shape[1] != 4:
        raise ValueError(f"expected matching (N, 4) matrices, got {actual.shape} and {predicted.shape}")
    if actual.shape[0] < 1:
        raise ValueError("need at least one day to score")
    if np.any(actual <= 0.0):
        raise ValueError("actual prices must be strictly positive")

    err = predicted - actual
    rmse = float(np.sqrt((err * err).sum(axis=1)).mean())
    mae = float(np.abs(err).sum(axis=1).mean())
    mape = float((np.abs(err) / actual).sum(axis=1).mean())

    ss_res = float((err * err).sum())
    centered = actual - actual.mean(axis=0)
    ss_tot = float((centered * centered).sum())
    if ss_tot == 0.0:
        raise ValueError("R-squared undefined: actuals have no variation")
    r2 = 1.0 - ss_res / ss_tot

    per_component: dict[str, dict[str, float]] = {}
    for c, name in enumerate(PRICE_FIELDS):
        e = err[:, c]
        a = actual[:, c]
        comp_tot = float(((a - a.mean()) ** 2).sum())
        per_component[name] = {
            "rmse": float(np.sqrt((e * e).mean())),
            "mae": float(np.abs(e).mean()),
            "mape": float((np.abs(e) / a).mean()),
            "r2": (1.0 - float((e * e).sum()) / comp_tot) if comp_tot > 0.0 else float("nan"),
        }
    return MetricsReport(
        n_days=actual.shape[0], rmse=rmse, mae=mae, mape=mape, r2=r2, per_component=per_component
    )


def count_constraint_failures(bars: Sequence) -> int:
    """Days whose bar breaks any OHLC constraint (high above low, positive
    prices, open/close inside the range).  A day with several broken
    constraints still counts once."""
    failures = 0
    for bar in bars:
        if bar_violations(bar.open, bar.high, bar.low, bar.close):
            failures += 1
    return failures


def volatility_profile(series_map: dict[str, OhlcSeries]) -> dict[str, dict[str, float]]:
    """Per-stock price volatility, min-max normalized across the universe.

    For every stock the standard deviation of each price component is
    computed over the series, then each component is rescaled so the
    calmest stock sits at 0 and the most volatile at 1.  ``mean`` averages
    the four normalized components.
    """
    if not series_map:
        raise ValueError("need at least one series")
    symbols = sorted(series_map)
    stds = np.array([series_map[s].price_matrix().std(axis=0) for s in symbols])
    lo = stds.min(axis=0)
    span = stds.max(axis=0) - lo
    profile: dict[str, dict[str, float]] = {}
    for row, symbol in enumerate(symbols):
        normed = [
            float((stds[row, c] - lo[c]) / span[c]) if span[c] > 0.0 else 0.0 for c in range(4)
        ]
        profile[symbol] = dict(zip(PRICE_FIELDS, normed))
        profile[symbol]["mean"] = float(np.mean(normed))
    return profile


def fit_model(
    features: list[FeatureVector],
    config: ModelConfig,
    ae_config: AutoencoderConfig | None = None,
) -> tuple[ModelParams, TrainResult]:
    """Pretrain the encoder if configured, build the model, and train it.

    ``features`` must come from the training split only; windows and the
    autoencoder's corpus are both drawn from it.
    """
    encoder = None
    if config.use_ae:
        mat = np.array([f.as_array() for f in features], dtype=np.float64)
        ae_params, _ = pretrain(mat, seed=[config.seed, AE_SEED_TAG], config=ae_config)
        encoder = ae_params.encoder
    params = build_model(config, encoder=encoder)
    samples = make_windows(features, config.window)
    result = train(params, samples)
    return params, result


def predict_days(
    params: ModelParams,
    features: list[FeatureVector],
    day_indices: Sequence[int],
    pipeline: PipelineConfig | None = None,
) -> list[PredictedBar]:
    """Walk-forward predictions for the given day indices.

    Day ``i`` is predicted from the features of days ``i - window .. i - 1``,
    all of which are actual observed days, then reconstructed to prices.
    """
    cfg = pipeline if pipeline is not None else PipelineConfig()
    window = params.config.window
    mat = np.array([f.as_array() for f in features], dtype=np.float64)
    for i in day_indices:
        if i < window or i >= len(mat):
            raise ValueError(f"day index {i} lacks a full {window}-day history")
    stacked = np.stack([mat[i - window : i] for i in day_indices])
    outputs = predict_batch(params, stacked)
    return [
        reconstruct_prices(HeadOutputs(*(float(v) for v in row)), cfg.clamp_delta)
        for row in outputs
    ]


def oracle_predictions(series_map: dict[str, OhlcSeries], test_len: int) -> dict[str, list[PredictedBar]]:
    """Perfect-foresight predictions: each test day's actual bar, verbatim."""
    out = {}
    for symbol, series in series_map.items():
        bars = series.bars[len(series) - test_len :]
        out[symbol] = [PredictedBar(b.open, b.high, b.low, b.close) for b in bars]
    return out


def model_predictions(
    models: dict[str, ModelParams],
    series_map: dict[str, OhlcSeries],
    test_len: int,
    pipeline: PipelineConfig | None = None,
) -> dict[str, list[PredictedBar]]:
    """Batched walk-forward predictions for every stock's test days."""
    cfg = pipeline if pipeline is not None else PipelineConfig()
    out = {}
    for symbol in sorted(series_map):
        series = series_map[symbol]
        features = build_features(series, cfg)
        indices = range(len(series) - test_len, len(series))
        out[symbol] = predict_days(models[symbol], features, indices, cfg)
    return out


@dataclass
class DayResult:
    date: dt.date
    top: list[Recommendation]
    buys: list[Recommendation]
    top_symbol: str
    realized_profit: float

    def to_dict(self) -> dict:
        return {
            "date": self.date.isoformat(),
            "top": [r.to_dict() for r in self.top],
            "buys": [r.to_dict() for r in self.buys],
            "top_symbol": self.top_symbol,
            "realized_profit": self.realized_profit,
        }


@dataclass
class StockResult:
    symbol: str
    metrics: MetricsReport
    constraint_failures: int

    def to_dict(self) -> dict:
        return {
            "symbol": self.symbol,
            "metrics": self.metrics.to_dict(),
            "constraint_failures": self.constraint_failures,
        }


@dataclass
class BacktestReport:
    test_len: int
    top_k: int
    indicator: IndicatorConfig
    per_stock: dict[str, StockResult]
    daily: list[DayResult]
    cumulative_profit: float
    skipped_days: int
    total_constraint_failures: int
    runtime_seconds: float | None = field(default=None, compare=False)

    def to_dict(self) -> dict:
        """Deterministic report payload; runtime is deliberately left out."""
        return {
            "test_len": self.test_len,
            "top_k": self.top_k,
            "indicator": {
                "lookback": self.indicator.lookback,
                "buy_threshold": self.indicator.buy_threshold,
            },
            "universe": sorted(self.per_stock),
            "per_stock": {s: r.to_dict() for s, r in sorted(self.per_stock.items())},
            "daily": [d.to_dict() for d in self.daily],
            "cumulative_profit": self.cumulative_profit,
            "skipped_days": self.skipped_days,
            "total_constraint_failures": self.total_constraint_failures,
        }


def run_backtest(
    series_map: dict[str, OhlcSeries],
    predictions: dict[str, list[PredictedBar]],
    test_len: int,
    indicator: IndicatorConfig | None = None,
    top_k: int = 1,
) -> BacktestReport:
    """Score predictions and replay the daily recommendation loop.

    Every test day each stock contributes a recommendation; the best
    ``top_k`` by predicted profit are kept and the top pick's trade is
    scored with the actual prices.  Days early enough that the %R window
    or the previous-day low is unavailable are skipped (and counted); with
    a realistic history there are none.
    """
    ind = indicator if indicator is not None else IndicatorConfig()
    if not series_map:
        raise ValueError("need at least one series")
    symbols = sorted(series_map)
    if set(predictions) != set(symbols):
        raise ValueError("predictions must cover exactly the backtest universe")

    first = series_map[symbols[0]]
    if any(len(series_map[s]) != len(first) for s in symbols):
        raise DataError("all series must cover the same trading days")
    n = len(first)
    if not 1 <= test_len < n:
        raise ValueError(f"test_len must lie in [1, {n - 1}]")
    test_dates = [b.date for b in first.bars[n - test_len :]]
    for s in symbols[1:]:
        if [b.date for b in series_map[s].bars[n - test_len :]] != test_dates:
            raise DataError("test-period dates differ between stocks")
    for s in symbols:
        if len(predictions[s]) != test_len:
            raise ValueError(f"predictions for {s} must cover all {test_len} test days")

    highs = {s: [b.high for b in series_map[s].bars] for s in symbols}
    lows = {s: [b.low for b in series_map[s].bars] for s in symbols}

    per_stock = {}
    for s in symbols:
        actual = series_map[s].price_matrix()[n - test_len :]
        predicted = np.array([p.prices() for p in predictions[s]])
        per_stock[s] = StockResult(
            symbol=s,
            metrics=compute_metrics(actual, predicted),
            constraint_failures=count_constraint_failures(predictions[s]),
        )

    warmup = max(ind.lookback - 1, 1)
    daily: list[DayResult] = []
    skipped = 0
    cumulative = 0.0
    for j, date in enumerate(test_dates):
        i = n - test_len + j
        if i < warmup:
            skipped += 1
            continue
        candidates = [
            build_recommendation(
                symbol=s,
                date=date,
                predicted=predictions[s][j],
                prev_low=lows[s][i - 1],
                prior_highs=highs[s][i - ind.lookback + 1 : i],
                prior_lows=lows[s][i - ind.lookback + 1 : i],
                config=ind,
            )
            for s in symbols
        ]
        top = recommend_top_profit(candidates, k=top_k)
        pick = top[0]
        realized = actual_profit(highs[pick.symbol][i], lows[pick.symbol][i - 1])
        cumulative += realized
        daily.append(
            DayResult(
                date=date,
                top=top,
                buys=recommend_buy_signals(candidates),
                top_symbol=pick.symbol,
                realized_profit=realized,
            )
        )

    return BacktestReport(
        test_len=test_len,
        top_k=top_k,
        indicator=ind,
        per_stock=per_stock,
        daily=daily,
        cumulative_profit=cumulative,
        skipped_days=skipped,
        total_constraint_failures=sum(r.constraint_failures for r in per_stock.values()),
    )


SWEEPABLE = ("window", "shared_layers", "task_layers")


@dataclass
class SweepPoint:
    value: int
    metrics: MetricsReport

    def to_dict(self) -> dict:
        return {"value": self.value, "metrics": self.metrics.to_dict()}


@dataclass
class SweepResult:
    parameter: str
    points: list[SweepPoint]
    best_value: int

    def to_dict(self) -> dict:
        return {
            "parameter": self.parameter,
            "points": [p.to_dict() for p in self.points],
            "best_value": self.best_value,
        }


def sweep(
    series: OhlcSeries,
    base_config: ModelConfig,
    parameter: str,
    values: Sequence[int],
    test_len: int,
    pipeline: PipelineConfig | None = None,
    ae_config: AutoencoderConfig | None = None,
    val_frac: float = 0.1,
) -> SweepResult:
    """Grid-search one structural parameter against a validation slice.

    The last ``val_frac`` of the training period (everything before the
    final ``test_len`` days) is held out; each candidate value trains on
    the rest and is scored walk-forward on that slice by RMSE.  Ties keep
    the smaller value.
    """
    if parameter not in SWEEPABLE:
        raise ValueError(f"parameter must be one of {SWEEPABLE}")
    if not values:
        raise ValueError("need at least one candidate value")
    cfg = pipeline if pipeline is not None else PipelineConfig()
    n = len(series)
    train_len = n - test_len
    val_len = max(1, int(round(train_len * val_frac)))
    fit_len = train_len - val_len
    features = build_features(series, cfg)
    actual_val = series.price_matrix()[fit_len:train_len]
    val_indices = range(fit_len, train_len)

    points = []
    for value in values:
        model_cfg = ModelConfig(**{**_config_dict(base_config), parameter: value})
        if fit_len <= model_cfg.window:
            raise ValueError(f"not enough training days for window={model_cfg.window}")
        params, _ = fit_model(features[:fit_len], model_cfg, ae_config)
        predicted = predict_days(params, features, val_indices, cfg)
        metrics = compute_metrics(actual_val, np.array([p.prices() for p in predicted]))
        points.append(SweepPoint(value=value, metrics=metrics))

    best = min(points, key=lambda p: (p.metrics.rmse, p.value))
    return SweepResult(parameter=parameter, points=points, best_value=best.value)


def _config_dict(config: ModelConfig) -> dict:
    return {
        "use_ae": config.use_ae,
        "multi_task": config.multi_task,
        "shared_layers": config.shared_layers,
        "task_layers": config.task_layers,
        "shared_hidden": config.shared_hidden,
        "head_hidden": config.head_hidden,
        "window": config.window,
        "seed": config.seed,
        "train": config.train,
    }
