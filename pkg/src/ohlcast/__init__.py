"""ohlcast: next-day OHLC forecasting and trade recommendation toolkit.

The pipeline, end to end: ingest or synthesize daily OHLC bars, normalize
them into eight window-free features per day, train a multi-task LSTM
(optionally fronted by a pretrained autoencoder's encoder) to predict the
next day's four target values, reconstruct prices that provably satisfy
the OHLC ordering constraints, and turn predictions into profit-ranked
and Williams-%R-filtered trade recommendations, scored by a walk-forward
backtest.
"""
from ohlcast.data import (
    OhlcBar,
    OhlcSeries,
    SyntheticConfig,
    check_constraints,
    generate_synthetic,
    parse_csv,
    serialize_csv,
    split_series,
)
from ohlcast.errors import ConfigError, DataError, OhlcastError, ParseError
from ohlcast.evaluation import (
    BacktestReport,
    MetricsReport,
    compute_metrics,
    fit_model,
    model_predictions,
    oracle_predictions,
    run_backtest,
    sweep,
)
from ohlcast.features import (
    FeatureVector,
    PipelineConfig,
    build_features,
    denorm_range,
    make_windows,
    norm_range,
    norm_relative,
)
from ohlcast.indicators import (
    IndicatorConfig,
    Recommendation,
    actual_profit,
    predicted_profit,
    recommend_buy_signals,
    recommend_top_profit,
    williams_r,
)
from ohlcast.model import (
    HeadOutputs,
    ModelConfig,
    ModelParams,
    PredictedBar,
    TrainConfig,
    build_model,
    load_model,
    predict_next,
    reconstruct_prices,
    save_model,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "OhlcBar",
    "OhlcSeries",
    "SyntheticConfig",
    "check_constraints",
    "generate_synthetic",
    "parse_csv",
    "serialize_csv",
    "split_series",
    "ConfigError",
    "DataError",
    "OhlcastError",
    "ParseError",
    "BacktestReport",
    "MetricsReport",
    "compute_metrics",
    "fit_model",
    "model_predictions",
    "oracle_predictions",
    "run_backtest",
    "sweep",
    "FeatureVector",
    "PipelineConfig",
    "build_features",
    "denorm_range",
    "make_windows",
    "norm_range",
    "norm_relative",
    "HeadOutputs",
    "IndicatorConfig",
    "ModelConfig",
    "ModelParams",
    "PredictedBar",
    "Recommendation",
    "TrainConfig",
    "actual_profit",
    "build_model",
    "load_model",
    "predict_next",
    "predicted_profit",
    "recommend_buy_signals",
    "recommend_top_profit",
    "reconstruct_prices",
    "save_model",
    "train",
    "williams_r",
    "__version__",
]
