"""Command-line entry point.

Subcommands: ``synth``, ``validate``, ``features``, ``train``, ``backtest``,
``recommend``, ``sweep``.  Every run that takes a seed is bit-reproducible,
and every emitted artifact parses back through this package's own readers.

Configuration comes from three layers, most specific winning: command-line
flags, then a JSON config file (``--config``), then built-in defaults.  The
config file holds a ``common`` section plus one section per subcommand, each
mapping flag names (underscored) to values::

    {"common": {"out": "runs/demo"}, "backtest": {"epochs": 150}}

Exit codes: 0 success, 1 data or validation failure, 2 usage error,
3 I/O error.  The default output directory is ``.`` or ``$OHLCAST_OUTPUT_DIR``.
"""
from __future__ import annotations

import argparse
import datetime as dt
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from ohlcast.autoencoder import AutoencoderConfig
from ohlcast.data import (
    OhlcSeries,
    SyntheticConfig,
    check_constraints,
    derive_seed,
    generate_synthetic,
    parse_csv,
    serialize_csv,
    split_series,
)
from ohlcast.errors import ConfigError, DataError, ParseError
from ohlcast.evaluation import (
    fit_model,
    model_predictions,
    oracle_predictions,
    run_backtest,
    sweep,
)
from ohlcast.features import PipelineConfig, build_features, features_to_csv
from ohlcast.indicators import IndicatorConfig, build_recommendation, recommend_buy_signals, recommend_top_profit
from ohlcast.model import (
    ModelConfig,
    TrainConfig,
    VARIANTS,
    load_model,
    predict_next,
    reconstruct_prices,
    save_model,
)

EXIT_OK = 0
EXIT_DATA = 1
EXIT_USAGE = 2
EXIT_IO = 3

OUTPUT_DIR_ENV = "OHLCAST_OUTPUT_DIR"

# Built-in defaults behind the flag > config file > default resolution.
DEFAULTS = {
    "symbols": "SYNA,SYNB,SYNC",
    "seed": 1,
    "daily_vol": 0.008,
    "range_factor": 0.004,
    "drift": 0.0002,
    "gap_vol": 0.003,
    "start_price": 100.0,
    "crash_drop": 0.5,
    "start_date": "2014-01-01",
    "variant": "ae-mtl",
    "window": 20,
    "shared_layers": 2,
    "task_layers": 1,
    "shared_hidden": 32,
    "head_hidden": 16,
    "epochs": 150,
    "learning_rate": 1e-3,
    "ae_epochs": 500,
    "model_seed": 0,
    "test_len": 350,
    "lookback": 14,
    "threshold": 80.0,
    "top_k": 1,
    "jobs": 1,
    "val_frac": 0.1,
}


def _load_config_file(path: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path}: invalid JSON ({e})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path}: top level must be an object")
    return doc


def _merged_config(args: argparse.Namespace) -> dict:
    doc = _load_config_file(args.config) if args.config else {}
    merged = dict(doc.get("common", {}))
    merged.update(doc.get(args.command, {}))
    return merged


def _val(args, name, fallback=None):
    """Flag value if given, else config file value, else default."""
    flag = getattr(args, name, None)
    if flag is not None:
        return flag
    if name in args.cfg:
        return args.cfg[name]
    if fallback is not None:
        return fallback
    return DEFAULTS.get(name)


def _out_dir(args) -> Path:
    out = _val(args, "out", fallback=os.environ.get(OUTPUT_DIR_ENV, "."))
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _symbols(args) -> list[str]:
    raw = _val(args, "symbols")
    return [s.strip() for s in raw.split(",") if s.strip()]


def _synth_config(args) -> SyntheticConfig:
    crash_day = _val(args, "crash_day", fallback=-1)
    return SyntheticConfig(
        n_days=int(_val(args, "synthetic")),
        start_price=float(_val(args, "start_price")),
        daily_vol=float(_val(args, "daily_vol")),
        range_factor=float(_val(args, "range_factor")),
        drift=float(_val(args, "drift")),
        gap_vol=float(_val(args, "gap_vol")),
        crash_day=None if int(crash_day) < 0 else int(crash_day),
        crash_drop=float(_val(args, "crash_drop")),
        range_rho=float(_val(args, "range_rho", fallback=0.0)),
        range_amp=float(_val(args, "range_amp", fallback=0.0)),
        range_floor=float(_val(args, "range_floor", fallback=0.0)),
        start_date=dt.date.fromisoformat(str(_val(args, "start_date"))),
    )


def _load_universe(args) -> dict[str, OhlcSeries]:
    csv_paths = _val(args, "csv")
    synthetic = _val(args, "synthetic")
    if (csv_paths is None) == (synthetic is None):
        raise ConfigError("exactly one data source required: --csv or --synthetic")
    series_map: dict[str, OhlcSeries] = {}
    if csv_paths is not None:
        for p in csv_paths:
            path = Path(p)
            with open(path, "r", encoding="utf-8") as fh:
                series = parse_csv(fh, symbol=path.stem)
            series_map[series.symbol] = series
    else:
        config = _synth_config(args)
        base = int(_val(args, "seed"))
        for k, symbol in enumerate(_symbols(args)):
            series_map[symbol] = generate_synthetic(derive_seed(base, k), config, symbol=symbol)
    if not series_map:
        raise ConfigError("no input series")
    return series_map


def _pipeline_config(args) -> PipelineConfig:
    return PipelineConfig(window=int(_val(args, "window")))


def _indicator_config(args) -> IndicatorConfig:
    return IndicatorConfig(
        lookback=int(_val(args, "lookback")), buy_threshold=float(_val(args, "threshold"))
    )


def _model_config(args, seed: int) -> ModelConfig:
    variant = str(_val(args, "variant"))
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    use_ae, multi_task = VARIANTS[variant]
    batch_size = _val(args, "batch_size", fallback=-1)
    return ModelConfig(
        use_ae=use_ae,
        multi_task=multi_task,
        shared_layers=int(_val(args, "shared_layers")),
        task_layers=int(_val(args, "task_layers")),
        shared_hidden=int(_val(args, "shared_hidden")),
        head_hidden=int(_val(args, "head_hidden")),
        window=int(_val(args, "window")),
        seed=seed,
        train=TrainConfig(
            epochs=int(_val(args, "epochs")),
            learning_rate=float(_val(args, "learning_rate")),
            batch_size=None if int(batch_size) < 1 else int(batch_size),
        ),
    )


def _ae_config(args) -> AutoencoderConfig:
    return AutoencoderConfig(epochs=int(_val(args, "ae_epochs")))


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n")


def _fit_symbol(payload):
    symbol, features, model_cfg, ae_cfg = payload
    params, result = fit_model(features, model_cfg, ae_cfg)
    return symbol, params, result


def _train_universe(args, series_map: dict[str, OhlcSeries], test_len: int):
    """Fit one model per symbol on everything before the last test_len days."""
    pipeline = _pipeline_config(args)
    ae_cfg = _ae_config(args)
    base_seed = int(_val(args, "model_seed"))
    jobs = int(_val(args, "jobs"))

    payloads = []
    for k, symbol in enumerate(sorted(series_map)):
        series = series_map[symbol]
        train_series = split_series(series, test_len)[0] if test_len > 0 else series
        features = build_features(train_series, pipeline)
        payloads.append((symbol, features, _model_config(args, derive_seed(base_seed, k)), ae_cfg))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            fitted = list(pool.map(_fit_symbol, payloads))
    else:
        fitted = [_fit_symbol(p) for p in payloads]
    return {symbol: (params, result) for symbol, params, result in fitted}


def cmd_synth(args) -> int:
    out = _out_dir(args)
    config = _synth_config(args)
    base = int(_val(args, "seed"))
    for k, symbol in enumerate(_symbols(args)):
        series = generate_synthetic(derive_seed(base, k), config, symbol=symbol)
        path = out / f"{symbol}.csv"
        with open(path, "w", encoding="utf-8") as fh:
            serialize_csv(series, fh)
        print(f"wrote {path} ({len(series)} bars)")
    return EXIT_OK


def cmd_validate(args) -> int:
    paths = _val(args, "csv")
    if not paths:
        raise ConfigError("validate requires --csv")
    total = 0
    for p in paths:
        path = Path(p)
        try:
            with open(path, "r", encoding="utf-8") as fh:
                series = parse_csv(fh, symbol=path.stem)
        except ParseError as e:
            print(f"{path}: parse error: {e}", file=sys.stderr)
            return EXIT_DATA
        report = check_constraints(series)
        counts = ", ".join(f"{fam}={n}" for fam, n in report.family_counts.items())
        print(f"{path}: {len(series)} bars, {report.failing_days} failing days ({counts})")
        for v in report.violations:
            print(f"  {v.date} (row {v.index}): {', '.join(v.families)}")
        total += report.failing_days
    print(f"total failing days: {total}")
    return EXIT_OK if total == 0 else EXIT_DATA


def cmd_features(args) -> int:
    out = _out_dir(args)
    series_map = _load_universe(args)
    pipeline = _pipeline_config(args)
    for symbol in sorted(series_map):
        series = series_map[symbol]
        features = build_features(series, pipeline)
        path = out / f"{symbol}_features.csv"
        with open(path, "w", encoding="utf-8") as fh:
            features_to_csv([b.date for b in series.bars], features, fh)
        print(f"wrote {path} ({len(features)} rows)")
    return EXIT_OK


def cmd_train(args) -> int:
    out = _out_dir(args)
    series_map = _load_universe(args)
    test_len = int(_val(args, "test_len", fallback=0))
    fitted = _train_universe(args, series_map, test_len)
    for symbol in sorted(fitted):
        params, result = fitted[symbol]
        model_path = out / f"{symbol}_model.json"
        save_model(params, model_path, optimizer=result.optimizer)
        loss_path = out / f"{symbol}_loss.csv"
        with open(loss_path, "w", encoding="utf-8") as fh:
            fh.write("epoch,loss\n")
            for epoch, loss in enumerate(result.loss_history):
                fh.write(f"{epoch},{repr(loss)}\n")
        print(
            f"{symbol}: trained {params.config.variant} "
            f"({len(result.loss_history)} epochs, final loss {result.final_loss:.6g}) -> {model_path}"
        )
    return EXIT_OK


def cmd_backtest(args) -> int:
    out = _out_dir(args)
    started = time.perf_counter()
    series_map = _load_universe(args)
    test_len = int(_val(args, "test_len"))
    pipeline = _pipeline_config(args)
    oracle = bool(_val(args, "oracle", fallback=False))

    if oracle:
        predictions = oracle_predictions(series_map, test_len)
        variant = "oracle"
    else:
        fitted = _train_universe(args, series_map, test_len)
        models = {s: p for s, (p, _) in fitted.items()}
        if bool(_val(args, "save_models", fallback=False)):
            for symbol, params in models.items():
                save_model(params, out / f"{symbol}_model.json")
        predictions = model_predictions(models, series_map, test_len, pipeline)
        variant = str(_val(args, "variant"))

    report = run_backtest(
        series_map,
        predictions,
        test_len,
        indicator=_indicator_config(args),
        top_k=int(_val(args, "top_k")),
    )
    runtime = time.perf_counter() - started

    payload = {
        "variant": variant,
        "window": int(_val(args, "window")),
        "model_seed": int(_val(args, "model_seed")),
        **report.to_dict(),
    }
    report_path = out / "report.json"
    _write_json(report_path, payload)

    csv_path = out / "backtest.csv"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("date,top_symbol,predicted_profit,realized_profit,cumulative_profit,buy_count\n")
        cumulative = 0.0
        for day in report.daily:
            cumulative += day.realized_profit
            fh.write(
                f"{day.date.isoformat()},{day.top_symbol},{repr(day.top[0].predicted_profit)},"
                f"{repr(day.realized_profit)},{repr(cumulative)},{len(day.buys)}\n"
            )

    for symbol in sorted(report.per_stock):
        m = report.per_stock[symbol].metrics
        print(
            f"{symbol}: rmse={m.rmse:.4f} mae={m.mae:.4f} mape={m.mape:.4%} r2={m.r2:.4f} "
            f"failures={report.per_stock[symbol].constraint_failures}"
        )
    print(
        f"days scored: {len(report.daily)} (skipped {report.skipped_days}), "
        f"cumulative top-pick profit: {report.cumulative_profit:.4f}"
    )
    print(f"wrote {report_path} and {csv_path}")
    print(f"runtime_seconds={runtime:.2f}")
    return EXIT_OK


def cmd_recommend(args) -> int:
    out = _out_dir(args)
    series_map = _load_universe(args)
    models_dir = Path(_val(args, "models", fallback="."))
    indicator = _indicator_config(args)
    top_k = int(_val(args, "top_k"))
    as_of = _val(args, "as_of")

    candidates = []
    for symbol in sorted(series_map):
        series = series_map[symbol]
        if as_of is not None:
            cutoff = dt.date.fromisoformat(str(as_of))
            bars = [b for b in series.bars if b.date <= cutoff]
            if not bars:
                raise DataError(f"{symbol}: no bars on or before {cutoff}")
            series = OhlcSeries(symbol=symbol, bars=bars)
        params, _ = load_model(models_dir / f"{symbol}_model.json")
        window = params.config.window
        if len(series) < max(window, indicator.lookback - 1):
            raise DataError(f"{symbol}: insufficient history for window/lookback")
        pipeline = PipelineConfig(window=window)
        features = build_features(series, pipeline)
        mat = np.array([f.as_array() for f in features])
        heads = predict_next(params, mat[-window:])
        predicted = reconstruct_prices(heads, pipeline.clamp_delta)
        last = series.bars[-1]
        target_date = _next_weekday(last.date)
        candidates.append(
            build_recommendation(
                symbol=symbol,
                date=target_date,
                predicted=predicted,
                prev_low=last.low,
                prior_highs=[b.high for b in series.bars[-(indicator.lookback - 1):]],
                prior_lows=[b.low for b in series.bars[-(indicator.lookback - 1):]],
                config=indicator,
            )
        )

    top = recommend_top_profit(candidates, k=top_k)
    buys = recommend_buy_signals(candidates)
    payload = {
        "as_of": (series_map[top[0].symbol].bars[-1].date.isoformat() if as_of is None else str(as_of)),
        "top": [r.to_dict() for r in top],
        "buys": [r.to_dict() for r in buys],
        "all": [r.to_dict() for r in sorted(candidates, key=lambda r: r.symbol)],
    }
    path = out / "recommendations.json"
    _write_json(path, payload)

    for r in top:
        print(
            f"top: {r.symbol} predicted high {r.predicted.high:.4f} "
            f"(profit {r.predicted_profit:.4f}, %R {r.williams_r:.2f})"
        )
    if buys:
        print("buy signals: " + ", ".join(f"{r.symbol} (%R {r.williams_r:.2f})" for r in buys))
    else:
        print("buy signals: none")
    print(f"wrote {path}")
    return EXIT_OK


def _next_weekday(date: dt.date) -> dt.date:
    nxt = date + dt.timedelta(days=1)
    while nxt.weekday() >= 5:
        nxt += dt.timedelta(days=1)
    return nxt


def cmd_sweep(args) -> int:
    out = _out_dir(args)
    series_map = _load_universe(args)
    if len(series_map) != 1:
        raise ConfigError("sweep works on a single series; pass one --csv file or one symbol")
    (series,) = series_map.values()
    parameter = str(_val(args, "param"))
    raw_values = _val(args, "values")
    if raw_values is None:
        raise ConfigError("sweep requires --values, e.g. --values 5,10,20")
    values = [int(v) for v in str(raw_values).split(",") if v.strip()]

    result = sweep(
        series,
        base_config=_model_config(args, int(_val(args, "model_seed"))),
        parameter=parameter,
        values=values,
        test_len=int(_val(args, "test_len")),
        pipeline=_pipeline_config(args),
        ae_config=_ae_config(args),
        val_frac=float(_val(args, "val_frac")),
    )

    path = out / "sweep.csv"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("value,rmse,mae,mape\n")
        for point in result.points:
            m = point.metrics
            fh.write(f"{point.value},{repr(m.rmse)},{repr(m.mae)},{repr(m.mape)}\n")
    for point in result.points:
        m = point.metrics
        print(f"{parameter}={point.value}: rmse={m.rmse:.4f} mae={m.mae:.4f} mape={m.mape:.4%}")
    print(f"best {parameter}: {result.best_value}")
    print(f"wrote {path}")
    return EXIT_OK


def _add_source_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--csv", nargs="+", metavar="PATH", help="input CSV file(s), one per symbol")
    p.add_argument("--synthetic", type=int, metavar="N_DAYS", help="generate N_DAYS synthetic bars instead")
    p.add_argument("--symbols", help="comma-separated synthetic symbols (default SYNA,SYNB,SYNC)")
    p.add_argument("--seed", type=int, help="data seed for synthetic generation")
    p.add_argument("--daily-vol", type=float, dest="daily_vol")
    p.add_argument("--range-factor", type=float, dest="range_factor")
    p.add_argument("--drift", type=float)
    p.add_argument("--gap-vol", type=float, dest="gap_vol")
    p.add_argument("--start-price", type=float, dest="start_price")
    p.add_argument("--crash-day", type=int, dest="crash_day", help="index of a forced crash day (-1: none)")
    p.add_argument("--crash-drop", type=float, dest="crash_drop")
    p.add_argument("--range-rho", type=float, dest="range_rho", help="autocorrelation of the width regime")
    p.add_argument("--range-amp", type=float, dest="range_amp", help="log stdev of the width regime")
    p.add_argument("--range-floor", type=float, dest="range_floor", help="guaranteed wick in width-scale units")
    p.add_argument("--start-date", dest="start_date")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--variant", choices=sorted(VARIANTS), help="model variant (default ae-mtl)")
    p.add_argument("--window", type=int)
    p.add_argument("--shared-layers", type=int, dest="shared_layers")
    p.add_argument("--task-layers", type=int, dest="task_layers")
    p.add_argument("--shared-hidden", type=int, dest="shared_hidden")
    p.add_argument("--head-hidden", type=int, dest="head_hidden")
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--batch-size", type=int, dest="batch_size", help="mini-batch size (-1: full batch)")
    p.add_argument("--ae-epochs", type=int, dest="ae_epochs")
    p.add_argument("--model-seed", type=int, dest="model_seed")
    p.add_argument("--jobs", type=int, help="parallel workers for per-symbol training")


def _add_indicator_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lookback", type=int, help="Williams %%R window length in days")
    p.add_argument("--threshold", type=float, help="%%R magnitude treated as a buy signal")
    p.add_argument("--top-k", type=int, dest="top_k")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ohlcast",
        description="Next-day OHLC forecasting and trade recommendation toolkit.",
    )
    parser.add_argument("--config", help="JSON config file; flags override it")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic OHLC CSV files")
    _add_source_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate", help="check CSV files against the OHLC constraints")
    p.add_argument("--csv", nargs="+", metavar="PATH", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("features", help="emit normalized feature CSVs")
    _add_source_flags(p)
    p.add_argument("--window", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train one model per symbol")
    _add_source_flags(p)
    _add_model_flags(p)
    p.add_argument("--test-len", type=int, dest="test_len", help="holdout length excluded from training (0: none)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("backtest", help="walk-forward backtest with daily recommendations")
    _add_source_flags(p)
    _add_model_flags(p)
    _add_indicator_flags(p)
    p.add_argument("--test-len", type=int, dest="test_len")
    p.add_argument("--oracle", action=argparse.BooleanOptionalAction, help="score perfect-foresight predictions")
    p.add_argument("--save-models", action=argparse.BooleanOptionalAction, dest="save_models")
    p.add_argument("--out")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("recommend", help="next-day recommendations from saved models")
    _add_source_flags(p)
    _add_indicator_flags(p)
    p.add_argument("--models", help="directory holding <symbol>_model.json files")
    p.add_argument("--as-of", dest="as_of", help="predict the day after this date (default: last bar)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("sweep", help="grid-search window or layer counts")
    _add_source_flags(p)
    _add_model_flags(p)
    p.add_argument("--param", choices=("window", "shared_layers", "task_layers"))
    p.add_argument("--values", help="comma-separated candidate values")
    p.add_argument("--test-len", type=int, dest="test_len")
    p.add_argument("--val-frac", type=float, dest="val_frac")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.cfg = _merged_config(args)
        return args.func(args)
    except ParseError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
