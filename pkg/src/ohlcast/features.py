"""Price normalization and sliding-window sample construction.

Two complementary normalizations feed the model, eight features per day:

* range features: ``sigmoid(log10(1 + x))`` per price.  Monotone, window
  free, maps any positive price into (0.5, 1) while keeping the within-day
  price ordering; ``denorm_range`` is its exact inverse.
* relative features: where open/close sit between low and high, plus the
  high-low spread as a fraction of the high.  The low slot carries a
  constant placeholder so all four prices keep a column.
"""
from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
from typing import Sequence, TextIO

import numpy as np

from ohlcast.data import OhlcBar, OhlcSeries
from ohlcast.errors import ParseError
from ohlcast.nn.layers import sigmoid

FEATURE_NAMES = (
    "range_open",
    "range_high",
    "range_low",
    "range_close",
    "rel_open",
    "rel_high",
    "rel_low",
    "rel_close",
)

# Model targets for the next day: the low's range feature pins the price
# level (the least volatile price), the relative features place the rest.
TARGET_NAMES = ("range_low", "rel_open", "rel_high", "rel_close")


@dataclass(frozen=True)
class PipelineConfig:
    window: int = 20
    epsilon: float = 0.001      # constant emitted in the rel_low slot
    clamp_delta: float = 1e-6   # keeps logits away from the 0/1 singularities

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must be in (0, 1)")
        if not 0 < self.clamp_delta < 0.5:
            raise ValueError("clamp_delta must be in (0, 0.5)")


def norm_range(x):
    """Map a price to (0, 1) via sigmoid(log10(1 + x)); >= 0.5 for x >= 0."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < -1.0):
        raise ValueError("norm_range requires x > -1")
    out = sigmoid(np.log10(1.0 + x))
    return float(out) if out.ndim == 0 else out


def denorm_range(y, clamp_delta: float = 1e-6):
    """Invert ``norm_range``: 10**logit(y) - 1, clamping y into [d, 1-d]."""
    y = np.asarray(y, dtype=np.float64)
    if np.any(~np.isfinite(y)) or np.any(y < 0.0) or np.any(y > 1.0):
        raise ValueError("denorm_range requires y in [0, 1]")
    y = np.clip(y, clamp_delta, 1.0 - clamp_delta)
    out = np.power(10.0, np.log(y / (1.0 - y))) - 1.0
    return float(out) if out.ndim == 0 else out


def norm_relative(bar: OhlcBar, epsilon: float = 0.001, clamp_delta: float = 1e-6):
    """Within-day ratios (rel_open, rel_high, rel_low, rel_close).

    Degenerate high == low bars have no interior to locate prices in; they
    map to (0.5, clamp_delta, epsilon, 0.5) to stay finite and in range.
    """
    spread = bar.high - bar.low
    if spread <= 0:
        return (0.5, clamp_delta, epsilon, 0.5)
    return (
        (bar.open - bar.low) / spread,
        spread / bar.high,
        epsilon,
        (bar.close - bar.low) / spread,
    )


@dataclass(frozen=True)
class FeatureVector:
    """The eight normalized features for one trading day."""

    range_open: float
    range_high: float
    range_low: float
    range_close: float
    rel_open: float
    rel_high: float
    rel_low: float
    rel_close: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in FEATURE_NAMES], dtype=np.float64)


def build_features(series: OhlcSeries, config: PipelineConfig = PipelineConfig()) -> list[FeatureVector]:
    """One FeatureVector per bar: four range features plus four relative ones."""
    out = []
    for bar in series.bars:
        r_open, r_high, r_low, r_close = (norm_range(p) for p in bar.prices())
        rel = norm_relative(bar, epsilon=config.epsilon, clamp_delta=config.clamp_delta)
        out.append(FeatureVector(r_open, r_high, r_low, r_close, *rel))
    return out


def feature_matrix(features: list[FeatureVector]) -> np.ndarray:
    """(n, 8) array in FEATURE_NAMES order."""
    return np.array([fv.as_array() for fv in features], dtype=np.float64)


def target_tuple(fv: FeatureVector) -> np.ndarray:
    """The four prediction targets for a day, in TARGET_NAMES order."""
    return np.array([getattr(fv, name) for name in TARGET_NAMES], dtype=np.float64)


@dataclass
class WindowedSample:
    """A window of the previous W days' features plus the next day's targets."""

    window: np.ndarray        # (W, 8)
    target: np.ndarray        # (4,) in TARGET_NAMES order
    target_index: int         # row of the target day in the source series


def make_windows(features: list[FeatureVector], window: int) -> list[WindowedSample]:
    """All (length - window) sliding samples; sample k targets row k + window."""
    n = len(features)
    if n <= window:
        raise ValueError(f"need more than window={window} days, got {n}")
    mat = feature_matrix(features)
    targets = np.array([target_tuple(fv) for fv in features])
    return [
        WindowedSample(window=mat[k : k + window], target=targets[k + window], target_index=k + window)
        for k in range(n - window)
    ]


def stack_windows(samples: list[WindowedSample]) -> tuple[np.ndarray, np.ndarray]:
    """Batch samples into (B, W, 8) inputs and (B, 4) targets."""
    x = np.stack([s.window for s in samples])
    y = np.stack([s.target for s in samples])
    return x, y


def features_to_csv(dates: Sequence[dt.date], features: list[FeatureVector], stream: TextIO) -> None:
    """Write `date` plus the eight feature columns; floats use repr so a
    reparse via ``features_from_csv`` is exact."""
    if len(dates) != len(features):
        raise ValueError("dates and features must have equal length")
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["date", *FEATURE_NAMES])
    for date, fv in zip(dates, features):
        writer.writerow([date.isoformat()] + [repr(float(v)) for v in fv.as_array()])


def features_from_csv(stream: TextIO) -> tuple[list[dt.date], list[FeatureVector]]:
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty file, expected a header row", line=1) from None
    if header != ["date", *FEATURE_NAMES]:
        raise ParseError(f"unexpected feature CSV header {header!r}", line=1)
    dates: list[dt.date] = []
    out: list[FeatureVector] = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 9:
            raise ParseError(f"expected 9 fields, got {len(row)}", line=lineno)
        try:
            dates.append(dt.date.fromisoformat(row[0]))
            out.append(FeatureVector(*(float(cell) for cell in row[1:])))
        except ValueError:
            raise ParseError(f"bad value in row {row!r}", line=lineno) from None
    return dates, out
