"""Trading indicators computed over predicted next-day bars.

Two signals drive the recommendations:

* expected profit: predicted high minus the previous day's actual low,
  the gain of buying yesterday's dip and selling today's predicted peak;
* Williams %R, reported as a magnitude in [0, 100] over a window of the
  previous ``lookback - 1`` actual days plus the predicted day.  Values
  at or above the threshold (default 80) mark an oversold instrument and
  yield a buy signal.
"""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from typing import NamedTuple, Sequence

from ohlcast.errors import ConfigError
from ohlcast.model import PredictedBar


@dataclass(frozen=True)
class IndicatorConfig:
    lookback: int = 14            # days in the %R window, predicted day included
    buy_threshold: float = 80.0   # %R magnitude at or above which to signal a buy

    def __post_init__(self):
        if self.lookback < 2:
            raise ConfigError("lookback must be >= 2")
        if not 0.0 <= self.buy_threshold <= 100.0:
            raise ConfigError("buy_threshold must lie in [0, 100]")


def predicted_profit(predicted_high: float, prev_actual_low: float) -> float:
    """Gain from buying at yesterday's actual low, selling at today's predicted high."""
    return predicted_high - prev_actual_low


def actual_profit(actual_high: float, prev_actual_low: float) -> float:
    """The profit the same trade would really have realized."""
    return actual_high - prev_actual_low


class WilliamsResult(NamedTuple):
    value: float
    degenerate: bool


def williams_r(
    predicted: PredictedBar,
    prior_highs: Sequence[float],
    prior_lows: Sequence[float],
    lookback: int = 14,
) -> WilliamsResult:
    """Williams %R magnitude of the predicted day against its lookback window.

    The window high is the max of the prior actual highs and the predicted
    high, the window low likewise with the lows, so the predicted close can
    never leave the window and the magnitude stays in [0, 100].  A flat
    window (high == low) is flagged degenerate and reported as 0.
    """
    if len(prior_highs) != lookback - 1 or len(prior_lows) != lookback - 1:
        raise ValueError(
            f"need exactly {lookback - 1} prior highs and lows, "
            f"got {len(prior_highs)} and {len(prior_lows)}"
        )
    window_high = max(max(prior_highs), predicted.high)
    window_low = min(min(prior_lows), predicted.low)
    if window_high == window_low:
        return WilliamsResult(0.0, True)
    value = 100.0 * (window_high - predicted.close) / (window_high - window_low)
    return WilliamsResult(value, False)


@dataclass(frozen=True)
class Recommendation:
    """One instrument's prediction and signals for a single trading day."""

    symbol: str
    date: dt.date
    predicted: PredictedBar
    prev_low: float
    predicted_profit: float
    williams_r: float
    williams_degenerate: bool
    buy_signal: bool

    def to_dict(self) -> dict:
        return {
            "symbol": self.symbol,
            "date": self.date.isoformat(),
            "predicted": {
                "open": self.predicted.open,
                "high": self.predicted.high,
                "low": self.predicted.low,
                "close": self.predicted.close,
            },
            "prev_low": self.prev_low,
            "predicted_profit": self.predicted_profit,
            "williams_r": self.williams_r,
            "williams_degenerate": self.williams_degenerate,
            "buy_signal": self.buy_signal,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Recommendation":
        return cls(
            symbol=d["symbol"],
            date=dt.date.fromisoformat(d["date"]),
            predicted=PredictedBar(**d["predicted"]),
            prev_low=d["prev_low"],
            predicted_profit=d["predicted_profit"],
            williams_r=d["williams_r"],
            williams_degenerate=d["williams_degenerate"],
            buy_signal=d["buy_signal"],
        )


def build_recommendation(
    symbol: str,
    date: dt.date,
    predicted: PredictedBar,
    prev_low: float,
    prior_highs: Sequence[float],
    prior_lows: Sequence[float],
    config: IndicatorConfig | None = None,
) -> Recommendation:
    cfg = config if config is not None else IndicatorConfig()
    wr = williams_r(predicted, prior_highs, prior_lows, cfg.lookback)
    return Recommendation(
        symbol=symbol,
        date=date,
        predicted=predicted,
        prev_low=prev_low,
        predicted_profit=predicted_profit(predicted.high, prev_low),
        williams_r=wr.value,
        williams_degenerate=wr.degenerate,
        buy_signal=(not wr.degenerate) and wr.value >= cfg.buy_threshold,
    )


def recommend_top_profit(candidates: Sequence[Recommendation], k: int = 1) -> list[Recommendation]:
    """The k best candidates by predicted profit; ties fall to symbol order."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(candidates, key=lambda r: (-r.predicted_profit, r.symbol))
    return ranked[:k]


def recommend_buy_signals(candidates: Sequence[Recommendation]) -> list[Recommendation]:
    """Candidates flagged as buys, strongest %R first (symbol breaks ties)."""
    buys = [r for r in candidates if r.buy_signal]
    return sorted(buys, key=lambda r: (-r.williams_r, r.symbol))
