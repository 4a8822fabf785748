"""OHLC bars and series: CSV ingestion, constraint validation, synthetic data.

A daily bar must satisfy three constraint families:

* positivity - all four prices strictly positive,
* high_low   - the high strictly above the low,
* containment - open and close inside [low, high].

Bars with high == low are accepted from input files but flagged degenerate;
the synthetic generator never produces them.
"""
from __future__ import annotations

import csv
import datetime as dt
import io
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence, TextIO

import numpy as np

from ohlcast.errors import DataError, ParseError

CSV_HEADER = ["date", "open", "high", "low", "close"]

POSITIVITY = "positivity"
HIGH_LOW = "high_low"
CONTAINMENT = "containment"
CONSTRAINT_FAMILIES = (POSITIVITY, HIGH_LOW, CONTAINMENT)

PRICE_FIELDS = ("open", "high", "low", "close")


@dataclass(frozen=True)
class OhlcBar:
    date: dt.date
    open: float
    high: float
    low: float
    close: float

    @property
    def is_degenerate(self) -> bool:
        """True when high == low (flat bar, zero intraday range)."""
        return self.high == self.low

    def prices(self) -> tuple[float, float, float, float]:
        return (self.open, self.high, self.low, self.close)


def bar_violations(open_: float, high: float, low: float, close: float) -> list[str]:
    """Which constraint families the four prices break (strict high > low)."""
    families = []
    if not (open_ > 0 and high > 0 and low > 0 and close > 0):
        families.append(POSITIVITY)
    if not high > low:
        families.append(HIGH_LOW)
    if not (low <= open_ <= high and low <= close <= high):
        families.append(CONTAINMENT)
    return families


class DayType(Enum):
    BULLISH = "bullish"
    BEARISH = "bearish"
    DOJI = "doji"


def label_bull_bear(bar: OhlcBar) -> DayType:
    """Close above open is bullish, below is bearish, equal is a doji."""
    if bar.close > bar.open:
        return DayType.BULLISH
    if bar.close < bar.open:
        return DayType.BEARISH
    return DayType.DOJI


@dataclass
class OhlcSeries:
    symbol: str
    bars: list[OhlcBar]

    def __post_init__(self):
        dates = [b.date for b in self.bars]
        if any(b >= a for a, b in zip(dates[1:], dates)):
            raise DataError(f"{self.symbol}: bar dates must be strictly increasing")

    def __len__(self) -> int:
        return len(self.bars)

    def __getitem__(self, idx: int) -> OhlcBar:
        return self.bars[idx]

    def price_matrix(self) -> np.ndarray:
        """(n, 4) array of open, high, low, close."""
        return np.array([b.prices() for b in self.bars], dtype=np.float64)


@dataclass
class BarViolation:
    index: int
    date: dt.date
    families: list[str]
    degenerate: bool = False


@dataclass
class ValidationReport:
    violations: list[BarViolation] = field(default_factory=list)
    family_counts: dict[str, int] = field(default_factory=lambda: dict.fromkeys(CONSTRAINT_FAMILIES, 0))

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def failing_days(self) -> int:
        """Days with at least one broken constraint (one count per day)."""
        return len(self.violations)


def check_constraints(series: OhlcSeries) -> ValidationReport:
    """Validate every bar; a bar failing several families is listed once."""
    report = ValidationReport()
    for idx, bar in enumerate(series.bars):
        families = bar_violations(bar.open, bar.high, bar.low, bar.close)
        if families:
            report.violations.append(
                BarViolation(index=idx, date=bar.date, families=families, degenerate=bar.is_degenerate)
            )
            for fam in families:
                report.family_counts[fam] += 1
    return report


def parse_csv(stream: TextIO | str, symbol: str = "UNKNOWN") -> OhlcSeries:
    """Read `date,open,high,low,close` rows into a series.

    Dates must be ISO-8601, strictly increasing, and unique.  Constraint
    violations do not stop parsing; run ``check_constraints`` afterwards.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty file, expected a header row", line=1) from None
    if [h.strip().lower() for h in header[:5]] != CSV_HEADER:
        raise ParseError(f"expected header {','.join(CSV_HEADER)}, got {','.join(header)}", line=1)

    bars: list[OhlcBar] = []
    prev_date: dt.date | None = None
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) < 5:
            raise ParseError(f"expected 5 fields, got {len(row)}", line=lineno)
        try:
            date = dt.date.fromisoformat(row[0].strip())
        except ValueError:
            raise ParseError(f"bad date {row[0]!r}", line=lineno) from None
        try:
            prices = [float(cell) for cell in row[1:5]]
        except ValueError:
            raise ParseError(f"bad price in row {row[1:5]!r}", line=lineno) from None
        if any(not np.isfinite(p) for p in prices):
            raise ParseError(f"non-finite price in row {row[1:5]!r}", line=lineno)
        if prev_date is not None:
            if date == prev_date:
                raise DataError(f"{symbol}: duplicate date {date} (line {lineno})")
            if date < prev_date:
                raise DataError(f"{symbol}: dates out of order at {date} (line {lineno})")
        prev_date = date
        bars.append(OhlcBar(date, *prices))
    return OhlcSeries(symbol=symbol, bars=bars)


def serialize_csv(series: OhlcSeries, stream: TextIO) -> None:
    """Write the series back out; floats use repr so a reparse is exact."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for bar in series.bars:
        writer.writerow([bar.date.isoformat()] + [repr(p) for p in bar.prices()])


def split_series(series: OhlcSeries, test_len: int) -> tuple[OhlcSeries, OhlcSeries]:
    """Chronological split with the last ``test_len`` bars held out."""
    if not 0 < test_len < len(series):
        raise ValueError(f"test_len must be in (0, {len(series)}), got {test_len}")
    cut = len(series) - test_len
    return (
        OhlcSeries(symbol=series.symbol, bars=series.bars[:cut]),
        OhlcSeries(symbol=series.symbol, bars=series.bars[cut:]),
    )


@dataclass(frozen=True)
class SyntheticConfig:
    """Geometric-random-walk generator settings.

    ``daily_vol`` is the stdev of the log close-to-close return,
    ``range_factor`` scales how far the high/low extend beyond open/close,
    ``gap_vol`` the stdev of the overnight open gap.  ``crash_day`` forces a
    single drastic drop (fraction ``crash_drop``) to mimic a regime break.

    ``range_rho``/``range_amp`` turn on volatility clustering of the intraday
    range: the half-width scale is ``range_factor`` times a log-AR(1) process
    with autocorrelation ``range_rho`` and stationary log stdev ``range_amp``.
    Close-to-close returns are untouched, so the closes stay a plain geometric
    random walk; only the candle width gets calm and wild stretches the way
    real markets do.  Both default to 0 (independent widths every day).

    ``range_floor`` adds a guaranteed wick of ``range_floor`` times the
    current width scale before the random component, so on wild days the
    candle is reliably wide rather than wide only on average.  0 (default)
    reproduces plain half-normal wicks.
    """

    n_days: int
    start_price: float = 100.0
    daily_vol: float = 0.01
    range_factor: float = 0.004
    drift: float = 0.0002
    gap_vol: float = 0.003
    crash_day: int | None = None
    crash_drop: float = 0.5
    range_rho: float = 0.0
    range_amp: float = 0.0
    range_floor: float = 0.0
    start_date: dt.date = dt.date(2014, 1, 1)

    def __post_init__(self):
        if self.n_days < 1:
            raise ValueError("n_days must be >= 1")
        if self.start_price <= 0 or self.daily_vol < 0 or self.range_factor < 0:
            raise ValueError("start_price must be positive, volatilities non-negative")
        if not 0 < self.crash_drop < 1:
            raise ValueError("crash_drop must be in (0, 1)")
        if not 0 <= self.range_rho < 1:
            raise ValueError("range_rho must be in [0, 1)")
        if self.range_amp < 0 or self.range_floor < 0:
            raise ValueError("range_amp and range_floor must be non-negative")


def _weekday_dates(start: dt.date, n: int) -> list[dt.date]:
    # Trading-day calendar: skip Saturdays/Sundays so the series has date gaps.
    dates = []
    d = start
    while len(dates) < n:
        if d.weekday() < 5:
            dates.append(d)
        d += dt.timedelta(days=1)
    return dates


def generate_synthetic(seed, config: SyntheticConfig, symbol: str = "SYN") -> OhlcSeries:
    """Seeded synthetic OHLC series; every bar passes ``check_constraints``."""
    rng = np.random.default_rng(seed)
    n = config.n_days
    bars = []
    prev_close = config.start_price
    clustered = config.range_amp > 0
    log_scale = config.range_amp * rng.standard_normal() if clustered else 0.0
    innov_scale = config.range_amp * np.sqrt(1.0 - config.range_rho**2)
    for day, date in enumerate(_weekday_dates(config.start_date, n)):
        gap = config.gap_vol * rng.standard_normal()
        ret = config.drift + config.daily_vol * rng.standard_normal()
        if config.crash_day is not None and day == config.crash_day:
            ret += np.log1p(-config.crash_drop)
        open_ = prev_close * np.exp(gap)
        close = prev_close * np.exp(ret)
        if clustered:
            log_scale = config.range_rho * log_scale + innov_scale * rng.standard_normal()
        width_scale = config.range_factor * np.exp(log_scale)
        up = width_scale * (config.range_floor + abs(rng.standard_normal()))
        down = min(width_scale * (config.range_floor + abs(rng.standard_normal())), 0.9)
        high = max(open_, close) * (1.0 + up)
        low = min(open_, close) * (1.0 - down)
        bars.append(OhlcBar(date, float(open_), float(high), float(low), float(close)))
        prev_close = close
    return OhlcSeries(symbol=symbol, bars=bars)


def derive_seed(base: int, tag: int) -> int:
    """Stable child seed for (base, tag).

    Keeps per-symbol random streams independent without the collisions a
    plain ``base + tag`` would produce across nearby base seeds.
    """
    return int(np.random.SeedSequence(entropy=[base, tag]).generate_state(1)[0])


def load_series_files(paths: Iterable, symbols: Sequence[str] | None = None) -> list[OhlcSeries]:
    """Parse one CSV per symbol; the symbol defaults to the file stem."""
    out = []
    for k, path in enumerate(paths):
        symbol = symbols[k] if symbols else getattr(path, "stem", str(path))
        with open(path, "r", encoding="utf-8") as fh:
            out.append(parse_csv(fh, symbol=symbol))
    return out
