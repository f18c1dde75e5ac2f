"""Climatological quantile thresholds, observed bin indicators, and the
rolling probabilistic climatology.

Quantiles use the nearest-rank estimator: the p-th quantile of n sorted
samples is the value at 1-based index ceil(p * n).  Indicator comparisons are
strict (< threshold); ties fall in the upper bin.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field

import numpy as np

from .grids import (
    AlignmentError,
    EnsembleField,
    GridSpec,
    ObservationField,
    _DatedField,
    _as_float_array,
    _check_dates,
    _check_variable,
    shift_years,
)

DEFAULT_K = 5

#: Day-of-year offsets pooled when estimating observed thresholds.
THRESHOLD_DAY_OFFSETS = (-4, -2, 0, 2, 4)


@dataclass(frozen=True, eq=False)
class ThresholdField(_DatedField):
    """Per-(date, cell) quantile thresholds for bins k = 1..K-1.

    The K-th threshold is +infinity by convention and never stored.
    ``short_window_dates`` flags model-threshold dates built from fewer than
    the full 9-date hindcast window.
    """

    variable: str
    K: int
    target_dates: tuple[dt.date, ...]
    values: np.ndarray  # (time, lat, lon, K-1)
    grid: GridSpec
    source: str = "observed"
    lead_days: int | None = None
    short_window_dates: tuple[dt.date, ...] = ()

    def __post_init__(self):
        _check_variable(self.variable)
        if self.source not in ("observed", "model"):
            raise ValueError(f"unknown threshold source {self.source!r}")
        object.__setattr__(self, "target_dates", _check_dates(self.target_dates))
        vals = _as_float_array(self.values, "values")
        expected = (len(self.target_dates),) + self.grid.shape + (self.K - 1,)
        if vals.shape != expected:
            raise ValueError(f"threshold shape {vals.shape} != expected {expected}")
        with np.errstate(invalid="ignore"):
            if np.any(np.diff(vals, axis=-1) < 0):
                raise ValueError("thresholds must be nondecreasing in k")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True, eq=False)
class IndicatorField(_DatedField):
    """Observed cumulative bin indicators O(k) in {0, 1}, k = 1..K.

    O(K) is 1 wherever the observation exists (the top threshold is infinite).
    Missing observations or thresholds propagate as NaN.
    """

    variable: str
    K: int
    target_dates: tuple[dt.date, ...]
    values: np.ndarray  # (time, lat, lon, K)
    grid: GridSpec

    def __post_init__(self):
        _check_variable(self.variable)
        object.__setattr__(self, "target_dates", _check_dates(self.target_dates))
        vals = _as_float_array(self.values, "values")
        expected = (len(self.target_dates),) + self.grid.shape + (self.K,)
        if vals.shape != expected:
            raise ValueError(f"indicator shape {vals.shape} != expected {expected}")
        finite = vals[np.isfinite(vals)]
        if finite.size and not np.all((finite == 0) | (finite == 1)):
            raise ValueError("indicators must be 0, 1, or NaN")
        with np.errstate(invalid="ignore"):
            if np.any(np.diff(vals, axis=-1) < 0):
                raise ValueError("indicators must be nondecreasing in k")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True, eq=False)
class ClimatologyField(_DatedField):
    """Rolling probabilistic climatology C_t(k) in [0, 1], k = 1..K."""

    variable: str
    K: int
    target_dates: tuple[dt.date, ...]
    values: np.ndarray  # (time, lat, lon, K)
    grid: GridSpec

    def __post_init__(self):
        _check_variable(self.variable)
        object.__setattr__(self, "target_dates", _check_dates(self.target_dates))
        vals = _as_float_array(self.values, "values")
        expected = (len(self.target_dates),) + self.grid.shape + (self.K,)
        if vals.shape != expected:
            raise ValueError(f"climatology shape {vals.shape} != expected {expected}")
        finite = vals[np.isfinite(vals)]
        if finite.size and (finite.min() < 0 or finite.max() > 1):
            raise ValueError("climatology values must lie in [0, 1]")
        with np.errstate(invalid="ignore"):
            if np.any(np.diff(vals, axis=-1) < -1e-12):
                raise ValueError("climatology must be nondecreasing in k")
        object.__setattr__(self, "values", vals)


def nearest_rank_quantiles(samples: np.ndarray, K: int) -> np.ndarray:
    """Nearest-rank k/K quantiles (k = 1..K-1) along axis 0, NaN-aware.

    ``samples`` has shape (n, ...); cells with fewer than K valid samples get
    NaN thresholds.
    """
    samples = np.asarray(samples, dtype=np.float64)
    n_total = samples.shape[0]
    if n_total == 0:
        return np.full(samples.shape[1:] + (K - 1,), np.nan)
    ordered = np.sort(samples, axis=0)  # NaNs sort to the end
    counts = np.sum(~np.isnan(samples), axis=0)
    out = np.empty(samples.shape[1:] + (K - 1,), dtype=np.float64)
    for k in range(1, K):
        idx = np.ceil(k * counts / K).astype(np.int64) - 1
        idx = np.clip(idx, 0, n_total - 1)
        out[..., k - 1] = np.take_along_axis(ordered, idx[None, ...], axis=0)[0]
    out[counts < K] = np.nan
    return out


def _threshold_sample_dates(t: dt.date, years_back: int) -> list[dt.date]:
    dates = []
    for j in range(1, years_back + 1):
        base = shift_years(t, j)
        if base is None:
            # Feb 29 target in a non-leap history year: no contribution.
            continue
        for off in THRESHOLD_DAY_OFFSETS:
            dates.append(base + dt.timedelta(days=off))
    return dates


def observed_thresholds(
    obs: ObservationField,
    target_dates,
    K: int = DEFAULT_K,
    years_back: int = 20,
) -> ThresholdField:
    """Observed climatological quantile thresholds.

    For each target date, pools the observations falling 0, 2, or 4 days away
    from the target month-day in each of the past ``years_back`` years and
    takes their nearest-rank k/K quantiles.  Missing samples are dropped;
    cells with fewer than K valid samples get missing thresholds.
    """
    target_dates = tuple(target_dates)
    out = np.full((len(target_dates),) + obs.grid.shape + (K - 1,), np.nan)
    for i, t in enumerate(target_dates):
        rows = [obs.row(s) for s in _threshold_sample_dates(t, years_back)]
        rows = [r for r in rows if r is not None]
        if not rows:
            continue
        out[i] = nearest_rank_quantiles(np.stack(rows), K)
    return ThresholdField(obs.variable, K, target_dates, out, obs.grid, source="observed")


def model_climatology_window(available, t: dt.date, half_width: int = 4) -> list[dt.date]:
    """The model climatology dates for a forecast target date: the closest
    available date at or before ``t`` plus the previous and next
    ``half_width`` available dates."""
    available = sorted(available)
    if not available:
        raise ValueError("no hindcast dates available")
    i = int(np.searchsorted(available, t, side="right")) - 1
    if i < 0:
        i = 0
    return available[max(0, i - half_width): i + half_width + 1]


def model_thresholds(
    hindcasts,
    forecast_dates,
    lead_days: int,
    K: int = DEFAULT_K,
) -> ThresholdField:
    """Model-based quantile thresholds pooled from hindcast ensembles.

    ``hindcasts`` is a sequence of EnsembleField, one per hindcast year
    offset, each stamped by forecast target date.  For every forecast date
    the thresholds are the nearest-rank quantiles of all member values over
    the 9-date model climatology window, all members, and all year offsets.
    Dates whose window has fewer than 9 entries are flagged in
    ``short_window_dates``.
    """
    hindcasts = list(hindcasts)
    if not hindcasts:
        raise ValueError("at least one hindcast field is required")
    grid = hindcasts[0].grid
    variable = hindcasts[0].variable
    available = sorted({d for h in hindcasts for d in h.target_dates})
    forecast_dates = tuple(forecast_dates)
    out = np.full((len(forecast_dates),) + grid.shape + (K - 1,), np.nan)
    short = []
    window_cache: dict[tuple[dt.date, ...], np.ndarray] = {}
    for i, t in enumerate(forecast_dates):
        window = model_climatology_window(available, t)
        key = tuple(window)
        if key not in window_cache:
            rows = []
            for s in window:
                for h in hindcasts:
                    r = h.row(s)
                    if r is not None:
                        rows.append(r)  # (members, lat, lon)
            pooled = np.concatenate(rows, axis=0)
            window_cache[key] = nearest_rank_quantiles(pooled, K)
        out[i] = window_cache[key]
        if len(window) < 9:
            short.append(t)
    return ThresholdField(
        variable, K, forecast_dates, out, grid,
        source="model", lead_days=lead_days, short_window_dates=tuple(short),
    )


def indicators(obs: ObservationField, thr: ThresholdField) -> IndicatorField:
    """Observed cumulative indicators O(k) = 1{y < q(k)}, with O(K) = 1.

    Strict inequality: an observation exactly at a threshold does not count
    as below it.  Missing observations or thresholds yield missing entries.
    """
    if thr.grid != obs.grid:
        raise AlignmentError("observation and threshold grids differ")
    K = thr.K
    out = np.full((len(thr.target_dates),) + obs.grid.shape + (K,), np.nan)
    for i, t in enumerate(thr.target_dates):
        y = obs.row(t)
        if y is None:
            continue
        q = thr.values[i]
        with np.errstate(invalid="ignore"):
            o = (y[..., None] < q).astype(np.float64)
        o[np.isnan(q) | np.isnan(y)[..., None]] = np.nan
        out[i, ..., : K - 1] = o
        out[i, ..., K - 1] = np.where(np.isnan(y), np.nan, 1.0)
    return IndicatorField(obs.variable, K, thr.target_dates, out, obs.grid)


def rolling_climatology(
    ind: IndicatorField,
    target_dates,
    years: int = 20,
    K: int | None = None,
) -> ClimatologyField:
    """Rolling probabilistic climatology from month-day matching indicators.

    C_t(k) averages the indicators at the same month-day over the previous
    ``years`` years; every missing indicator is imputed with the prior value
    k/K, so the mean is always over exactly ``years`` terms.
    """
    K = K or ind.K
    prior = np.arange(1, K + 1, dtype=np.float64) / K
    target_dates = tuple(target_dates)
    out = np.empty((len(target_dates),) + ind.grid.shape + (K,), dtype=np.float64)
    for i, t in enumerate(target_dates):
        acc = np.zeros(ind.grid.shape + (K,), dtype=np.float64)
        for j in range(1, years + 1):
            s = shift_years(t, j)
            row = ind.row(s) if s is not None else None
            if row is None:
                acc += prior
            else:
                acc += np.where(np.isnan(row), prior, row)
        out[i] = acc / years
    return ClimatologyField(ind.variable, K, target_dates, out, ind.grid)


def arid_mask(thr: ThresholdField) -> np.ndarray:
    """Per-(date, cell) flag for cells with no climatological precipitation:
    the (K-1)-th threshold is exactly zero."""
    return thr.values[..., -1] == 0.0
