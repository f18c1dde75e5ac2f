"""Cumulative-probability forecasts from deterministic ensembles, and the
raw / debiased baseline construction protocols."""

from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass

import numpy as np

from .climatology import DEFAULT_K, ThresholdField, model_thresholds
from .grids import (
    AlignmentError,
    EnsembleField,
    GridSpec,
    _DatedField,
    _as_float_array,
    _check_dates,
    _check_variable,
    shift_years,
)

log = logging.getLogger(__name__)

PROVENANCES = ("raw", "debiased", "debias++", "persistence++", "pbc", "custom")


@dataclass(frozen=True, eq=False)
class CdfForecast(_DatedField):
    """Cumulative probabilities F(k) in [0, 1] for k = 1..K.

    F(K) is 1 wherever defined (the top threshold is infinite and members are
    finite).  Threshold-derived forecasts are monotone in k by construction;
    corrected forecasts are restored by projection.
    """

    variable: str
    K: int
    target_dates: tuple[dt.date, ...]
    values: np.ndarray  # (time, lat, lon, K)
    grid: GridSpec
    lead_days: int | None = None
    provenance: str = "custom"

    def __post_init__(self):
        _check_variable(self.variable)
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        object.__setattr__(self, "target_dates", _check_dates(self.target_dates))
        vals = _as_float_array(self.values, "values")
        expected = (len(self.target_dates),) + self.grid.shape + (self.K,)
        if vals.shape != expected:
            raise ValueError(f"cdf shape {vals.shape} != expected {expected}")
        finite = vals[np.isfinite(vals)]
        if finite.size and (finite.min() < 0 or finite.max() > 1):
            raise ValueError("cumulative probabilities must lie in [0, 1]")
        object.__setattr__(self, "values", vals)

    def check_aligned(self, other: "CdfForecast") -> None:
        if self.K != other.K:
            raise AlignmentError(f"bin counts differ: {self.K} != {other.K}")
        if self.target_dates != other.target_dates:
            raise AlignmentError("target date lists differ")
        if self.grid != other.grid:
            raise AlignmentError("grids differ")
        if self.variable != other.variable:
            raise AlignmentError(f"variables differ: {self.variable} != {other.variable}")


def _counting_cdf(values: np.ndarray, q: np.ndarray, K: int) -> np.ndarray:
    """Member-counting CDF for one date: values (M, lat, lon) against
    thresholds q (lat, lon, K-1)."""
    valid = ~np.any(np.isnan(values), axis=0)
    with np.errstate(invalid="ignore"):
        below = values[..., None] < q[None]  # (M, lat, lon, K-1)
    f = np.mean(below, axis=0, dtype=np.float64)
    out = np.empty(q.shape[:-1] + (K,), dtype=np.float64)
    out[..., : K - 1] = f
    out[..., K - 1] = 1.0
    out[~valid] = np.nan
    out[np.isnan(q).any(axis=-1)] = np.nan
    return out


def ensemble_to_cdf(ens: EnsembleField, thr: ThresholdField) -> CdfForecast:
    """Convert an ensemble into a CDF forecast by counting the fraction of
    members strictly below each threshold."""
    if ens.grid != thr.grid:
        raise AlignmentError("ensemble and threshold grids differ")
    if ens.members < 1:
        raise ValueError("ensemble has no members")
    K = thr.K
    out = np.empty((len(ens.target_dates),) + ens.grid.shape + (K,), dtype=np.float64)
    for i, t in enumerate(ens.target_dates):
        q = thr.row(t)
        if q is None:
            raise AlignmentError(f"no thresholds for target date {t}")
        out[i] = _counting_cdf(ens.values[i].astype(np.float64), q, K)
    return CdfForecast(
        ens.variable, K, ens.target_dates, out, ens.grid,
        lead_days=ens.lead_days, provenance="raw",
    )


def debiased_baseline(
    forecast: EnsembleField,
    hindcasts,
    K: int = DEFAULT_K,
) -> CdfForecast:
    """The operational debiased baseline: the ensemble counted against its
    own hindcast-derived (model) quantile thresholds."""
    thr = model_thresholds(hindcasts, forecast.target_dates, forecast.lead_days, K)
    cdf = ensemble_to_cdf(forecast, thr)
    return CdfForecast(
        cdf.variable, cdf.K, cdf.target_dates, cdf.values, cdf.grid,
        lead_days=cdf.lead_days, provenance="debiased",
    )


def hindcast_to_training_cdfs(hindcasts, thresholds_by_offset) -> list[CdfForecast]:
    """Dated training CDFs from hindcast ensembles.

    ``thresholds_by_offset(offset)`` must return a ThresholdField indexed by
    the hindcast fields' stamped forecast dates; the caller chooses whether
    those hold observed thresholds of the shifted hindcast target dates or
    the forecast dates' model thresholds.  Output forecasts are date-stamped
    at the hindcast target dates (forecast date minus the year offset); dates
    without a valid shift or thresholds are skipped with a logged gap.
    An offset of 0 or None reduces to plain ensemble-to-CDF conversion.
    """
    out = []
    for h in hindcasts:
        delta = h.hindcast_year_offset or 0
        thr = thresholds_by_offset(delta)
        if thr.grid != h.grid:
            raise AlignmentError("hindcast and threshold grids differ")
        K = thr.K
        dates, rows = [], []
        for i, t in enumerate(h.target_dates):
            stamped = t if delta == 0 else shift_years(t, delta)
            q = thr.row(t)
            if stamped is None or q is None or stamped in dates:
                log.warning("skipping hindcast date %s at offset %d: gap", t, delta)
                continue
            dates.append(stamped)
            rows.append(_counting_cdf(h.values[i].astype(np.float64), q, K))
        if not dates:
            continue
        out.append(
            CdfForecast(
                h.variable, K, tuple(dates), np.stack(rows), h.grid,
                lead_days=h.lead_days, provenance="raw",
            )
        )
    return out
