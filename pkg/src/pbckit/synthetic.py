"""Synthetic-weather generator with injectable systematic bias.

Observations are a seasonal sine cycle plus lag-1 autoregressive daily noise,
aggregated to weekly periods.  Ensemble members add a configurable per-cell,
per-day-of-year offset and inflated member noise on top of the truth, so
correction skill can be verified at desk scale with known ground truth.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .grids import WEEK_LENGTH, EnsembleField, GridSpec, ObservationField, shift_years

#: Minimum years: a 20-year climatology plus 3 tuning years.
MIN_YEARS = 23


@dataclass(frozen=True)
class BiasProfile:
    """Additive per-cell, per-day-of-year member offset plus a member-noise
    inflation factor.  ``offset`` may be a scalar, a (nlat, nlon) array, or a
    callable day_of_year -> scalar or (nlat, nlon) array."""

    offset: object = 0.0
    spread_inflation: float = 1.0

    def offset_for(self, date: dt.date, grid: GridSpec) -> np.ndarray:
        off = self.offset
        if callable(off):
            off = off(date.timetuple().tm_yday)
        return np.broadcast_to(np.asarray(off, dtype=np.float64), grid.shape)


ZERO_BIAS = BiasProfile()


def synthetic_grid(nlat: int = 10, nlon: int = 20) -> GridSpec:
    """Small test grid with a fixed checkerboard-plus-bands land pattern."""
    lat = np.linspace(75.0, -75.0, nlat)
    lon = np.arange(nlon) * (360.0 / nlon)
    ii, jj = np.meshgrid(np.arange(nlat), np.arange(nlon), indexing="ij")
    land = ((ii + jj) % 2).astype(np.float64)
    land[ii % 4 == 0] = 1.0  # solid land bands
    land[ii % 4 == 2] = 0.25  # mostly-ocean bands, below the 50% cut
    return GridSpec(lat, lon, land)


def _ar1_noise(rng, n_days: int, shape, coeff: float) -> np.ndarray:
    eps = rng.standard_normal((n_days,) + shape)
    out = np.empty_like(eps)
    out[0] = eps[0]
    scale = np.sqrt(1.0 - coeff**2)
    for i in range(1, n_days):
        out[i] = coeff * out[i - 1] + scale * eps[i]
    return out


def generate_synthetic_world(
    seed: int,
    grid: GridSpec,
    years: int,
    bias_profile: BiasProfile = ZERO_BIAS,
    *,
    members: int = 11,
    hindcast_members: int = 11,
    member_noise: float = 1.0,
    lead_days: int = 19,
    forecast_weekdays=(0, 4),
    hindcast_years: int = 20,
    start_year: int = 2000,
    variable: str = "temperature",
    ar_coeff: float = 0.97,
    noise_std: float = 3.0,
    seasonal_amplitude: float = 8.0,
    base_value: float = 280.0,
):
    """Build a deterministic synthetic world.

    Returns ``(observations, forecasts, hindcasts)``: daily-issued weekly
    observations over the full span, forecast ensembles for every
    ``forecast_weekdays`` target date after the first ``hindcast_years``
    climatology years, and one hindcast ensemble per year offset 1..20
    stamped by the forecast target dates.
    """
    if years < MIN_YEARS:
        raise ValueError(f"need at least {MIN_YEARS} years, got {years}")
    rng = np.random.default_rng(seed)

    first = dt.date(start_year, 1, 1)
    last = dt.date(start_year + years, 1, 1) - dt.timedelta(days=1)
    n_days = (last - first).days + 1 + (WEEK_LENGTH - 1)

    anomalies = _ar1_noise(rng, n_days, grid.shape, ar_coeff)

    # Phase-lock the seasonal cycle to the day of year so month-day matched
    # climatology windows see the same phase in every year.
    doy = np.array([
        (first + dt.timedelta(days=int(i))).timetuple().tm_yday for i in range(n_days)
    ])
    phase = np.deg2rad(grid.longitudes)[None, None, :]
    amp = seasonal_amplitude * (0.5 + 0.5 * np.abs(np.sin(np.deg2rad(grid.latitudes))))
    cycle = np.sin(2.0 * np.pi * doy[:, None, None] / 365.25 + phase)
    daily = base_value + amp[None, :, None] * cycle + noise_std * anomalies

    # Weekly aggregates for the period [t, t+6]: precipitation sums,
    # temperature and pressure average.
    csum = np.cumsum(daily, axis=0)
    weekly = csum[WEEK_LENGTH - 1 :].copy()
    weekly[1:] -= csum[: -WEEK_LENGTH]
    if variable != "precipitation":
        weekly /= WEEK_LENGTH

    obs_dates = tuple(first + dt.timedelta(days=int(i)) for i in range(weekly.shape[0]))
    obs = ObservationField(variable, obs_dates, weekly, grid)

    fc_start_year = start_year + hindcast_years
    fc_dates = [d for d in obs_dates if d.year >= fc_start_year and d.weekday() in forecast_weekdays]
    date_row = {d: i for i, d in enumerate(obs_dates)}

    def _ensemble_values(dates, m):
        vals = np.empty((len(dates), m) + grid.shape)
        noise = rng.standard_normal(vals.shape)
        for i, d in enumerate(dates):
            truth = weekly[date_row[d]]
            off = bias_profile.offset_for(d, grid)
            vals[i] = truth + off + bias_profile.spread_inflation * member_noise * noise[i]
        return vals

    forecasts = EnsembleField(
        variable, lead_days, tuple(fc_dates), _ensemble_values(fc_dates, members), grid
    )

    hindcasts = []
    for delta in range(1, hindcast_years + 1):
        # Feb 29 forecast dates map to Feb 28 in non-leap hindcast years.
        shifted = [
            shift_years(d, delta) or dt.date(d.year - delta, 2, 28) for d in fc_dates
        ]
        vals = _ensemble_values(shifted, hindcast_members)
        hindcasts.append(
            EnsembleField(
                variable, lead_days, tuple(fc_dates), vals, grid,
                hindcast_year_offset=delta,
            )
        )
    return obs, forecasts, hindcasts
