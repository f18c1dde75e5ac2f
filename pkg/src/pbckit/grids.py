"""Grid definition, calendar arithmetic, and the core gridded field types.

All fields are immutable after construction and index their values with the
fixed dimension order (time, member?, lat, lon).  Dates are plain
``datetime.date`` objects (proleptic Gregorian); ``date.toordinal`` provides
the exact serial-day round trip used throughout.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

VARIABLES = ("temperature", "precipitation", "mslp")

UNITS = {"temperature": "K", "precipitation": "mm/week", "mslp": "Pa"}

#: Length of the weekly target period, in days.
WEEK_LENGTH = 7

#: Mean days per year used for day-of-year distance arithmetic.
DAYS_PER_YEAR = 365.242199


class AlignmentError(ValueError):
    """Two fields that must share dates/grid/bins do not."""


def parse_date(text: str) -> dt.date:
    return dt.date.fromisoformat(text)


def shift_years(d: dt.date, years_back: int) -> dt.date | None:
    """Same month-day ``years_back`` years earlier, or None if it does not
    exist (Feb 29 outside leap years)."""
    try:
        return d.replace(year=d.year - years_back)
    except ValueError:
        return None


def day_of_year_distance(t_star: dt.date, t: dt.date) -> tuple[int, float]:
    """Whole-year and wrapped day-of-year separation between a target date
    ``t_star`` and an earlier date ``t``.

    Returns ``(year_diff, day_diff)`` where ``year_diff`` counts whole mean
    years between the dates and ``day_diff`` measures how far ``t`` sits from
    the same day of year as ``t_star``, wrapping around year boundaries.
    """
    diff = (t_star - t).days
    if diff <= 0:
        raise ValueError(f"t must precede t_star, got t={t}, t_star={t_star}")
    year_diff = int(diff // DAYS_PER_YEAR)
    rem = math.floor(diff % DAYS_PER_YEAR)
    day_diff = 365.0 / 2.0 - abs(rem - 365.0 / 2.0)
    return year_diff, day_diff


def _as_float_array(values, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    else:
        arr = arr.copy()
    arr.flags.writeable = False
    return arr


def _check_variable(variable: str) -> None:
    if variable not in VARIABLES:
        raise ValueError(f"unknown variable {variable!r}, expected one of {VARIABLES}")


@dataclass(frozen=True)
class GridSpec:
    """A rectilinear lat/lon grid with per-cell land fraction.

    Cell weights are cos(latitude), which down-weights polar cells in all
    area-weighted scores.
    """

    latitudes: np.ndarray
    longitudes: np.ndarray
    land_fraction: np.ndarray

    def __post_init__(self):
        lat = np.array(self.latitudes, dtype=np.float64)
        lon = np.array(self.longitudes, dtype=np.float64)
        land = np.array(self.land_fraction, dtype=np.float64)
        if lat.ndim != 1 or lon.ndim != 1:
            raise ValueError("latitudes and longitudes must be 1-D")
        dlat = np.diff(lat)
        if not (np.all(dlat > 0) or np.all(dlat < 0)):
            raise ValueError("latitudes must be strictly monotone")
        if lat.min() < -90 or lat.max() > 90:
            raise ValueError("latitudes must lie in [-90, 90]")
        dlon = np.diff(lon)
        if not (np.all(dlon > 0) or np.all(dlon < 0)):
            raise ValueError("longitudes must be strictly monotone")
        if lon.min() < 0 or lon.max() >= 360:
            raise ValueError("longitudes must lie in [0, 360)")
        if land.shape != (lat.size, lon.size):
            raise ValueError("land_fraction must have shape (nlat, nlon)")
        if np.nanmin(land) < 0 or np.nanmax(land) > 1:
            raise ValueError("land_fraction must lie in [0, 1]")
        for name, arr in (("latitudes", lat), ("longitudes", lon), ("land_fraction", land)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def nlat(self) -> int:
        return self.latitudes.size

    @property
    def nlon(self) -> int:
        return self.longitudes.size

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nlat, self.nlon)

    @cached_property
    def cell_weights(self) -> np.ndarray:
        """cos(latitude) weights broadcast to the full grid, all >= 0."""
        w = np.cos(np.deg2rad(self.latitudes))
        w = np.clip(w, 0.0, None)
        out = np.broadcast_to(w[:, None], self.shape).copy()
        out.flags.writeable = False
        return out

    def __eq__(self, other):
        if not isinstance(other, GridSpec):
            return NotImplemented
        return (
            np.array_equal(self.latitudes, other.latitudes)
            and np.array_equal(self.longitudes, other.longitudes)
            and np.array_equal(self.land_fraction, other.land_fraction, equal_nan=True)
        )

    @classmethod
    def default(cls) -> "GridSpec":
        """The global 1.5-degree grid (121 x 240), all-land by default."""
        lat = np.arange(90.0, -90.0 - 0.75, -1.5)
        lon = np.arange(0.0, 360.0, 1.5)
        return cls(lat, lon, np.ones((lat.size, lon.size)))


def _check_dates(dates) -> tuple[dt.date, ...]:
    out = tuple(dates)
    for d in out:
        if not isinstance(d, dt.date):
            raise TypeError(f"target dates must be datetime.date, got {type(d)}")
    if len(set(out)) != len(out):
        raise ValueError("target dates must be unique")
    return out


class _DatedField:
    """Mixin for fields indexed by target date along axis 0."""

    @cached_property
    def date_index(self) -> dict:
        return {d: i for i, d in enumerate(self.target_dates)}

    def row(self, date: dt.date) -> np.ndarray | None:
        """Values for one target date, or None if the date is absent."""
        i = self.date_index.get(date)
        return None if i is None else self.values[i]

    def __contains__(self, date: dt.date) -> bool:
        return date in self.date_index


@dataclass(frozen=True, eq=False)
class EnsembleField(_DatedField):
    """Member-indexed deterministic forecasts, shape (time, member, lat, lon).

    When ``hindcast_year_offset`` is set the values are hindcasts stamped by
    the *forecast* target date; the actual hindcast target date sits
    ``hindcast_year_offset`` years earlier.
    """

    variable: str
    lead_days: int
    target_dates: tuple[dt.date, ...]
    values: np.ndarray
    grid: GridSpec
    hindcast_year_offset: int | None = None

    def __post_init__(self):
        _check_variable(self.variable)
        object.__setattr__(self, "target_dates", _check_dates(self.target_dates))
        vals = _as_float_array(self.values, "values")
        if vals.ndim != 4:
            raise ValueError("ensemble values must be (time, member, lat, lon)")
        expected = (len(self.target_dates), vals.shape[1]) + self.grid.shape
        if vals.shape != expected:
            raise ValueError(f"values shape {vals.shape} != expected {expected}")
        if vals.shape[1] < 1:
            raise ValueError("ensemble must have at least one member")
        if self.hindcast_year_offset is not None and self.hindcast_year_offset < 1:
            raise ValueError("hindcast_year_offset must be >= 1")
        object.__setattr__(self, "values", vals)

    @property
    def members(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class ObservationField(_DatedField):
    """Week-long aggregate observations, shape (time, lat, lon).

    Each value covers the 7-day period beginning at its target date.  Missing
    values are NaN in the array; ``get`` maps them to None at the boundary.
    """

    variable: str
    target_dates: tuple[dt.date, ...]
    values: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        _check_variable(self.variable)
        object.__setattr__(self, "target_dates", _check_dates(self.target_dates))
        vals = _as_float_array(self.values, "values")
        expected = (len(self.target_dates),) + self.grid.shape
        if vals.shape != expected:
            raise ValueError(f"values shape {vals.shape} != expected {expected}")
        object.__setattr__(self, "values", vals)

    def get(self, date: dt.date, ilat: int, ilon: int) -> float | None:
        row = self.row(date)
        if row is None:
            return None
        v = row[ilat, ilon]
        return None if np.isnan(v) else float(v)

    def restrict(self, keep) -> "ObservationField":
        """Sub-field containing only the dates for which ``keep(date)`` holds."""
        idx = [i for i, d in enumerate(self.target_dates) if keep(d)]
        return ObservationField(
            self.variable,
            tuple(self.target_dates[i] for i in idx),
            self.values[idx],
            self.grid,
        )
