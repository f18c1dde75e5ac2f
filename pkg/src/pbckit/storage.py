"""On-disk GridStore format: a directory holding meta.json plus one flat
little-endian float32 binary file per array.

meta.json fully determines decoding: grid coordinates, field kind, variable,
units, dimension names and sizes, dtype, and the explicit ISO-8601 date list.
"""

from __future__ import annotations

import datetime as dt
import json
from pathlib import Path

import numpy as np

from .grids import EnsembleField, GridSpec, ObservationField, UNITS

SCHEMA_VERSION = 1
STORE_DTYPE = "<f4"


class StoreError(Exception):
    """Base class for GridStore decode/encode failures."""


class SchemaError(StoreError):
    """meta.json is missing required keys or has inconsistent content."""


class DimensionMismatchError(StoreError):
    """Declared dimensions disagree with each other or with the data."""


class TruncatedFileError(StoreError):
    """A binary array file is shorter or longer than its declared size."""


class UnknownDtypeError(StoreError):
    """meta.json declares a dtype this format does not support."""


_KINDS = ("ensemble", "observation", "threshold", "indicator", "climatology", "cdf")


def _write_array(path: Path, arr: np.ndarray) -> None:
    np.ascontiguousarray(arr, dtype=STORE_DTYPE).tofile(path)


def _read_array(path: Path, sizes) -> np.ndarray:
    expected = int(np.prod(sizes)) * 4
    actual = path.stat().st_size
    if actual != expected:
        raise TruncatedFileError(
            f"{path.name}: expected {expected} bytes for dims {list(sizes)}, found {actual}"
        )
    return np.fromfile(path, dtype=STORE_DTYPE).reshape(sizes)


def _meta_for(field) -> dict:
    from .cdf import CdfForecast
    from .climatology import ClimatologyField, IndicatorField, ThresholdField

    grid = field.grid
    meta = {
        "schema_version": SCHEMA_VERSION,
        "dtype": STORE_DTYPE,
        "grid": {
            "latitudes": grid.latitudes.tolist(),
            "longitudes": grid.longitudes.tolist(),
        },
        "dates": [d.isoformat() for d in field.target_dates],
        "arrays": {"values": "values.f32", "land_fraction": "land_fraction.f32"},
    }
    if isinstance(field, EnsembleField):
        meta.update(
            kind="ensemble",
            variable=field.variable,
            units=UNITS[field.variable],
            lead_days=field.lead_days,
            members=field.members,
            hindcast_year_offset=field.hindcast_year_offset,
            dims={"names": ["time", "member", "lat", "lon"], "sizes": list(field.values.shape)},
        )
    elif isinstance(field, ObservationField):
        meta.update(
            kind="observation",
            variable=field.variable,
            units=UNITS[field.variable],
            dims={"names": ["time", "lat", "lon"], "sizes": list(field.values.shape)},
        )
    elif isinstance(field, ThresholdField):
        meta.update(
            kind="threshold",
            variable=field.variable,
            units=UNITS[field.variable],
            K=field.K,
            source=field.source,
            lead_days=field.lead_days,
            short_window_dates=[d.isoformat() for d in field.short_window_dates],
            dims={"names": ["time", "lat", "lon", "k"], "sizes": list(field.values.shape)},
        )
    elif isinstance(field, IndicatorField):
        meta.update(
            kind="indicator",
            variable=field.variable,
            units="indicator",
            K=field.K,
            dims={"names": ["time", "lat", "lon", "k"], "sizes": list(field.values.shape)},
        )
    elif isinstance(field, ClimatologyField):
        meta.update(
            kind="climatology",
            variable=field.variable,
            units="probability",
            K=field.K,
            dims={"names": ["time", "lat", "lon", "k"], "sizes": list(field.values.shape)},
        )
    elif isinstance(field, CdfForecast):
        meta.update(
            kind="cdf",
            variable=field.variable,
            units="probability",
            K=field.K,
            lead_days=field.lead_days,
            provenance=field.provenance,
            dims={"names": ["time", "lat", "lon", "k"], "sizes": list(field.values.shape)},
        )
    else:
        raise TypeError(f"cannot store field of type {type(field)}")
    return meta


def write_store(field, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = _meta_for(field)
    declared = tuple(meta["dims"]["sizes"])
    if declared != field.values.shape:
        raise DimensionMismatchError(f"dims {declared} != values shape {field.values.shape}")
    _write_array(path / "values.f32", field.values)
    _write_array(path / "land_fraction.f32", field.grid.land_fraction)
    with open(path / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_store(path):
    from .cdf import CdfForecast
    from .climatology import ClimatologyField, IndicatorField, ThresholdField

    path = Path(path)
    try:
        with open(path / "meta.json") as fh:
            meta = json.load(fh)
    except FileNotFoundError as exc:
        raise SchemaError(f"no meta.json in {path}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"meta.json does not parse: {exc}") from exc

    for key in ("kind", "dims", "dtype", "dates", "grid", "arrays"):
        if key not in meta:
            raise SchemaError(f"meta.json missing required key {key!r}")
    if meta["dtype"] != STORE_DTYPE:
        raise UnknownDtypeError(f"unsupported dtype {meta['dtype']!r}, expected {STORE_DTYPE!r}")
    kind = meta["kind"]
    if kind not in _KINDS:
        raise SchemaError(f"unknown field kind {kind!r}")

    sizes = meta["dims"]["sizes"]
    names = meta["dims"]["names"]
    if len(sizes) != len(names):
        raise DimensionMismatchError("dims names and sizes disagree in length")
    lat = np.asarray(meta["grid"]["latitudes"], dtype=np.float64)
    lon = np.asarray(meta["grid"]["longitudes"], dtype=np.float64)
    land = _read_array(path / meta["arrays"]["land_fraction"], (lat.size, lon.size))
    grid = GridSpec(lat, lon, land)
    dates = tuple(dt.date.fromisoformat(s) for s in meta["dates"])

    ilat, ilon = names.index("lat"), names.index("lon")
    if (sizes[ilat], sizes[ilon]) != grid.shape:
        raise DimensionMismatchError(
            f"declared lat/lon sizes {(sizes[ilat], sizes[ilon])} != grid shape {grid.shape}"
        )
    if sizes[names.index("time")] != len(dates):
        raise DimensionMismatchError("time dimension disagrees with the date list")

    values = _read_array(path / meta["arrays"]["values"], tuple(sizes))
    if kind == "ensemble":
        return EnsembleField(
            meta["variable"], meta["lead_days"], dates, values, grid,
            hindcast_year_offset=meta.get("hindcast_year_offset"),
        )
    if kind == "observation":
        return ObservationField(meta["variable"], dates, values, grid)
    if kind == "threshold":
        return ThresholdField(
            meta["variable"], meta["K"], dates, values, grid,
            source=meta["source"], lead_days=meta.get("lead_days"),
            short_window_dates=tuple(
                dt.date.fromisoformat(s) for s in meta.get("short_window_dates", [])
            ),
        )
    if kind == "indicator":
        return IndicatorField(meta["variable"], meta["K"], dates, values, grid)
    if kind == "climatology":
        return ClimatologyField(meta["variable"], meta["K"], dates, values, grid)
    return CdfForecast(
        meta["variable"], meta["K"], dates, values, grid,
        lead_days=meta.get("lead_days"), provenance=meta.get("provenance", "custom"),
    )
