"""Flood-event catalog client and the per-event Brier-skill evaluation.

The catalog client is transport-abstracted: pass any ``transport(url) ->
response text`` callable and the whole suite runs offline against captured
JSON fixtures.  Responses are cached raw on disk, so warm re-runs issue no
network calls.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cdf import CdfForecast
from .climatology import IndicatorField, ThresholdField, arid_mask
from .grids import WEEK_LENGTH, GridSpec
from .scoring import EvalMask, bbox_mask, bss_extreme

log = logging.getLogger(__name__)

GDACS_URL = (
    "https://www.gdacs.org/gdacsapi/api/events/geteventlist/SEARCH"
    "?eventlist=FL&fromDate={start}&toDate={end}"
)

ALERT_LEVELS = ("Green", "Orange", "Red")

BBOX_HALF_WIDTH = 10.0


@dataclass(frozen=True)
class FloodEvent:
    event_id: str
    latitude: float
    longitude: float
    start_date: dt.date
    alert_level: str

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        """(lat_min, lat_max, lon_min, lon_max): +-10 degrees around the
        centroid, clamped in latitude, wrapping modulo 360 in longitude."""
        lat_min = max(-90.0, self.latitude - BBOX_HALF_WIDTH)
        lat_max = min(90.0, self.latitude + BBOX_HALF_WIDTH)
        lon_min = (self.longitude - BBOX_HALF_WIDTH) % 360.0
        lon_max = (self.longitude + BBOX_HALF_WIDTH) % 360.0
        return (lat_min, lat_max, lon_min, lon_max)

    @property
    def target_period(self) -> tuple[dt.date, dt.date]:
        return (self.start_date, self.start_date + dt.timedelta(days=WEEK_LENGTH - 1))


def requests_transport(url: str, retries: int = 3, backoff: float = 2.0) -> str:
    """Live HTTP transport with simple retry/backoff."""
    import requests

    last_exc = None
    for attempt in range(retries):
        try:
            resp = requests.get(url, timeout=60)
            resp.raise_for_status()
            return resp.text
        except requests.RequestException as exc:  # pragma: no cover - network
            last_exc = exc
            time.sleep(backoff * (attempt + 1))
    raise last_exc


def _parse_date(text: str) -> dt.date:
    return dt.date.fromisoformat(str(text)[:10])


def parse_event_list(payload: str) -> list[FloodEvent]:
    """Parse a catalog response (GeoJSON feature collection).  Records that
    fail to parse are skipped with a logged warning; non-flood event types
    are dropped."""
    doc = json.loads(payload)
    events = []
    for feature in doc.get("features", []):
        try:
            props = feature["properties"]
            if props.get("eventtype") != "FL":
                continue
            lon, lat = feature["geometry"]["coordinates"][:2]
            events.append(
                FloodEvent(
                    event_id=str(props["eventid"]),
                    latitude=float(lat),
                    longitude=float(lon),
                    start_date=_parse_date(props["fromdate"]),
                    alert_level=str(props.get("alertlevel", "Green")),
                )
            )
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            log.warning("skipping malformed event record: %s", exc)
    return events


def fetch_events(year_range, cache_dir, transport=None) -> list[FloodEvent]:
    """Flood events for the given years, one cached raw response per year.

    With a warm cache no transport calls are made; with a cold cache and no
    working transport this raises.
    """
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    transport = transport or requests_transport
    events = []
    for year in year_range:
        cache_file = cache_dir / f"gdacs_FL_{year}.json"
        if cache_file.exists():
            payload = cache_file.read_text()
        else:
            payload = transport(GDACS_URL.format(start=f"{year}-01-01", end=f"{year}-12-31"))
            cache_file.write_text(payload)
        parsed = parse_event_list(payload)
        seen = {e.event_id for e in events}
        events.extend(e for e in parsed if e.event_id not in seen)
    return events


def filter_by_issuance(events, allowed_weekdays=(0, 4)) -> list[FloodEvent]:
    """Keep only events whose start dates align with the forecast issuance
    schedule (default Monday and Friday)."""
    allowed = set(allowed_weekdays)
    return [e for e in events if e.start_date.weekday() in allowed]


def _slice_date(field, date: dt.date):
    i = field.date_index.get(date)
    if i is None:
        raise ValueError(f"no data for event target date {date}")
    return i


def flood_bss(
    event: FloodEvent,
    f: CdfForecast,
    o: IndicatorField,
    grid: GridSpec | None = None,
    thresholds: ThresholdField | None = None,
) -> float:
    """Brier skill score for the top precipitation bin over the event's
    bounding box at its start-date target period."""
    grid = grid or f.grid
    i = _slice_date(f, event.start_date)
    j = _slice_date(o, event.start_date)
    f1 = CdfForecast(
        f.variable, f.K, (event.start_date,), f.values[i : i + 1], grid,
        lead_days=f.lead_days, provenance=f.provenance,
    )
    o1 = IndicatorField(o.variable, o.K, (event.start_date,), o.values[j : j + 1], grid)
    base = bbox_mask(grid, event.bbox)
    if f.variable in ("temperature", "precipitation"):
        base &= grid.land_fraction >= 0.5
    included = base[None].copy()
    if thresholds is not None and f.variable == "precipitation":
        k = _slice_date(thresholds, event.start_date)
        included &= ~arid_mask(thresholds)[k : k + 1]
    mask = EvalMask(included, f.variable != "mslp", thresholds is not None, event.bbox)
    if not mask.included.any():
        raise ValueError(f"no grid cells inside the bounding box of event {event.event_id}")
    return float(bss_extreme(f1, o1, grid, mask, which="top")[0])


def events_to_csv(events, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["event_id", "latitude", "longitude", "start_date", "alert_level"])
        for e in events:
            writer.writerow([e.event_id, e.latitude, e.longitude, e.start_date.isoformat(), e.alert_level])
