import datetime as dt
import json

import numpy as np
import pytest

from pbckit.grids import GridSpec


@pytest.fixture
def flat_grid():
    """Two-cell equatorial grid with unit weights everywhere."""
    return GridSpec(np.array([0.0]), np.array([0.0, 180.0]), np.ones((1, 2)))


@pytest.fixture
def small_grid():
    lats = np.array([60.0, 30.0, 0.0, -30.0])
    lons = np.array([0.0, 90.0, 180.0, 270.0])
    land = np.array(
        [
            [1.0, 1.0, 0.0, 1.0],
            [1.0, 0.25, 1.0, 1.0],
            [0.75, 1.0, 1.0, 0.0],
            [1.0, 1.0, 0.5, 1.0],
        ]
    )
    return GridSpec(lats, lons, land)


def monotone_cdf(rng, shape, K=5):
    """Random valid cumulative forecasts: sorted uniforms with F(K) = 1."""
    v = np.sort(rng.random(shape + (K,)), axis=-1)
    v[..., -1] = 1.0
    return v


def monotone_indicators(rng, shape, K=5):
    """Random valid 0/1 cumulative indicators with O(K) = 1."""
    kth = rng.integers(0, K, size=shape)
    v = (np.arange(K) >= kth[..., None]).astype(np.float64)
    return v


def _weekday_dates(year, weekdays):
    d = dt.date(year, 1, 1)
    out = []
    while d.year == year:
        if d.weekday() in weekdays:
            out.append(d)
        d += dt.timedelta(days=1)
    return out


def make_flood_payload(year, n_scheduled, n_offschedule=7, n_other_type=5,
                       n_malformed=2):
    """GeoJSON flood-catalog fixture with exactly ``n_scheduled`` flood events
    starting on Mondays/Fridays, plus off-schedule floods, non-flood events,
    and malformed records."""
    rng = np.random.default_rng(year)
    features = []
    eid = year * 10000
    scheduled = _weekday_dates(year, (0, 4))
    levels = ("Green", "Orange", "Red")
    for i in range(n_scheduled):
        d = scheduled[i % len(scheduled)]
        eid += 1
        features.append({
            "properties": {
                "eventtype": "FL",
                "eventid": eid,
                "fromdate": f"{d.isoformat()}T00:00:00",
                "alertlevel": levels[i % 3],
            },
            "geometry": {
                "coordinates": [
                    round(float(rng.uniform(-180, 180)), 3),
                    round(float(rng.uniform(-60, 75)), 3),
                ]
            },
        })
    offschedule = _weekday_dates(year, (1, 2, 3, 5, 6))
    for i in range(n_offschedule):
        eid += 1
        features.append({
            "properties": {
                "eventtype": "FL",
                "eventid": eid,
                "fromdate": offschedule[i].isoformat(),
                "alertlevel": "Green",
            },
            "geometry": {"coordinates": [10.0, 10.0]},
        })
    for i in range(n_other_type):
        eid += 1
        features.append({
            "properties": {
                "eventtype": ("TC", "EQ", "DR")[i % 3],
                "eventid": eid,
                "fromdate": scheduled[i].isoformat(),
                "alertlevel": "Red",
            },
            "geometry": {"coordinates": [20.0, 20.0]},
        })
    for _ in range(n_malformed):
        features.append({"properties": {"eventtype": "FL"}, "geometry": {}})
    return json.dumps({"features": features})


@pytest.fixture
def flood_fixture_dir(tmp_path):
    """Warm flood-catalog cache sized to the expected per-year event counts."""
    counts = {2022: 178, 2023: 166, 2024: 199}
    for year, n in counts.items():
        payload = make_flood_payload(year, n)
        (tmp_path / f"gdacs_FL_{year}.json").write_text(payload)
    return tmp_path, counts
