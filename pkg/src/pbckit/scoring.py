"""Verification metrics: ranked probability (skill) scores, Brier skill
scores for quintile extremes, probabilistic bias maps, seasonal/regional
stratification, and bootstrap confidence intervals.

All skill scores compare cosine-latitude-weighted sums against the uniform
climatological forecast that assigns probability k/K to each cumulative bin.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
from dataclasses import dataclass, field

import numpy as np

from .cdf import CdfForecast
from .climatology import IndicatorField, ThresholdField, arid_mask
from .grids import AlignmentError, GridSpec

SEASONS = {
    "DJF": (12, 1, 2),
    "MAM": (3, 4, 5),
    "JJA": (6, 7, 8),
    "SON": (9, 10, 11),
}

#: Named latitude/longitude boxes (lat_min, lat_max, lon_min, lon_max).
DEFAULT_REGIONS = {
    "globe": (-90.0, 90.0, 0.0, 360.0),
    "tropics": (-23.5, 23.5, 0.0, 360.0),
    "northern_extratropics": (23.5, 90.0, 0.0, 360.0),
    "southern_extratropics": (-90.0, -23.5, 0.0, 360.0),
}

BOOTSTRAP_REPLICATES = 5000


@dataclass(frozen=True)
class EvalMask:
    """Per-date cell inclusion for scoring, shape (time, lat, lon).

    Temperature and precipitation require at least 50% land coverage;
    precipitation additionally excludes arid cells on their arid dates.
    """

    included: np.ndarray
    land_required: bool
    arid_excluded: bool
    bbox: tuple[float, float, float, float] | None = None

    def for_date(self, i: int) -> np.ndarray:
        return self.included[i]


def evaluation_mask(
    grid: GridSpec,
    variable: str,
    n_dates: int,
    thresholds: ThresholdField | None = None,
    bbox: tuple[float, float, float, float] | None = None,
) -> EvalMask:
    """Build the standard evaluation mask for a variable.

    ``thresholds`` (observed climatological thresholds at the scored dates)
    are required for precipitation so arid cells can be excluded per date.
    """
    base = np.ones(grid.shape, dtype=bool)
    land_required = variable in ("temperature", "precipitation")
    if land_required:
        base &= grid.land_fraction >= 0.5
    if bbox is not None:
        base &= bbox_mask(grid, bbox)
    included = np.broadcast_to(base, (n_dates,) + grid.shape).copy()
    arid_excluded = variable == "precipitation"
    if arid_excluded:
        if thresholds is None:
            raise ValueError("precipitation masks need thresholds to exclude arid cells")
        if len(thresholds.target_dates) != n_dates:
            raise AlignmentError("threshold dates do not match the scored dates")
        included &= ~arid_mask(thresholds)
    return EvalMask(included, land_required, arid_excluded, bbox)


def bbox_mask(grid: GridSpec, bbox) -> np.ndarray:
    """Cells whose centers fall inside a closed lat/lon box; the longitude
    interval wraps modulo 360 when lon_min > lon_max."""
    lat_min, lat_max, lon_min, lon_max = bbox
    lat_ok = (grid.latitudes >= lat_min) & (grid.latitudes <= lat_max)
    lon = np.mod(grid.longitudes, 360.0)
    if lon_min <= lon_max:
        lon_ok = (lon >= lon_min) & (lon <= lon_max)
    else:
        lon_ok = (lon >= lon_min) | (lon <= lon_max)
    return lat_ok[:, None] & lon_ok[None, :]


def _check_pair(f: CdfForecast, o: IndicatorField) -> None:
    if f.K != o.K:
        raise AlignmentError(f"bin counts differ: {f.K} != {o.K}")
    if f.target_dates != o.target_dates:
        raise AlignmentError("forecast and indicator dates differ")
    if f.grid != o.grid:
        raise AlignmentError("forecast and indicator grids differ")


def rps(f: CdfForecast, o: IndicatorField) -> np.ndarray:
    """Ranked probability score per (date, cell): the sum over all K
    cumulative bins of the squared probability error."""
    _check_pair(f, o)
    return np.sum((f.values - o.values) ** 2, axis=-1)


def climatological_rps(o: IndicatorField) -> np.ndarray:
    """RPS of the uniform climatological forecast F(k) = k/K."""
    clim = np.arange(1, o.K + 1, dtype=np.float64) / o.K
    return np.sum((clim - o.values) ** 2, axis=-1)


def _skill_ratio(num: np.ndarray, den: np.ndarray) -> float:
    if den == 0:
        return np.nan
    return 1.0 - num / den


def _weighted_sums(score, baseline, weights, mask):
    valid = np.isfinite(score) & np.isfinite(baseline) & mask
    w = np.where(valid, weights, 0.0)
    return np.sum(w * np.where(valid, score, 0.0)), np.sum(w * np.where(valid, baseline, 0.0))


def rpss_global(
    f: CdfForecast,
    o: IndicatorField,
    grid: GridSpec | None = None,
    mask: EvalMask | None = None,
) -> np.ndarray:
    """Per-date global RPSS: one minus the ratio of cosine-latitude-weighted
    RPS sums for the forecast and the climatological baseline."""
    grid = grid or f.grid
    score, baseline = rps(f, o), climatological_rps(o)
    weights = grid.cell_weights
    out = np.empty(score.shape[0])
    for i in range(score.shape[0]):
        m = mask.for_date(i) if mask is not None else np.ones(grid.shape, dtype=bool)
        if not m.any():
            raise ValueError("evaluation mask excludes every cell")
        num, den = _weighted_sums(score[i], baseline[i], weights, m)
        out[i] = _skill_ratio(num, den)
    return out


def rpss_spatial(f: CdfForecast, o: IndicatorField, mask: EvalMask | None = None) -> np.ndarray:
    """Per-cell RPSS over the date set, NaN where no dates contribute."""
    score, baseline = rps(f, o), climatological_rps(o)
    valid = np.isfinite(score) & np.isfinite(baseline)
    if mask is not None:
        valid &= mask.included
    num = np.sum(np.where(valid, score, 0.0), axis=0)
    den = np.sum(np.where(valid, baseline, 0.0), axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = 1.0 - num / den
    out[den == 0] = np.nan
    out[~valid.any(axis=0)] = np.nan
    return out


def rpss_aggregated(
    f: CdfForecast,
    o: IndicatorField,
    grid: GridSpec | None = None,
    mask: EvalMask | None = None,
) -> float:
    """Period-aggregated RPSS: a single skill ratio with the weighted sums
    running over both dates and cells."""
    grid = grid or f.grid
    score, baseline = rps(f, o), climatological_rps(o)
    weights = grid.cell_weights
    num = den = 0.0
    for i in range(score.shape[0]):
        m = mask.for_date(i) if mask is not None else np.ones(grid.shape, dtype=bool)
        a, b = _weighted_sums(score[i], baseline[i], weights, m)
        num += a
        den += b
    return _skill_ratio(num, den)


def brier_scores(f: CdfForecast, o: IndicatorField, which: str = "top"):
    """Per-(date, cell) Brier score and its climatological baseline for the
    top (k = K-1) or bottom (k = 1) quintile-bin event."""
    _check_pair(f, o)
    if which == "top":
        k, p_clim = f.K - 2, (f.K - 1) / f.K
    elif which == "bottom":
        k, p_clim = 0, 1.0 / f.K
    else:
        raise ValueError(f"extreme bin must be 'top' or 'bottom', not {which!r}")
    bs = (f.values[..., k] - o.values[..., k]) ** 2
    baseline = (p_clim - o.values[..., k]) ** 2
    return bs, baseline


def bss_extreme(
    f: CdfForecast,
    o: IndicatorField,
    grid: GridSpec | None = None,
    mask: EvalMask | None = None,
    which: str = "top",
) -> np.ndarray:
    """Per-date Brier skill score for the extreme-bin event, weighted and
    skill-scored exactly as RPSS."""
    grid = grid or f.grid
    bs, baseline = brier_scores(f, o, which)
    weights = grid.cell_weights
    out = np.empty(bs.shape[0])
    for i in range(bs.shape[0]):
        m = mask.for_date(i) if mask is not None else np.ones(grid.shape, dtype=bool)
        if not m.any():
            raise ValueError("evaluation mask excludes every cell")
        num, den = _weighted_sums(bs[i], baseline[i], weights, m)
        out[i] = _skill_ratio(num, den)
    return out


def bias_map(f: CdfForecast, o: IndicatorField) -> np.ndarray:
    """Probabilistic bias per (cell, k): the date-mean of F(k) - O(k)."""
    _check_pair(f, o)
    with np.errstate(invalid="ignore"):
        return np.nanmean(f.values - o.values, axis=0)


def bootstrap_ci(
    per_date_scores,
    replicates: int = BOOTSTRAP_REPLICATES,
    level: float = 0.95,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile bootstrap CI for the mean of a per-date score series,
    resampling dates with replacement.  Deterministic given the seed."""
    scores = np.asarray(per_date_scores, dtype=np.float64)
    scores = scores[np.isfinite(scores)]
    if scores.size == 0:
        return (np.nan, np.nan)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, scores.size, size=(replicates, scores.size))
    means = scores[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.percentile(means, [100.0 * alpha, 100.0 * (1.0 - alpha)])
    return float(lo), float(hi)


@dataclass
class ScoreReport:
    """One scored metric with its per-date series and optional CI."""

    metric: str
    value: float
    per_date: dict[dt.date, float] = field(default_factory=dict)
    season: str | None = None
    region: str | None = None
    ci: tuple[float, float] | None = None

    @property
    def n_dates(self) -> int:
        return len(self.per_date)

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "value": None if np.isnan(self.value) else self.value,
            "season": self.season,
            "region": self.region,
            "ci": list(self.ci) if self.ci is not None else None,
            "n_dates": self.n_dates,
            "per_date": {
                d.isoformat(): (None if np.isnan(v) else v) for d, v in self.per_date.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def write_reports_csv(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "season", "region", "value", "ci_lo", "ci_hi", "n_dates"])
        for r in reports:
            lo, hi = r.ci if r.ci is not None else ("", "")
            writer.writerow([r.metric, r.season or "", r.region or "", r.value, lo, hi, r.n_dates])


def season_of(date: dt.date) -> str:
    for name, months in SEASONS.items():
        if date.month in months:
            return name
    raise AssertionError("unreachable")


def stratify(
    f: CdfForecast,
    o: IndicatorField,
    grid: GridSpec | None = None,
    mask: EvalMask | None = None,
    *,
    metric: str = "rpss",
    seasons=tuple(SEASONS),
    regions: dict | None = None,
    with_ci: bool = True,
    seed: int = 0,
) -> list[ScoreReport]:
    """Score by season and by named lat/lon region.

    Season strata subset the date list by the month of the period start;
    region strata intersect the evaluation mask with the region's bounding
    box.  The all-dates/globe stratum equals the unstratified score.
    """
    grid = grid or f.grid
    regions = DEFAULT_REGIONS if regions is None else regions
    if metric == "rpss":
        score_fn = lambda msk: rpss_global(f, o, grid, msk)
    elif metric in ("bss_top", "bss_bottom"):
        which = metric.split("_")[1]
        score_fn = lambda msk: bss_extreme(f, o, grid, msk, which=which)
    else:
        raise ValueError(f"unknown metric {metric!r}")

    reports = []
    n = len(f.target_dates)
    base_included = (
        mask.included if mask is not None else np.ones((n,) + grid.shape, dtype=bool)
    )

    def _make(series, series_idx, season, region):
        per_date = {f.target_dates[i]: series[i] for i in series_idx}
        vals = np.array(list(per_date.values()), dtype=np.float64)
        vals = vals[np.isfinite(vals)]
        value = float(vals.mean()) if vals.size else np.nan
        ci = bootstrap_ci(vals, seed=seed) if with_ci and vals.size else None
        return ScoreReport(metric, value, per_date, season, region, ci)

    for region, bbox in regions.items():
        box = bbox_mask(grid, bbox)
        msk = EvalMask(base_included & box, False, False, bbox)
        if not msk.included.any():
            continue
        series = score_fn(msk)
        reports.append(_make(series, range(n), None, region))
        for season in seasons:
            idx = [i for i, d in enumerate(f.target_dates) if season_of(d) == season]
            if not idx:
                continue
            reports.append(_make(series, idx, season, region))
    return reports
