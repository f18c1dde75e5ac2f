"""The two learned corrections and adaptive hyperparameter selection.

Both corrections operate per cell and per cumulative bin k = 1..K-1; the top
bin stays fixed at probability 1.  The additive correction shifts the target
forecast by the training-window mean of (observed indicator - forecast
probability); the persistence correction regresses the observed indicator on
an intercept, the rolling climatology, two fully-observable lagged
indicators, and the forecast probability.
"""

from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass

import numpy as np

from .cdf import CdfForecast
from .climatology import ClimatologyField, IndicatorField
from .grids import DAYS_PER_YEAR, WEEK_LENGTH, AlignmentError, day_of_year_distance

log = logging.getLogger(__name__)

#: Relative singular-value cutoff for the minimum-norm least-squares solve.
LSTSQ_RCOND = 1e-10

#: Usable training rows below which the regression falls back to the raw forecast.
MIN_REGRESSION_ROWS = 10

TUNING_LOOKBACK_DAYS = 3 * DAYS_PER_YEAR


@dataclass(frozen=True)
class DebiasConfig:
    """Span of the day-of-year training window and the number of issuance
    dates averaged into the input forecast."""

    span_days: int = 28
    issuance_count: int = 1
    training_years: int = 20
    tuning_lookback_days: float = TUNING_LOOKBACK_DAYS

    def __post_init__(self):
        if not (0 <= self.span_days <= 182):
            raise ValueError("span_days must lie in [0, 182]")
        if self.issuance_count < 1:
            raise ValueError("issuance_count must be >= 1")


CANDIDATE_CONFIGS = (
    DebiasConfig(span_days=14, issuance_count=1),
    DebiasConfig(span_days=28, issuance_count=1),
    DebiasConfig(span_days=35, issuance_count=1),
)

DEFAULT_CONFIG = DebiasConfig(span_days=28, issuance_count=1)


@dataclass(frozen=True)
class DebiasResult:
    forecast: CdfForecast
    #: (lat, lon, K-1) cells/bins whose training selection was empty and
    #: therefore passed the input forecast through unchanged.
    passthrough: np.ndarray
    selected_dates: tuple[dt.date, ...]


@dataclass(frozen=True)
class RegressionWeights:
    """Per-(cell, bin) coefficients [intercept, climatology, lag1, lag2, forecast]."""

    beta: np.ndarray  # (lat, lon, K-1, 5)
    n_rows: np.ndarray  # (lat, lon, K-1) usable training rows
    fallback: np.ndarray  # (lat, lon, K-1) cells that fell back to the raw forecast


@dataclass(frozen=True)
class PersistenceResult:
    forecast: CdfForecast
    weights: RegressionWeights


def _as_target_list(target) -> list[CdfForecast]:
    if isinstance(target, CdfForecast):
        return [target]
    return list(target)


def merge_series(series) -> dict[int, dict[dt.date, np.ndarray]]:
    """Index dated CDF series by (lead, date).  On duplicates the earliest
    listed series wins, so callers put preferred sources first."""
    by_lead: dict[int, dict[dt.date, np.ndarray]] = {}
    for cdf in series:
        bucket = by_lead.setdefault(cdf.lead_days, {})
        for i, d in enumerate(cdf.target_dates):
            bucket.setdefault(d, cdf.values[i])
    return by_lead


def _required_leads(lead_star: int, issuance_count: int) -> list[int]:
    return [lead_star - d + 1 for d in range(1, issuance_count + 1)]


def _mean_forecast(by_lead, leads, date) -> np.ndarray | None:
    rows = []
    for lead in leads:
        row = by_lead.get(lead, {}).get(date)
        if row is None:
            return None
        rows.append(row)
    return np.mean(rows, axis=0) if len(rows) > 1 else rows[0]


def debiaspp(
    target,
    training,
    training_ind: IndicatorField,
    cfg: DebiasConfig,
    *,
    t_star: dt.date | None = None,
) -> DebiasResult:
    """Additive correction of cumulative probabilities.

    ``target`` is the forecast to correct: a CdfForecast holding the target
    date, or a sequence of them (one per required issuance-shifted lead when
    ``cfg.issuance_count > 1``).  ``training`` is the dated historical CDF
    series across leads.  Training dates must already be restricted by the
    caller to observable data.
    """
    targets = _as_target_list(target)
    lead_star = max(t.lead_days for t in targets)
    leads = _required_leads(lead_star, cfg.issuance_count)
    target_by_lead = merge_series(targets)
    if t_star is None:
        dates = {d for t in targets for d in t.target_dates}
        if len(dates) != 1:
            raise ValueError("t_star is required when the target holds several dates")
        (t_star,) = dates
    ref = targets[0]
    K = ref.K
    f_target = _mean_forecast(target_by_lead, leads, t_star)
    if f_target is None:
        raise AlignmentError(f"target forecast missing a required lead at {t_star}")

    by_lead = merge_series(training)
    candidates = sorted(
        set.intersection(*(set(by_lead.get(lead, {})) for lead in leads))
        & set(training_ind.date_index)
    )
    selected, diffs = [], []
    for t in candidates:
        if t >= t_star:
            continue
        year_diff, day_diff = day_of_year_distance(t_star, t)
        if year_diff <= cfg.training_years and day_diff <= cfg.span_days:
            selected.append(t)
            diffs.append(
                training_ind.row(t)[..., : K - 1]
                - _mean_forecast(by_lead, leads, t)[..., : K - 1]
            )
    if not selected:
        log.warning("no training dates selected for %s; passing forecast through", t_star)
        correction = np.zeros(ref.grid.shape + (K - 1,))
        passthrough = np.ones(ref.grid.shape + (K - 1,), dtype=bool)
    else:
        stacked = np.stack(diffs)
        counts = np.sum(np.isfinite(stacked), axis=0)
        with np.errstate(invalid="ignore"):
            correction = np.where(counts > 0, np.nansum(stacked, axis=0), 0.0)
        correction = correction / np.maximum(counts, 1)
        passthrough = counts == 0

    out = np.empty(ref.grid.shape + (K,), dtype=np.float64)
    out[..., : K - 1] = np.clip(f_target[..., : K - 1] + correction, 0.0, 1.0)
    out[..., K - 1] = np.where(np.isnan(f_target[..., K - 1]), np.nan, 1.0)
    forecast = CdfForecast(
        ref.variable, K, (t_star,), out[None], ref.grid,
        lead_days=lead_star, provenance="debias++",
    )
    return DebiasResult(forecast, passthrough, tuple(selected))


def _wrapped_doy_distance_matrix(a_ord: np.ndarray, b_ord: np.ndarray):
    """Vectorized (year_diff, day_diff) for every pair of serial day numbers
    a > b; pairs with a <= b get year_diff -1 and day_diff inf."""
    diff = a_ord[:, None] - b_ord[None, :]
    year_diff = np.floor(diff / DAYS_PER_YEAR).astype(np.int64)
    rem = np.floor(np.mod(diff, DAYS_PER_YEAR))
    day_diff = 365.0 / 2.0 - np.abs(rem - 365.0 / 2.0)
    invalid = diff <= 0
    year_diff[invalid] = -1
    day_diff = np.where(invalid, np.inf, day_diff)
    return year_diff, day_diff


def select_debias_config(
    candidates,
    history_t_star: dt.date,
    lead_days: int,
    training,
    training_ind: IndicatorField,
    *,
    cell_weights: np.ndarray | None = None,
    default: DebiasConfig = DEFAULT_CONFIG,
) -> DebiasConfig:
    """Pick the candidate configuration minimizing mean ranked probability
    score over the tuning lookback preceding the target date.

    Each historical date in the lookback is corrected exactly as ``debiaspp``
    would have at its own issuance time (training restricted to periods fully
    observable then), scored against its observed indicators with
    ``cell_weights`` (cosine-latitude weights restricted to the evaluation
    mask), and averaged.  Ties break toward the smallest span; an empty
    history returns ``default`` with a warning.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("no candidate configurations")
    if len(candidates) == 1:
        return candidates[0]
    by_lead = merge_series(training)
    ref_grid = training_ind.grid
    K = training_ind.K
    if cell_weights is None:
        cell_weights = ref_grid.cell_weights
    w = np.asarray(cell_weights, dtype=np.float64)

    scores = []
    for cfg in candidates:
        leads = _required_leads(lead_days, cfg.issuance_count)
        common = sorted(
            set.intersection(*(set(by_lead.get(lead, {})) for lead in leads))
            & set(training_ind.date_index)
        )
        common = [t for t in common if t < history_t_star]
        if not common:
            scores.append(np.inf)
            continue
        ords = np.array([t.toordinal() for t in common])
        t_star_ord = history_t_star.toordinal()
        lookback = t_star_ord - ords <= cfg.tuning_lookback_days
        hist_idx = np.nonzero(lookback)[0]
        if hist_idx.size == 0:
            scores.append(np.inf)
            continue

        fbar = np.stack([_mean_forecast(by_lead, leads, t) for t in common])
        obs = np.stack([training_ind.row(t) for t in common])
        diff = obs[..., : K - 1] - fbar[..., : K - 1]
        valid = np.isfinite(diff)
        diff0 = np.where(valid, diff, 0.0)

        year_diff, day_diff = _wrapped_doy_distance_matrix(ords[hist_idx], ords)
        observable = (ords[hist_idx][:, None] - ords[None, :]) >= lead_days + WEEK_LENGTH - 1
        sel = (
            observable
            & (year_diff >= 0)
            & (year_diff <= cfg.training_years)
            & (day_diff <= cfg.span_days)
        ).astype(np.float64)

        flat = diff0.reshape(len(common), -1)
        flat_n = valid.reshape(len(common), -1).astype(np.float64)
        corr = sel @ flat
        n = sel @ flat_n
        with np.errstate(invalid="ignore"):
            corr = np.where(n > 0, corr / np.maximum(n, 1.0), 0.0)
        corr = corr.reshape((hist_idx.size,) + diff.shape[1:])

        corrected = np.clip(fbar[hist_idx, ..., : K - 1] + corr, 0.0, 1.0)
        sq = (corrected - obs[hist_idx, ..., : K - 1]) ** 2
        rps = np.sum(sq, axis=-1)  # top-bin term is identically zero
        rps_valid = np.isfinite(rps)
        ww = np.broadcast_to(w, rps.shape) * rps_valid
        denom = ww.sum(axis=(1, 2))
        per_date = np.where(
            denom > 0, np.nansum(ww * np.nan_to_num(rps), axis=(1, 2)) / np.maximum(denom, 1e-300), np.nan
        )
        scores.append(float(np.nanmean(per_date)) if np.any(np.isfinite(per_date)) else np.inf)

    scores = np.asarray(scores)
    if not np.any(np.isfinite(scores)):
        log.warning("empty tuning history before %s; using default config", history_t_star)
        return default
    best = min(range(len(candidates)), key=lambda i: (scores[i], candidates[i].span_days))
    return candidates[best]


def persistence_lag_dates(t: dt.date, lead_days: int) -> tuple[dt.date, dt.date]:
    """The two fully-observable lagged indicator dates for a target date."""
    lag1 = t - dt.timedelta(days=lead_days + WEEK_LENGTH - 1)
    lag2 = t - dt.timedelta(days=2 * lead_days + WEEK_LENGTH - 2)
    return lag1, lag2


def persistencepp(
    target: CdfForecast,
    training,
    ind: IndicatorField,
    clim: ClimatologyField,
    *,
    t_star: dt.date | None = None,
    min_rows: int = MIN_REGRESSION_ROWS,
) -> PersistenceResult:
    """Per-(cell, bin) least-squares blend of forecast, climatology, and
    lagged indicators.

    Fits O_t(k) on [1, C_t(k), O_lag1(k), O_lag2(k), F_t(k)] over the
    training dates (rows with any missing feature dropped), then applies the
    weights at the target date and clips to [0, 1].  Cells with fewer than
    ``min_rows`` usable rows, or with missing target features, fall back to
    the raw target forecast with a flag.
    """
    if t_star is None:
        if len(target.target_dates) != 1:
            raise ValueError("t_star is required when the target holds several dates")
        t_star = target.target_dates[0]
    lead_star = target.lead_days
    if lead_star is None:
        raise ValueError("target forecast must carry its lead time")
    K = target.K
    grid = target.grid
    series = merge_series(training).get(lead_star, {})
    f_target = target.row(t_star)
    if f_target is None:
        raise AlignmentError(f"target forecast has no row for {t_star}")

    rows_f, rows_c, rows_o, rows_l1, rows_l2 = [], [], [], [], []
    for t in sorted(d for d in series if d < t_star):
        o = ind.row(t)
        c = clim.row(t)
        if o is None or c is None:
            continue
        lag1, lag2 = persistence_lag_dates(t, lead_star)
        l1, l2 = ind.row(lag1), ind.row(lag2)
        if l1 is None or l2 is None:
            continue
        rows_f.append(series[t])
        rows_c.append(c)
        rows_o.append(o)
        rows_l1.append(l1)
        rows_l2.append(l2)

    shape = grid.shape + (K - 1,)
    beta = np.zeros(shape + (5,), dtype=np.float64)
    n_rows = np.zeros(shape, dtype=np.int64)
    pred = np.full(shape, np.nan)

    lag1s, lag2s = persistence_lag_dates(t_star, lead_star)
    tl1, tl2 = ind.row(lag1s), ind.row(lag2s)
    ct = clim.row(t_star)
    if tl1 is None or tl2 is None or ct is None:
        target_x = None
    else:
        target_x = np.stack(
            [
                np.ones(shape),
                ct[..., : K - 1],
                tl1[..., : K - 1],
                tl2[..., : K - 1],
                f_target[..., : K - 1],
            ],
            axis=-1,
        )

    if rows_f:
        n = len(rows_f)
        feats = np.stack(
            [
                np.ones((n,) + shape),
                np.stack(rows_c)[..., : K - 1],
                np.stack(rows_l1)[..., : K - 1],
                np.stack(rows_l2)[..., : K - 1],
                np.stack(rows_f)[..., : K - 1],
            ],
            axis=-1,
        )  # (n, lat, lon, K-1, 5)
        y = np.stack(rows_o)[..., : K - 1]
        usable = np.all(np.isfinite(feats), axis=-1) & np.isfinite(y)
        feats = np.where(usable[..., None], feats, 0.0)
        y0 = np.where(usable, y, 0.0)
        n_rows = usable.sum(axis=0)

        # Batched minimum-norm solve: zeroed rows do not affect the normal
        # equations, so missing rows drop out exactly.
        x_mat = np.moveaxis(feats, 0, -2).reshape(-1, n, 5)
        y_mat = np.moveaxis(y0, 0, -1).reshape(-1, n)
        beta_flat = np.linalg.pinv(x_mat, rcond=LSTSQ_RCOND) @ y_mat[..., None]
        beta = beta_flat[..., 0].reshape(shape + (5,))
        if target_x is not None:
            pred = np.clip(np.einsum("...i,...i->...", beta, target_x), 0.0, 1.0)

    fallback = (n_rows < min_rows) | ~np.isfinite(pred)
    if np.any(fallback):
        log.warning(
            "persistence regression fell back to the raw forecast for %d cell-bins at %s",
            int(fallback.sum()), t_star,
        )
    out = np.empty(grid.shape + (K,), dtype=np.float64)
    out[..., : K - 1] = np.where(fallback, f_target[..., : K - 1], pred)
    out[..., K - 1] = np.where(np.isnan(f_target[..., K - 1]), np.nan, 1.0)
    forecast = CdfForecast(
        target.variable, K, (t_star,), out[None], grid,
        lead_days=lead_star, provenance="persistence++",
    )
    return PersistenceResult(forecast, RegressionWeights(beta, n_rows, fallback))
