"""Rolling-origin operational replay.

Every issuance re-derives thresholds, re-tunes the additive correction,
refits the regression weights, corrects, projects, combines, and scores,
using only observation periods that were fully observable at issuance time.
A recording access guard raises ``LeakageError`` the moment any training
access reaches past the observability cutoff.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cdf import CdfForecast, ensemble_to_cdf, hindcast_to_training_cdfs
from .climatology import (
    DEFAULT_K,
    IndicatorField,
    ThresholdField,
    indicators,
    model_thresholds,
    observed_thresholds,
    rolling_climatology,
)
from .correction import (
    CANDIDATE_CONFIGS,
    DebiasConfig,
    debiaspp,
    persistence_lag_dates,
    persistencepp,
    select_debias_config,
)
from .grids import WEEK_LENGTH, EnsembleField, ObservationField, shift_years
from .projection import pbc_combine, project_to_cdf
from .scoring import bootstrap_ci, evaluation_mask, rpss_aggregated, rpss_global
from .storage import read_store, write_store

log = logging.getLogger(__name__)


class LeakageError(RuntimeError):
    """A replay step tried to read data that postdates its cutoff."""


def observability_cutoff(t_star: dt.date, lead_days: int) -> dt.date:
    """Date by which all training data must be fully observed: lead - 1 days
    before the target period starts."""
    return t_star - dt.timedelta(days=lead_days - 1)


def period_observable(t: dt.date, cutoff: dt.date) -> bool:
    """A weekly period [t, t+6] is usable iff it ends strictly before the cutoff."""
    return t + dt.timedelta(days=WEEK_LENGTH - 1) < cutoff


class ObservabilityGuard:
    """Records every observation-period access and raises on violations."""

    def __init__(self, cutoff: dt.date):
        self.cutoff = cutoff
        self.accesses: list[dt.date] = []
        self.violations = 0

    def check(self, period_start: dt.date) -> None:
        self.accesses.append(period_start)
        if not period_observable(period_start, self.cutoff):
            self.violations += 1
            raise LeakageError(
                f"training access to period starting {period_start} violates "
                f"observability cutoff {self.cutoff}"
            )


@dataclass
class PipelineConfig:
    variable: str = "temperature"
    lead_days: int = 19
    K: int = DEFAULT_K
    model: str = "synthetic"
    #: Threshold variant for the persistence-correction input CDFs; the
    #: additive correction always uses observed thresholds.
    threshold_variant: str = "observed"
    start_date: dt.date | None = None
    end_date: dt.date | None = None
    obs_store: str = ""
    forecast_store: str = ""
    hindcast_store: str | None = None
    use_hindcast_training: bool = True
    seed: int = 0
    output_dir: str = "out"
    climatology_years: int = 20
    candidates: tuple[DebiasConfig, ...] = CANDIDATE_CONFIGS

    def __post_init__(self):
        if self.threshold_variant not in ("observed", "model"):
            raise ValueError(f"unknown threshold variant {self.threshold_variant!r}")

    @classmethod
    def from_toml(cls, path, **overrides) -> "PipelineConfig":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib

        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
        raw.update({k: v for k, v in overrides.items() if v is not None})
        for key in ("start_date", "end_date"):
            if isinstance(raw.get(key), str):
                raw[key] = dt.date.fromisoformat(raw[key])
        known = {f.name for f in dataclasses.fields(cls) if f.name != "candidates"}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: raw[k] for k in raw})

    def resolved_toml(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            if f.name == "candidates":
                continue
            v = getattr(self, f.name)
            if v is None:
                continue
            if isinstance(v, bool):
                lines.append(f"{f.name} = {str(v).lower()}")
            elif isinstance(v, (int, float)):
                lines.append(f"{f.name} = {v}")
            elif isinstance(v, dt.date):
                lines.append(f'{f.name} = "{v.isoformat()}"')
            else:
                lines.append(f'{f.name} = "{v}"')
        return "\n".join(lines) + "\n"


@dataclass
class ReplayResult:
    config: PipelineConfig
    dates: tuple[dt.date, ...]
    forecasts: dict[str, CdfForecast]
    scores: dict
    params: dict[dt.date, dict]
    guard_accesses: int


class ReplayEngine:
    """Per-issuance state for a rolling replay over one forecast system."""

    def __init__(
        self,
        cfg: PipelineConfig,
        obs: ObservationField,
        forecast: EnsembleField,
        hindcasts=(),
    ):
        self.cfg = cfg
        self.obs = obs
        self.forecast = forecast
        self.hindcasts = list(hindcasts)
        self.grid = obs.grid
        # Patchable in tests: deliberately widening this cutoff makes the
        # guard fire, proving the leakage check is independent of it.
        self.cutoff_rule = observability_cutoff
        self._thr_cache: dict[dt.date, np.ndarray] = {}
        self._ind_cache: dict[dt.date, np.ndarray] = {}
        self._clim_cache: dict[dt.date, np.ndarray] = {}
        self._debias_series: list[CdfForecast] | None = None
        self._persistence_series: list[CdfForecast] | None = None
        self._model_thr: ThresholdField | None = None

    # -- cached pure derivations (issuance-invariant; access is gated by the
    # guard at use time) -----------------------------------------------------

    def _ensure_thresholds(self, dates) -> None:
        missing = [d for d in dates if d not in self._thr_cache]
        if not missing:
            return
        thr = observed_thresholds(self.obs, missing, self.cfg.K, self.cfg.climatology_years)
        ind = indicators(self.obs, thr)
        for i, d in enumerate(missing):
            self._thr_cache[d] = thr.values[i]
            self._ind_cache[d] = ind.values[i]

    def thresholds_for(self, dates) -> ThresholdField:
        dates = tuple(dates)
        self._ensure_thresholds(dates)
        vals = np.stack([self._thr_cache[d] for d in dates])
        return ThresholdField(self.obs.variable, self.cfg.K, dates, vals, self.grid)

    def indicators_for(self, dates, guard: ObservabilityGuard | None = None) -> IndicatorField:
        dates = tuple(dates)
        self._ensure_thresholds(dates)
        if guard is not None:
            for d in dates:
                guard.check(d)
        vals = np.stack([self._ind_cache[d] for d in dates])
        return IndicatorField(self.obs.variable, self.cfg.K, dates, vals, self.grid)

    def climatology_for(self, dates, guard: ObservabilityGuard | None = None):
        dates = tuple(dates)
        missing = []
        for t in dates:
            sources = [shift_years(t, j) for j in range(1, self.cfg.climatology_years + 1)]
            sources = [s for s in sources if s is not None and s in self.obs.date_index]
            if guard is not None:
                for s in sources:
                    guard.check(s)
            if t not in self._clim_cache:
                missing.append((t, sources))
        for t, sources in missing:
            if sources:
                ind = self.indicators_for(sources)
                clim = rolling_climatology(
                    ind, [t], years=self.cfg.climatology_years, K=self.cfg.K
                )
                self._clim_cache[t] = clim.values[0]
            else:
                prior = np.arange(1, self.cfg.K + 1, dtype=np.float64) / self.cfg.K
                self._clim_cache[t] = np.broadcast_to(
                    prior, self.grid.shape + (self.cfg.K,)
                ).copy()
        from .climatology import ClimatologyField

        vals = np.stack([self._clim_cache[d] for d in dates])
        return ClimatologyField(self.obs.variable, self.cfg.K, dates, vals, self.grid)

    def _forecast_cdfs(self, variant: str) -> CdfForecast:
        if variant == "observed":
            thr = self.thresholds_for(self.forecast.target_dates)
        else:
            thr = self.model_thresholds()
        return ensemble_to_cdf(self.forecast, thr)

    def model_thresholds(self) -> ThresholdField:
        if self._model_thr is None:
            if not self.hindcasts:
                raise ValueError("model threshold variant needs hindcast data")
            self._model_thr = model_thresholds(
                self.hindcasts, self.forecast.target_dates, self.cfg.lead_days, self.cfg.K
            )
        return self._model_thr

    def _hindcast_series(self, variant: str) -> list[CdfForecast]:
        if not self.hindcasts or not self.cfg.use_hindcast_training:
            return []
        if variant == "model":
            thr = self.model_thresholds()
            return hindcast_to_training_cdfs(self.hindcasts, lambda delta: thr)
        def observed_for_offset(delta: int) -> ThresholdField:
            dates = [
                d for d in self.hindcasts[0].target_dates
                if shift_years(d, delta) is not None
            ]
            self._ensure_thresholds([shift_years(d, delta) for d in dates])
            vals = np.stack([self._thr_cache[shift_years(d, delta)] for d in dates])
            return ThresholdField(self.obs.variable, self.cfg.K, tuple(dates), vals, self.grid)
        return hindcast_to_training_cdfs(self.hindcasts, observed_for_offset)

    def debias_series(self) -> list[CdfForecast]:
        if self._debias_series is None:
            self._debias_series = [self._forecast_cdfs("observed")] + self._hindcast_series(
                "observed"
            )
        return self._debias_series

    def persistence_series(self) -> list[CdfForecast]:
        if self._persistence_series is None:
            variant = self.cfg.threshold_variant
            if variant == "observed":
                self._persistence_series = self.debias_series()
            else:
                self._persistence_series = [self._forecast_cdfs(variant)] + self._hindcast_series(
                    variant
                )
        return self._persistence_series

    # -- per-issuance machinery ----------------------------------------------

    def _training_dates(self, series, t_star: dt.date, guard: ObservabilityGuard):
        cutoff = self.cutoff_rule(t_star, self.cfg.lead_days)
        dates = sorted({d for cdf in series for d in cdf.target_dates if d != t_star})
        usable = [t for t in dates if period_observable(t, cutoff)]
        return usable

    def tuning_weights(self) -> np.ndarray:
        w = self.grid.cell_weights.copy()
        if self.cfg.variable in ("temperature", "precipitation"):
            w = w * (self.grid.land_fraction >= 0.5)
        return w

    def _restrict(self, series, dates) -> list[CdfForecast]:
        keep = set(dates)
        out = []
        for cdf in series:
            idx = [i for i, d in enumerate(cdf.target_dates) if d in keep]
            if not idx:
                continue
            out.append(
                CdfForecast(
                    cdf.variable, cdf.K,
                    tuple(cdf.target_dates[i] for i in idx), cdf.values[idx],
                    cdf.grid, lead_days=cdf.lead_days, provenance=cdf.provenance,
                )
            )
        return out

    def correct_one(self, t_star: dt.date):
        guard = ObservabilityGuard(observability_cutoff(t_star, self.cfg.lead_days))

        debias_all = self.debias_series()
        train_dates = self._training_dates(debias_all, t_star, guard)
        training = self._restrict(debias_all, train_dates)
        train_ind = self.indicators_for(train_dates, guard)

        raw_full = debias_all[0]
        i = raw_full.date_index[t_star]
        raw = CdfForecast(
            raw_full.variable, raw_full.K, (t_star,), raw_full.values[i : i + 1],
            self.grid, lead_days=self.cfg.lead_days, provenance="raw",
        )

        chosen = select_debias_config(
            self.cfg.candidates, t_star, self.cfg.lead_days, training, train_ind,
            cell_weights=self.tuning_weights(),
        )
        dres = debiaspp(raw, training, train_ind, chosen, t_star=t_star)
        dproj = project_to_cdf(dres.forecast)

        persist_all = self.persistence_series()
        p_train_dates = self._training_dates(persist_all, t_star, guard)
        p_training = self._restrict(persist_all, p_train_dates)
        raw_p_full = persist_all[0]
        j = raw_p_full.date_index[t_star]
        raw_p = CdfForecast(
            raw_p_full.variable, raw_p_full.K, (t_star,), raw_p_full.values[j : j + 1],
            self.grid, lead_days=self.cfg.lead_days, provenance="raw",
        )
        lag_dates = set()
        for t in p_train_dates + [t_star]:
            lag_dates.update(persistence_lag_dates(t, self.cfg.lead_days))
        lag_dates = sorted(d for d in lag_dates if d in self.obs.date_index)
        ind_all = self.indicators_for(
            sorted(set(p_train_dates) | set(lag_dates)), guard
        )
        clim = self.climatology_for(p_train_dates + [t_star], guard)
        pres = persistencepp(raw_p, p_training, ind_all, clim, t_star=t_star)
        pproj = project_to_cdf(pres.forecast)

        pbc = pbc_combine(dproj, pproj)
        params = {
            "debias_config": {
                "span_days": chosen.span_days,
                "issuance_count": chosen.issuance_count,
            },
            "debias_passthrough_bins": int(dres.passthrough.sum()),
            "debias_training_dates": len(dres.selected_dates),
            "persistence_fallback_bins": int(pres.weights.fallback.sum()),
            "persistence_weights": np.round(pres.weights.beta, 10).tolist(),
        }
        return {
            "raw": raw,
            "debias++": dproj,
            "persistence++": pproj,
            "pbc": pbc,
        }, params, guard

    def run(self) -> ReplayResult:
        cfg = self.cfg
        dates = [
            d
            for d in self.forecast.target_dates
            if (cfg.start_date is None or d >= cfg.start_date)
            and (cfg.end_date is None or d <= cfg.end_date)
        ]
        if not dates:
            raise ValueError("no forecast target dates inside the replay window")
        per_system: dict[str, list[np.ndarray]] = {}
        params: dict[dt.date, dict] = {}
        accesses = 0
        for t_star in dates:
            systems, p, guard = self.correct_one(t_star)
            accesses += len(guard.accesses)
            params[t_star] = p
            for name, cdf in systems.items():
                per_system.setdefault(name, []).append(cdf.values[0])

        forecasts = {}
        for name, rows in per_system.items():
            provenance = "custom" if name not in ("raw", "debias++", "persistence++", "pbc") else name
            forecasts[name] = CdfForecast(
                cfg.variable, cfg.K, tuple(dates), np.stack(rows), self.grid,
                lead_days=cfg.lead_days, provenance=provenance,
            )

        thr = self.thresholds_for(dates)
        realized = indicators(self.obs, thr)
        mask = evaluation_mask(
            self.grid, cfg.variable, len(dates),
            thresholds=thr if cfg.variable == "precipitation" else None,
        )
        scores = {"variable": cfg.variable, "lead_days": cfg.lead_days, "systems": {}}
        for name, cdf in forecasts.items():
            series = rpss_global(cdf, realized, self.grid, mask)
            finite = series[np.isfinite(series)]
            lo, hi = bootstrap_ci(finite, seed=cfg.seed)
            agg = rpss_aggregated(cdf, realized, self.grid, mask)

            def _num(v):
                return None if not np.isfinite(v) else round(float(v), 12)

            scores["systems"][name] = {
                "rpss_per_date": {
                    d.isoformat(): _num(v) for d, v in zip(dates, series)
                },
                "rpss_mean": _num(finite.mean()) if finite.size else None,
                "rpss_aggregated": _num(agg),
                "ci95": [_num(lo), _num(hi)],
            }
        return ReplayResult(cfg, tuple(dates), forecasts, scores, params, accesses)


def run_pipeline(cfg: PipelineConfig) -> ReplayResult:
    """Load stores, run the replay, and write all artifacts under the
    configured output directory."""
    obs = read_store(cfg.obs_store)
    forecast = read_store(cfg.forecast_store)
    hindcasts = []
    if cfg.hindcast_store:
        root = Path(cfg.hindcast_store)
        for sub in sorted(p for p in root.iterdir() if p.is_dir()):
            hindcasts.append(read_store(sub))
    engine = ReplayEngine(cfg, obs, forecast, hindcasts)
    result = engine.run()
    write_replay_result(result)
    return result


def write_replay_result(result: ReplayResult) -> None:
    out = Path(result.config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.toml").write_text(result.config.resolved_toml())
    for name, cdf in result.forecasts.items():
        write_store(cdf, out / "forecasts" / name.replace("+", "p"))
    with open(out / "scores.json", "w") as fh:
        json.dump(result.scores, fh, indent=1, sort_keys=True)
        fh.write("\n")
    params_dir = out / "params"
    params_dir.mkdir(exist_ok=True)
    for d, p in result.params.items():
        with open(params_dir / f"{d.isoformat()}.json", "w") as fh:
            json.dump(p, fh, indent=1, sort_keys=True)
            fh.write("\n")
