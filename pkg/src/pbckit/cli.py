"""Command-line interface.

Every subcommand reads and writes GridStore directories plus JSON/CSV, so the
whole pipeline composes via paths.  Failures exit nonzero after printing a
machine-readable error JSON to stderr.
"""

from __future__ import annotations

import datetime as dt
import functools
import json
import sys

import click
import numpy as np

from . import storage
from .cdf import debiased_baseline, ensemble_to_cdf
from .climatology import (
    DEFAULT_K,
    indicators,
    model_thresholds,
    observed_thresholds,
    rolling_climatology,
)
from .correction import DebiasConfig, debiaspp, persistencepp
from .floods import (
    events_to_csv,
    fetch_events,
    filter_by_issuance,
    flood_bss,
)
from .pipeline import PipelineConfig, run_pipeline
from .projection import microduet as _microduet
from .projection import pbc_combine, project_to_cdf
from .scoring import (
    bias_map,
    evaluation_mask,
    rpss_aggregated,
    rpss_global,
    stratify,
    write_reports_csv,
)
from .synthetic import BiasProfile, generate_synthetic_world, synthetic_grid


def _fail(exc: BaseException) -> None:
    err = {"error": type(exc).__name__, "message": str(exc)}
    click.echo(json.dumps(err, sort_keys=True), err=True)
    sys.exit(1)


def handled(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (click.ClickException, click.Abort, SystemExit):
            raise
        except Exception as exc:  # noqa: BLE001 - CLI boundary
            _fail(exc)

    return wrapper


def _date(text: str) -> dt.date:
    return dt.date.fromisoformat(text)


@click.group()
@click.version_option()
def main():
    """Quintile-bin forecast post-processing and verification."""


@main.command("synth-gen")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--years", type=int, default=23, show_default=True)
@click.option("--nlat", type=int, default=10, show_default=True)
@click.option("--nlon", type=int, default=20, show_default=True)
@click.option("--variable", default="temperature", show_default=True)
@click.option("--bias-offset", type=float, default=0.0, show_default=True)
@click.option("--spread-inflation", type=float, default=1.0, show_default=True)
@click.option("--members", type=int, default=11, show_default=True)
@click.option("--lead-days", type=int, default=19, show_default=True)
@click.option("--out", required=True, type=click.Path())
@handled
def synth_gen(seed, years, nlat, nlon, variable, bias_offset, spread_inflation,
              members, lead_days, out):
    """Generate a synthetic world: observations, forecasts, hindcasts."""
    from pathlib import Path

    grid = synthetic_grid(nlat, nlon)
    profile = BiasProfile(offset=bias_offset, spread_inflation=spread_inflation)
    obs, fc, hc = generate_synthetic_world(
        seed, grid, years, profile,
        members=members, lead_days=lead_days, variable=variable,
    )
    root = Path(out)
    storage.write_store(obs, root / "obs")
    storage.write_store(fc, root / "forecast")
    for h in hc:
        storage.write_store(h, root / "hindcasts" / f"delta_{h.hindcast_year_offset:02d}")
    click.echo(f"wrote synthetic world under {root}")


@main.command()
@click.option("--obs", "obs_path", type=click.Path(exists=True),
              help="Observation store (observed variant).")
@click.option("--hindcasts", "hindcast_path", type=click.Path(exists=True),
              help="Hindcast store directory (model variant).")
@click.option("--dates-from", required=True, type=click.Path(exists=True),
              help="Store whose target dates define the threshold dates.")
@click.option("--variant", type=click.Choice(["observed", "model"]),
              default="observed", show_default=True)
@click.option("--k", "k_bins", type=int, default=DEFAULT_K, show_default=True)
@click.option("--lead-days", type=int, default=None)
@click.option("--out", required=True, type=click.Path())
@handled
def thresholds(obs_path, hindcast_path, dates_from, variant, k_bins, lead_days, out):
    """Compute climatological quantile thresholds."""
    dates = storage.read_store(dates_from).target_dates
    if variant == "observed":
        if obs_path is None:
            raise click.UsageError("--obs is required for the observed variant")
        thr = observed_thresholds(storage.read_store(obs_path), dates, k_bins)
    else:
        if hindcast_path is None:
            raise click.UsageError("--hindcasts is required for the model variant")
        hcs = _read_hindcasts(hindcast_path)
        lead = lead_days if lead_days is not None else hcs[0].lead_days
        thr = model_thresholds(hcs, dates, lead, k_bins)
    storage.write_store(thr, out)
    click.echo(f"wrote {len(dates)} threshold dates to {out}")


def _read_hindcasts(path):
    from pathlib import Path

    root = Path(path)
    subs = sorted(p for p in root.iterdir() if p.is_dir())
    if not subs:
        raise ValueError(f"no hindcast stores under {root}")
    return [storage.read_store(p) for p in subs]


@main.command("to-cdf")
@click.option("--ensemble", required=True, type=click.Path(exists=True))
@click.option("--thresholds", "thr_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@handled
def to_cdf(ensemble, thr_path, out):
    """Count ensemble members below thresholds into a CDF forecast."""
    cdf = ensemble_to_cdf(storage.read_store(ensemble), storage.read_store(thr_path))
    storage.write_store(cdf, out)
    click.echo(f"wrote CDF forecast to {out}")


@main.command("debiased-baseline")
@click.option("--forecast", required=True, type=click.Path(exists=True))
@click.option("--hindcasts", "hindcast_path", required=True, type=click.Path(exists=True))
@click.option("--k", "k_bins", type=int, default=DEFAULT_K, show_default=True)
@click.option("--out", required=True, type=click.Path())
@handled
def debiased_baseline_cmd(forecast, hindcast_path, k_bins, out):
    """Ensemble counted against its own hindcast-derived thresholds."""
    cdf = debiased_baseline(
        storage.read_store(forecast), _read_hindcasts(hindcast_path), k_bins
    )
    storage.write_store(cdf, out)
    click.echo(f"wrote debiased baseline to {out}")


@main.command("debiaspp")
@click.option("--target", required=True, type=click.Path(exists=True))
@click.option("--training", "training_paths", multiple=True, required=True,
              type=click.Path(exists=True))
@click.option("--indicators", "ind_path", required=True, type=click.Path(exists=True))
@click.option("--date", "date_text", default=None, help="Target date (ISO).")
@click.option("--span-days", type=int, default=28, show_default=True)
@click.option("--issuance-count", type=int, default=1, show_default=True)
@click.option("--out", required=True, type=click.Path())
@handled
def debiaspp_cmd(target, training_paths, ind_path, date_text, span_days,
                 issuance_count, out):
    """Additive probabilistic bias correction."""
    tgt = storage.read_store(target)
    training = [storage.read_store(p) for p in training_paths]
    ind = storage.read_store(ind_path)
    cfg = DebiasConfig(span_days=span_days, issuance_count=issuance_count)
    t_star = _date(date_text) if date_text else None
    res = debiaspp(tgt, training, ind, cfg, t_star=t_star)
    storage.write_store(res.forecast, out)
    click.echo(
        f"corrected {res.forecast.target_dates[0]} from "
        f"{len(res.selected_dates)} training dates "
        f"({int(res.passthrough.sum())} passthrough cell-bins)"
    )


@main.command("persistencepp")
@click.option("--target", required=True, type=click.Path(exists=True))
@click.option("--training", "training_paths", multiple=True, required=True,
              type=click.Path(exists=True))
@click.option("--indicators", "ind_path", required=True, type=click.Path(exists=True))
@click.option("--climatology", "clim_path", required=True, type=click.Path(exists=True))
@click.option("--date", "date_text", default=None, help="Target date (ISO).")
@click.option("--out", required=True, type=click.Path())
@handled
def persistencepp_cmd(target, training_paths, ind_path, clim_path, date_text, out):
    """Regression blend of forecast, climatology, and lagged indicators."""
    tgt = storage.read_store(target)
    training = [storage.read_store(p) for p in training_paths]
    ind = storage.read_store(ind_path)
    clim = storage.read_store(clim_path)
    t_star = _date(date_text) if date_text else None
    res = persistencepp(tgt, training, ind, clim, t_star=t_star)
    storage.write_store(res.forecast, out)
    click.echo(
        f"regressed {res.forecast.target_dates[0]} "
        f"({int(res.weights.fallback.sum())} fallback cell-bins)"
    )


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@handled
def project(in_path, out):
    """Project a corrected forecast back onto valid monotone CDFs."""
    cdf = project_to_cdf(storage.read_store(in_path))
    storage.write_store(cdf, out)
    click.echo(f"wrote projected forecast to {out}")


@main.command()
@click.option("--first", required=True, type=click.Path(exists=True))
@click.option("--second", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@handled
def pbc(first, second, out):
    """Average two projected corrections into the combined forecast."""
    cdf = pbc_combine(storage.read_store(first), storage.read_store(second))
    storage.write_store(cdf, out)
    click.echo(f"wrote combined forecast to {out}")


@main.command()
@click.option("--pbc-ecmwf", "ecmwf_path", required=True, type=click.Path(exists=True))
@click.option("--pbc-poet", "poet_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@handled
def microduet(ecmwf_path, poet_path, out):
    """Variable-dependent blend of the two models' combined forecasts."""
    e = storage.read_store(ecmwf_path)
    cdf = _microduet(e, storage.read_store(poet_path), e.variable)
    storage.write_store(cdf, out)
    click.echo(f"wrote blended forecast to {out}")


def _load_scoring_inputs(forecast, ind_path, thr_path):
    f = storage.read_store(forecast)
    o = storage.read_store(ind_path)
    thr = storage.read_store(thr_path) if thr_path else None
    mask = evaluation_mask(
        f.grid, f.variable, len(f.target_dates),
        thresholds=thr if f.variable == "precipitation" else None,
    )
    return f, o, mask


@main.command()
@click.option("--forecast", required=True, type=click.Path(exists=True))
@click.option("--indicators", "ind_path", required=True, type=click.Path(exists=True))
@click.option("--thresholds", "thr_path", type=click.Path(exists=True),
              help="Observed thresholds (arid exclusion for precipitation).")
@click.option("--metric", type=click.Choice(["rpss", "bss_top", "bss_bottom"]),
              default="rpss", show_default=True)
@click.option("--stratified/--no-stratified", default=False, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), help="JSON report path.")
@click.option("--csv", "csv_path", type=click.Path(), help="CSV report path.")
@handled
def score(forecast, ind_path, thr_path, metric, stratified, seed, out, csv_path):
    """Score a CDF forecast against observed indicators."""
    f, o, mask = _load_scoring_inputs(forecast, ind_path, thr_path)
    if stratified:
        reports = stratify(f, o, f.grid, mask, metric=metric, seed=seed)
    else:
        reports = stratify(
            f, o, f.grid, mask, metric=metric, seed=seed,
            seasons=(), regions={"globe": (-90.0, 90.0, 0.0, 360.0)},
        )
    headline = next(r for r in reports if r.region == "globe" and r.season is None)
    if metric == "rpss":
        agg = rpss_aggregated(f, o, f.grid, mask)
        click.echo(f"{agg:.3f}")
    else:
        click.echo(f"{headline.value:.3f}")
    if out:
        with open(out, "w") as fh:
            json.dump([r.to_dict() for r in reports], fh, indent=1, sort_keys=True)
            fh.write("\n")
    if csv_path:
        write_reports_csv(reports, csv_path)


@main.command("bias-map")
@click.option("--forecast", required=True, type=click.Path(exists=True))
@click.option("--indicators", "ind_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(),
              help="Output .npy array of shape (lat, lon, K).")
@handled
def bias_map_cmd(forecast, ind_path, out):
    """Per-cell mean probabilistic bias F(k) - O(k)."""
    f = storage.read_store(forecast)
    o = storage.read_store(ind_path)
    np.save(out, bias_map(f, o))
    click.echo(f"wrote bias map to {out}")


@main.command("gdacs-fetch")
@click.option("--from-year", type=int, required=True)
@click.option("--to-year", type=int, required=True)
@click.option("--cache-dir", required=True, type=click.Path())
@click.option("--offline/--live", default=True, show_default=True,
              help="Offline mode fails on a cold cache instead of fetching.")
@click.option("--issuance-filter/--no-issuance-filter", default=True, show_default=True)
@click.option("--out", required=True, type=click.Path(), help="Event CSV path.")
@handled
def gdacs_fetch(from_year, to_year, cache_dir, offline, issuance_filter, out):
    """Fetch (or load cached) flood events and write the filtered catalog."""
    transport = _offline_transport if offline else None
    events = fetch_events(range(from_year, to_year + 1), cache_dir, transport)
    if issuance_filter:
        events = filter_by_issuance(events)
    events_to_csv(events, out)
    click.echo(f"wrote {len(events)} events to {out}")


def _offline_transport(url: str) -> str:
    raise RuntimeError(f"offline mode: no cached response and no transport for {url}")


@main.command("flood-score")
@click.option("--events", "events_csv", required=True, type=click.Path(exists=True))
@click.option("--forecast", required=True, type=click.Path(exists=True))
@click.option("--indicators", "ind_path", required=True, type=click.Path(exists=True))
@click.option("--thresholds", "thr_path", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="Per-event JSON path.")
@handled
def flood_score(events_csv, forecast, ind_path, thr_path, out):
    """Top-bin Brier skill per flood event over its bounding box."""
    import csv as csv_mod

    from .floods import FloodEvent

    f = storage.read_store(forecast)
    o = storage.read_store(ind_path)
    thr = storage.read_store(thr_path) if thr_path else None
    results = []
    with open(events_csv, newline="") as fh:
        for row in csv_mod.DictReader(fh):
            event = FloodEvent(
                event_id=row["event_id"],
                latitude=float(row["latitude"]),
                longitude=float(row["longitude"]),
                start_date=_date(row["start_date"]),
                alert_level=row["alert_level"],
            )
            try:
                bss = flood_bss(event, f, o, thresholds=thr)
            except ValueError as exc:
                results.append({"event_id": event.event_id, "bss": None,
                                "skipped": str(exc)})
                continue
            results.append({"event_id": event.event_id, "bss": bss,
                            "alert_level": event.alert_level})
    with open(out, "w") as fh:
        json.dump(results, fh, indent=1, sort_keys=True)
        fh.write("\n")
    scored = [r["bss"] for r in results if r["bss"] is not None]
    mean = float(np.mean(scored)) if scored else float("nan")
    click.echo(f"scored {len(scored)}/{len(results)} events, mean BSS {mean:.3f}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="TOML config; flags below override it.")
@click.option("--obs", "obs_store", type=click.Path(exists=True))
@click.option("--forecast", "forecast_store", type=click.Path(exists=True))
@click.option("--hindcasts", "hindcast_store", type=click.Path(exists=True))
@click.option("--start", "start_text", default=None)
@click.option("--end", "end_text", default=None)
@click.option("--seed", type=int, default=None)
@click.option("--output-dir", type=click.Path(), default=None)
@handled
def replay(config_path, obs_store, forecast_store, hindcast_store,
           start_text, end_text, seed, output_dir):
    """Rolling-origin operational replay with strict observability cutoffs."""
    overrides = {
        "obs_store": obs_store,
        "forecast_store": forecast_store,
        "hindcast_store": hindcast_store,
        "start_date": _date(start_text) if start_text else None,
        "end_date": _date(end_text) if end_text else None,
        "seed": seed,
        "output_dir": output_dir,
    }
    if config_path:
        cfg = PipelineConfig.from_toml(config_path, **overrides)
    else:
        cfg = PipelineConfig(**{k: v for k, v in overrides.items() if v is not None})
    result = run_pipeline(cfg)
    click.echo(
        f"replayed {len(result.dates)} issuance dates into {cfg.output_dir} "
        f"({result.guard_accesses} guarded training accesses)"
    )


if __name__ == "__main__":
    main()
