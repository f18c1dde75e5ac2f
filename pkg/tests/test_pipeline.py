import datetime as dt
import filecmp
import json
from pathlib import Path

import numpy as np
import pytest

from pbckit import storage
from pbckit.pipeline import (
    LeakageError,
    ObservabilityGuard,
    PipelineConfig,
    ReplayEngine,
    observability_cutoff,
    period_observable,
    run_pipeline,
    write_replay_result,
)
from pbckit.synthetic import BiasProfile, generate_synthetic_world, synthetic_grid


@pytest.fixture(scope="module")
def world():
    grid = synthetic_grid(4, 6)
    return generate_synthetic_world(7, grid, 23, BiasProfile(offset=2.0))


def _config(tmp_path, **kw):
    kw.setdefault("start_date", dt.date(2022, 6, 1))
    kw.setdefault("end_date", dt.date(2022, 6, 14))
    kw.setdefault("use_hindcast_training", False)
    kw.setdefault("output_dir", str(tmp_path / "out"))
    return PipelineConfig(**kw)


class TestObservability:
    def test_cutoff_is_lead_minus_one_before_target(self):
        assert observability_cutoff(dt.date(2023, 6, 20), 19) == dt.date(2023, 6, 2)

    def test_period_usable_iff_it_ends_before_cutoff(self):
        cutoff = dt.date(2023, 6, 2)
        assert period_observable(dt.date(2023, 5, 26), cutoff)       # ends Jun 1
        assert not period_observable(dt.date(2023, 5, 27), cutoff)   # ends Jun 2

    def test_persistence_lags_sit_exactly_at_the_boundary(self):
        from pbckit.correction import persistence_lag_dates

        t_star, lead = dt.date(2023, 6, 20), 19
        cutoff = observability_cutoff(t_star, lead)
        lag1, lag2 = persistence_lag_dates(t_star, lead)
        assert period_observable(lag1, cutoff)
        assert period_observable(lag2, cutoff)
        assert not period_observable(lag1 + dt.timedelta(days=1), cutoff)

    def test_guard_records_and_raises(self):
        guard = ObservabilityGuard(dt.date(2023, 6, 2))
        guard.check(dt.date(2023, 5, 1))
        with pytest.raises(LeakageError):
            guard.check(dt.date(2023, 6, 1))
        assert len(guard.accesses) == 2
        assert guard.violations == 1


class TestReplayEngine:
    def test_emits_one_forecast_per_system_per_date(self, world, tmp_path):
        obs, fc, hc = world
        cfg = _config(tmp_path)
        result = ReplayEngine(cfg, obs, fc, hc).run()
        expected_dates = tuple(
            d for d in fc.target_dates if cfg.start_date <= d <= cfg.end_date
        )
        assert result.dates == expected_dates
        assert set(result.forecasts) == {"raw", "debias++", "persistence++", "pbc"}
        for cdf in result.forecasts.values():
            assert cdf.target_dates == expected_dates
        assert set(result.params) == set(expected_dates)

    def test_no_guard_violations_in_a_clean_replay(self, world, tmp_path):
        obs, fc, hc = world
        engine = ReplayEngine(_config(tmp_path), obs, fc, hc)
        violations = []
        orig = engine.correct_one

        def spy(t_star):
            systems, params, guard = orig(t_star)
            violations.append(guard.violations)
            return systems, params, guard

        engine.correct_one = spy
        engine.run()
        assert violations and all(v == 0 for v in violations)

    def test_widened_cutoff_triggers_leakage_error(self, world, tmp_path):
        obs, fc, hc = world
        engine = ReplayEngine(_config(tmp_path), obs, fc, hc)
        # Test double: pretend data up to the target date itself is available.
        engine.cutoff_rule = lambda t_star, lead: t_star + dt.timedelta(days=8)
        with pytest.raises(LeakageError):
            engine.run()

    def test_corrections_beat_raw_on_biased_world(self, world, tmp_path):
        obs, fc, hc = world
        result = ReplayEngine(_config(tmp_path), obs, fc, hc).run()
        scores = {k: v["rpss_mean"] for k, v in result.scores["systems"].items()}
        assert scores["pbc"] > scores["raw"]
        assert scores["debias++"] > scores["raw"]

    def test_per_date_params_are_recorded(self, world, tmp_path):
        obs, fc, hc = world
        result = ReplayEngine(_config(tmp_path), obs, fc, hc).run()
        p = next(iter(result.params.values()))
        assert {"debias_config", "debias_passthrough_bins",
                "persistence_fallback_bins", "persistence_weights"} <= set(p)
        assert p["debias_config"]["span_days"] in (14, 28, 35)


def _tree_bytes(root):
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(Path(root).rglob("*")) if p.is_file()
    }


class TestRunPipeline:
    @pytest.fixture()
    def stores(self, world, tmp_path):
        obs, fc, hc = world
        root = tmp_path / "stores"
        storage.write_store(obs, root / "obs")
        storage.write_store(fc, root / "forecast")
        for h in hc:
            storage.write_store(h, root / "hindcasts" / f"delta_{h.hindcast_year_offset:02d}")
        return root

    def test_writes_all_artifacts(self, stores, tmp_path):
        cfg = _config(
            tmp_path,
            obs_store=str(stores / "obs"),
            forecast_store=str(stores / "forecast"),
            hindcast_store=str(stores / "hindcasts"),
        )
        result = run_pipeline(cfg)
        out = Path(cfg.output_dir)
        assert (out / "scores.json").exists()
        assert (out / "resolved_config.toml").exists()
        for name in ("raw", "debiaspp", "persistencepp", "pbc"):
            assert (out / "forecasts" / name / "meta.json").exists()
        assert len(list((out / "params").glob("*.json"))) == len(result.dates)
        scores = json.loads((out / "scores.json").read_text())
        assert set(scores["systems"]) == {"raw", "debias++", "persistence++", "pbc"}

    def test_two_runs_are_byte_identical(self, stores, tmp_path):
        kwargs = dict(
            obs_store=str(stores / "obs"),
            forecast_store=str(stores / "forecast"),
            hindcast_store=str(stores / "hindcasts"),
            end_date=dt.date(2022, 6, 7),
        )
        cfg_a = _config(tmp_path / "a", **kwargs)
        cfg_b = _config(tmp_path / "b", **kwargs)
        run_pipeline(cfg_a)
        run_pipeline(cfg_b)
        a, b = _tree_bytes(cfg_a.output_dir), _tree_bytes(cfg_b.output_dir)
        assert set(a) == set(b)
        mismatched = [k for k in a if k != "resolved_config.toml" and a[k] != b[k]]
        assert mismatched == []


class TestPipelineConfig:
    def test_rejects_unknown_variant(self):
        with pytest.raises(ValueError):
            PipelineConfig(threshold_variant="hybrid")

    def test_toml_round_trip(self, tmp_path):
        cfg = PipelineConfig(
            variable="mslp", lead_days=12, seed=3,
            start_date=dt.date(2022, 1, 3), obs_store="obs",
            forecast_store="fc", output_dir="out",
        )
        path = tmp_path / "cfg.toml"
        path.write_text(cfg.resolved_toml())
        loaded = PipelineConfig.from_toml(path)
        assert loaded == cfg

    def test_flag_overrides_win(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text('variable = "temperature"\nseed = 1\n')
        loaded = PipelineConfig.from_toml(path, seed=9)
        assert loaded.seed == 9
        assert loaded.variable == "temperature"

    def test_unknown_keys_rejected(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text("workers = 4\n")
        with pytest.raises(ValueError):
            PipelineConfig.from_toml(path)
