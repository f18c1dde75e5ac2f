import datetime as dt

import numpy as np
import pytest

from pbckit.cdf import CdfForecast
from pbckit.climatology import IndicatorField, ThresholdField
from pbckit.grids import GridSpec
from pbckit.scoring import (
    EvalMask,
    bbox_mask,
    bias_map,
    bootstrap_ci,
    brier_scores,
    bss_extreme,
    climatological_rps,
    evaluation_mask,
    rps,
    rpss_aggregated,
    rpss_global,
    rpss_spatial,
    season_of,
    stratify,
)

K = 5
D = dt.date(2023, 6, 15)
CLIM = np.arange(1, K + 1) / K


def _pair(grid, fvals, ovals, dates=None, variable="temperature"):
    dates = dates or tuple(D + dt.timedelta(days=7 * i) for i in range(fvals.shape[0]))
    f = CdfForecast(variable, K, dates, fvals, grid)
    o = IndicatorField(variable, K, dates, ovals, grid)
    return f, o


def _fill(grid, row, n_dates=1):
    return np.broadcast_to(np.asarray(row, dtype=np.float64),
                           (n_dates,) + grid.shape + (K,)).copy()


class TestRps:
    def test_hand_example(self, flat_grid):
        # F = climatology, O lands in the middle bin: per-bin squared errors
        # 0.04 + 0.16 + 0.16 + 0.04 + 0 = 0.40.
        f, o = _pair(flat_grid, _fill(flat_grid, CLIM), _fill(flat_grid, [0, 0, 1, 1, 1]))
        np.testing.assert_allclose(rps(f, o), 0.40)
        np.testing.assert_allclose(climatological_rps(o), 0.40)

    def test_perfect_forecast_zero(self, flat_grid):
        ov = _fill(flat_grid, [0, 1, 1, 1, 1])
        f, o = _pair(flat_grid, ov, ov)
        np.testing.assert_array_equal(rps(f, o), 0.0)


class TestSkillIdentities:
    def test_climatological_forecast_scores_zero(self, small_grid):
        rng = np.random.default_rng(0)
        kth = rng.integers(0, K, size=(6,) + small_grid.shape)
        ovals = (np.arange(K) >= kth[..., None]).astype(np.float64)
        f, o = _pair(small_grid, _fill(small_grid, CLIM, 6), ovals)
        assert np.all(np.abs(rpss_global(f, o, small_grid)) < 1e-12)
        assert np.all(np.abs(rpss_spatial(f, o)) < 1e-12)
        assert abs(rpss_aggregated(f, o, small_grid)) < 1e-12
        assert np.all(np.abs(bss_extreme(f, o, small_grid, which="top")) < 1e-12)
        assert np.all(np.abs(bss_extreme(f, o, small_grid, which="bottom")) < 1e-12)

    def test_perfect_forecast_scores_one(self, small_grid):
        rng = np.random.default_rng(1)
        kth = rng.integers(0, K, size=(6,) + small_grid.shape)
        ovals = (np.arange(K) >= kth[..., None]).astype(np.float64)
        f, o = _pair(small_grid, ovals.copy(), ovals)
        assert np.all(rpss_global(f, o, small_grid) == 1.0)
        assert rpss_aggregated(f, o, small_grid) == 1.0
        assert np.all(bss_extreme(f, o, small_grid) == 1.0)

    def test_single_cell_climatology_case(self, flat_grid):
        f, o = _pair(flat_grid, _fill(flat_grid, CLIM), _fill(flat_grid, [0, 0, 1, 1, 1]))
        assert rpss_global(f, o, flat_grid)[0] == 0.0


class TestWeighting:
    def test_cosine_latitude_weights_applied(self):
        grid = GridSpec(np.array([60.0, 0.0]), np.array([0.0]), np.ones((2, 1)))
        fvals = np.zeros((1, 2, 1, K))
        fvals[0, 0, 0] = [0, 0, 1, 1, 1]  # perfect at 60N
        fvals[0, 1, 0] = CLIM  # climatology at the equator
        ovals = _fill(grid, [0, 0, 1, 1, 1])
        f, o = _pair(grid, fvals, ovals)
        w = np.cos(np.deg2rad(60.0))
        expected = 1.0 - (w * 0.0 + 1.0 * 0.40) / (w * 0.40 + 1.0 * 0.40)
        np.testing.assert_allclose(rpss_global(f, o, grid)[0], expected)

    def test_aggregated_is_double_sum(self, small_grid):
        rng = np.random.default_rng(3)
        n = 5
        fvals = np.sort(rng.random((n,) + small_grid.shape + (K,)), axis=-1)
        fvals[..., -1] = 1.0
        kth = rng.integers(0, K, size=(n,) + small_grid.shape)
        ovals = (np.arange(K) >= kth[..., None]).astype(np.float64)
        f, o = _pair(small_grid, fvals, ovals)
        got = rpss_aggregated(f, o, small_grid)
        w = small_grid.cell_weights
        num = np.sum(w * rps(f, o))
        den = np.sum(w * climatological_rps(o))
        np.testing.assert_allclose(got, 1.0 - num / den)

    def test_single_date_aggregated_equals_global(self, small_grid):
        rng = np.random.default_rng(4)
        fvals = np.sort(rng.random((1,) + small_grid.shape + (K,)), axis=-1)
        fvals[..., -1] = 1.0
        kth = rng.integers(0, K, size=(1,) + small_grid.shape)
        ovals = (np.arange(K) >= kth[..., None]).astype(np.float64)
        f, o = _pair(small_grid, fvals, ovals)
        np.testing.assert_allclose(
            rpss_aggregated(f, o, small_grid), rpss_global(f, o, small_grid)[0]
        )


class TestBrier:
    def test_top_bin_event_and_baseline(self, flat_grid):
        fvals = _fill(flat_grid, [0.1, 0.2, 0.3, 0.9, 1.0])
        ovals = _fill(flat_grid, [1, 1, 1, 1, 1])  # bottom-bin observation
        f, o = _pair(flat_grid, fvals, ovals)
        bs, base = brier_scores(f, o, which="top")
        np.testing.assert_allclose(bs, (0.9 - 1.0) ** 2)
        np.testing.assert_allclose(base, (0.8 - 1.0) ** 2)
        np.testing.assert_allclose(bss_extreme(f, o, flat_grid, which="top")[0],
                                   1.0 - 0.01 / 0.04)

    def test_bottom_bin_event_and_baseline(self, flat_grid):
        fvals = _fill(flat_grid, [0.3, 0.4, 0.5, 0.8, 1.0])
        ovals = _fill(flat_grid, [0, 0, 1, 1, 1])
        f, o = _pair(flat_grid, fvals, ovals)
        bs, base = brier_scores(f, o, which="bottom")
        np.testing.assert_allclose(bs, 0.09)
        np.testing.assert_allclose(base, 0.04)

    def test_unknown_extreme_rejected(self, flat_grid):
        f, o = _pair(flat_grid, _fill(flat_grid, CLIM), _fill(flat_grid, [0, 0, 1, 1, 1]))
        with pytest.raises(ValueError):
            brier_scores(f, o, which="middle")


class TestBiasMap:
    def test_mean_over_dates(self, flat_grid):
        fvals = np.concatenate([_fill(flat_grid, [0.4, 0.6, 0.8, 1.0, 1.0]),
                                _fill(flat_grid, [0.0, 0.2, 0.4, 0.6, 1.0])])
        ovals = np.concatenate([_fill(flat_grid, [0, 0, 1, 1, 1])] * 2)
        f, o = _pair(flat_grid, fvals, ovals)
        got = bias_map(f, o)
        expected = 0.5 * (fvals[0, 0, 0] - ovals[0, 0, 0]) + 0.5 * (
            fvals[1, 0, 0] - ovals[1, 0, 0]
        )
        np.testing.assert_allclose(got[0, 0], expected)

    def test_nan_dates_dropped(self, flat_grid):
        fvals = np.concatenate([_fill(flat_grid, [0.4, 0.6, 0.8, 1.0, 1.0]),
                                _fill(flat_grid, [0.0, 0.2, 0.4, 0.6, 1.0])])
        ovals = np.concatenate([_fill(flat_grid, [0, 0, 1, 1, 1])] * 2)
        ovals[1] = np.nan
        f, o = _pair(flat_grid, fvals, ovals)
        np.testing.assert_allclose(bias_map(f, o)[0, 0], fvals[0, 0, 0] - ovals[0, 0, 0])


class TestMasks:
    def test_land_gate_for_temperature(self, small_grid):
        mask = evaluation_mask(small_grid, "temperature", 2)
        assert mask.included.shape == (2,) + small_grid.shape
        np.testing.assert_array_equal(mask.included[0], small_grid.land_fraction >= 0.5)

    def test_mslp_keeps_everything(self, small_grid):
        mask = evaluation_mask(small_grid, "mslp", 1)
        assert mask.included.all()

    def test_precipitation_requires_thresholds(self, small_grid):
        with pytest.raises(ValueError):
            evaluation_mask(small_grid, "precipitation", 1)

    def test_arid_cells_excluded_per_date(self, small_grid):
        vals = np.ones((2,) + small_grid.shape + (K - 1,))
        vals[0, 0, 0] = 0.0  # arid on the first date only
        thr = ThresholdField("precipitation", K,
                             (D, D + dt.timedelta(days=7)), vals, small_grid)
        mask = evaluation_mask(small_grid, "precipitation", 2, thresholds=thr)
        assert not mask.included[0, 0, 0]
        assert bool(mask.included[1, 0, 0]) == (small_grid.land_fraction[0, 0] >= 0.5)

    def test_bbox_wraps_longitude(self, small_grid):
        box = bbox_mask(small_grid, (-90.0, 90.0, 350.0, 10.0))
        np.testing.assert_array_equal(box[:, 0], True)   # lon 0 inside
        np.testing.assert_array_equal(box[:, 1], False)  # lon 90 outside

    def test_bbox_closed_bounds(self, small_grid):
        box = bbox_mask(small_grid, (0.0, 30.0, 0.0, 90.0))
        assert box[1, 0] and box[2, 1]  # lat 30 and lat 0 at the edges count

    def test_all_excluded_raises(self, flat_grid):
        f, o = _pair(flat_grid, _fill(flat_grid, CLIM), _fill(flat_grid, [0, 0, 1, 1, 1]))
        empty = EvalMask(np.zeros((1,) + flat_grid.shape, dtype=bool), False, False)
        with pytest.raises(ValueError):
            rpss_global(f, o, flat_grid, empty)


class TestBootstrap:
    def test_deterministic_given_seed(self):
        scores = np.random.default_rng(0).normal(0.1, 0.02, size=40)
        assert bootstrap_ci(scores, seed=7) == bootstrap_ci(scores, seed=7)
        assert bootstrap_ci(scores, seed=7) != bootstrap_ci(scores, seed=8)

    def test_constant_series_degenerates(self):
        lo, hi = bootstrap_ci(np.full(20, 0.3))
        assert lo == hi == pytest.approx(0.3)

    def test_interval_brackets_mean_within_range(self):
        scores = np.array([0.05, 0.08])
        lo, hi = bootstrap_ci(scores, seed=0)
        assert 0.05 <= lo <= np.mean(scores) <= hi <= 0.08

    def test_nan_scores_ignored(self):
        lo, hi = bootstrap_ci(np.array([0.2, np.nan, 0.2]))
        assert lo == hi == pytest.approx(0.2)

    def test_empty_series(self):
        lo, hi = bootstrap_ci(np.array([]))
        assert np.isnan(lo) and np.isnan(hi)


class TestStratify:
    def _data(self, grid, n=12):
        rng = np.random.default_rng(6)
        dates = tuple(dt.date(2023, 1, 5) + dt.timedelta(days=30 * i) for i in range(n))
        fvals = np.sort(rng.random((n,) + grid.shape + (K,)), axis=-1)
        fvals[..., -1] = 1.0
        kth = rng.integers(0, K, size=(n,) + grid.shape)
        ovals = (np.arange(K) >= kth[..., None]).astype(np.float64)
        return _pair(grid, fvals, ovals, dates=dates)

    def test_season_assignment(self):
        assert season_of(dt.date(2023, 12, 1)) == "DJF"
        assert season_of(dt.date(2023, 2, 28)) == "DJF"
        assert season_of(dt.date(2023, 5, 31)) == "MAM"
        assert season_of(dt.date(2023, 8, 1)) == "JJA"
        assert season_of(dt.date(2023, 11, 30)) == "SON"

    def test_seasons_partition_dates(self, small_grid):
        f, o = self._data(small_grid)
        reports = stratify(f, o, small_grid, with_ci=False)
        globe = [r for r in reports if r.region == "globe"]
        all_dates = next(r for r in globe if r.season is None)
        by_season = [r for r in globe if r.season is not None]
        assert sum(r.n_dates for r in by_season) == all_dates.n_dates == 12
        seen = set()
        for r in by_season:
            seen |= set(r.per_date)
        assert seen == set(f.target_dates)

    def test_global_stratum_matches_unstratified(self, small_grid):
        f, o = self._data(small_grid)
        reports = stratify(f, o, small_grid, with_ci=False)
        globe = next(r for r in reports if r.region == "globe" and r.season is None)
        series = rpss_global(f, o, small_grid)
        np.testing.assert_allclose(globe.value, np.nanmean(series))

    def test_region_masks_are_boxes(self, small_grid):
        f, o = self._data(small_grid)
        reports = stratify(f, o, small_grid, with_ci=False)
        tropics = next(r for r in reports if r.region == "tropics" and r.season is None)
        box = bbox_mask(small_grid, (-23.5, 23.5, 0.0, 360.0))
        mask = EvalMask(np.broadcast_to(box, (12,) + small_grid.shape).copy(),
                        False, False)
        series = rpss_global(f, o, small_grid, mask)
        np.testing.assert_allclose(tropics.value, np.nanmean(series))

    def test_report_serialization(self, small_grid):
        f, o = self._data(small_grid)
        reports = stratify(f, o, small_grid, seed=1)
        d = reports[0].to_dict()
        assert {"metric", "value", "season", "region", "ci", "n_dates", "per_date"} <= set(d)
        assert reports[0].to_json()
