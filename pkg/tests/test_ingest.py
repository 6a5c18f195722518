import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stormgate import ingest


def _ticks(hour, per_county):
    t0 = pd.Timestamp(hour, tz="UTC")
    rows = []
    for cid, vals in per_county.items():
        for k, v in enumerate(vals):
            if v is not None:
                rows.append({"county_id": cid, "timestamp_utc": t0 + pd.Timedelta(minutes=15 * k),
                             "customers_out": v})
    return pd.DataFrame(rows)


class TestFillShortGaps:
    def test_interior_gap_is_linear(self):
        y, long_gap = ingest.fill_short_gaps([10, np.nan, np.nan, 16])
        np.testing.assert_allclose(y, [10, 12, 14, 16])
        assert not long_gap.any()

    def test_run_longer_than_max_gap_is_left(self):
        src = [10] + [np.nan] * 5 + [16]
        y, long_gap = ingest.fill_short_gaps(src, max_gap=4)
        np.testing.assert_array_equal(np.isnan(y), np.isnan(src))
        assert long_gap.sum() == 5

    def test_leading_gap_kept(self):
        y, long_gap = ingest.fill_short_gaps([np.nan, 7, 8])
        assert np.isnan(y[0]) and long_gap[0]

    def test_rejects_non_contiguous_hours(self):
        hours = pd.DatetimeIndex(["2021-06-01 00:00", "2021-06-01 02:00"], tz="UTC")
        with pytest.raises(ingest.IngestError):
            ingest.fill_short_gaps([1.0, 2.0], hours=hours)

    @given(st.lists(st.one_of(st.none(), st.floats(0, 1e6)), min_size=1, max_size=60),
           st.integers(0, 6))
    def test_observed_untouched_and_long_runs_kept(self, raw, max_gap):
        src = np.array([np.nan if v is None else v for v in raw])
        y, _ = ingest.fill_short_gaps(src, max_gap)
        obs = ~np.isnan(src)
        np.testing.assert_array_equal(y[obs], src[obs])
        # every still-missing run is either long or touches an edge
        miss = np.isnan(y)
        i = 0
        while i < len(y):
            if miss[i]:
                j = i
                while j < len(y) and miss[j]:
                    j += 1
                assert j - i > max_gap or i == 0 or j == len(y)
                i = j
            else:
                i += 1


class TestMaxConcurrency:
    def test_picks_tick_with_max_state_total(self):
        g = ingest.aggregate_max_concurrency(_ticks("2021-06-01 00:00", {"A": [1, 5, 2, 0], "B": [0, 1, 9, 0]}))
        assert g.chosen_tick[0] == 2
        np.testing.assert_array_equal(g.values[:, 0], [2, 9])
        assert g.state_total[0] == 11

    def test_constant_single_county(self):
        g = ingest.aggregate_max_concurrency(_ticks("2021-06-01 00:00", {"A": [3, 3, 3, 3]}))
        assert g.values[0, 0] == 3

    def test_tie_goes_to_earliest_tick(self):
        g = ingest.aggregate_max_concurrency(_ticks("2021-06-01 00:00", {"A": [0] * 4, "B": [0] * 4}))
        assert g.chosen_tick[0] == 0
        np.testing.assert_array_equal(g.values[:, 0], [0, 0])

    def test_empty_hour_is_missing(self):
        recs = pd.concat([_ticks("2021-06-01 00:00", {"A": [1, 2, 3, 4]}),
                          _ticks("2021-06-01 02:00", {"A": [5, 5, 5, 5]})])
        g = ingest.aggregate_max_concurrency(recs)
        assert len(g.hours) == 3
        assert g.missing[0, 1] and np.isnan(g.state_total[1])

    def test_rejects_off_grid_timestamp(self):
        df = pd.DataFrame({"county_id": ["A"], "timestamp_utc": ["2021-06-01T00:07:00Z"], "customers_out": [1]})
        with pytest.raises(ingest.IngestError):
            ingest.aggregate_max_concurrency(df)

    def test_rejects_negative_counts(self):
        with pytest.raises(ingest.IngestError):
            ingest.aggregate_max_concurrency(_ticks("2021-06-01 00:00", {"A": [1, -1, 0, 0]}))

    @given(st.lists(st.lists(st.integers(0, 1000), min_size=4, max_size=4), min_size=1, max_size=5))
    def test_state_total_bounded_by_sum_of_county_maxima(self, counties):
        per = {f"C{i}": v for i, v in enumerate(counties)}
        g = ingest.aggregate_max_concurrency(_ticks("2021-06-01 00:00", per))
        assert g.state_total[0] <= sum(max(v) for v in counties)
        assert g.state_total[0] == max(sum(col) for col in zip(*counties))

    def test_frame_round_trip(self):
        g = ingest.aggregate_max_concurrency(_ticks("2021-06-01 00:00", {"A": [1, 5, 2, 0], "B": [0, 1, 9, 0]}))
        back = ingest.OutageHourlyGrid.from_frame(g.to_frame())
        np.testing.assert_array_equal(back.values, g.values)
        assert back.counties == g.counties


class TestWind:
    def test_decompose_examples(self):
        np.testing.assert_allclose(ingest.decompose_wind(10, 90), (-5.14444, 0.0), atol=1e-12)
        np.testing.assert_allclose(ingest.decompose_wind(10, 0), (0.0, -5.14444), atol=1e-12)
        np.testing.assert_allclose(ingest.decompose_wind(0, 217), (0.0, 0.0), atol=0)

    def test_recover_examples(self):
        speed, theta = ingest.recover_wind(-5.14444, 0.0)
        assert speed == pytest.approx(5.14444, abs=1e-12)
        assert theta == pytest.approx(90.0, abs=1e-9)
        assert ingest.recover_wind(0.0, 0.0) == (0.0, 0.0)

    @given(st.floats(1e-3, 200), st.floats(0, 359.999))
    def test_round_trip(self, kt, deg):
        speed, theta = ingest.recover_wind(*ingest.decompose_wind(kt, deg))
        assert abs(speed - kt * ingest.KT_TO_MS) < 1e-9
        ang = abs((theta - deg + 180.0) % 360.0 - 180.0)
        assert ang < 1e-6


def _wx(rows):
    base = {c: np.nan for c in ingest.WEATHER_COLUMNS}
    return pd.DataFrame([{**base, "wxcodes": "", **r} for r in rows])


class TestResample:
    def test_mean_and_max_wind_direction(self):
        df = _wx([
            {"station_id": "K1", "timestamp_utc": "2021-06-01T00:10:00Z", "tmpf": 70, "sknt": 5, "drct": 90},
            {"station_id": "K1", "timestamp_utc": "2021-06-01T00:30:00Z", "tmpf": 72, "sknt": 12, "drct": 180},
            {"station_id": "K1", "timestamp_utc": "2021-06-01T00:50:00Z", "sknt": 8, "drct": 270},
        ])
        out = ingest.resample_weather_hourly(df)
        row = out.iloc[0]
        assert row["tmpf"] == 71 and row["sknt"] == 12 and row["drct"] == 180
        u, v = ingest.decompose_wind(12, 180)
        assert row["u"] == pytest.approx(u) and row["v"] == pytest.approx(v)

    def test_missing_precip_is_zero_and_gust_stays_missing(self):
        df = _wx([{"station_id": "K1", "timestamp_utc": "2021-06-01T00:53:00Z", "tmpf": 60}])
        row = ingest.resample_weather_hourly(df).iloc[0]
        assert row["p01i"] == 0.0 and np.isnan(row["gust"])

    def test_forward_fill_limit_and_flags(self):
        df = _wx([{"station_id": "K1", "timestamp_utc": "2021-06-01T00:53:00Z", "tmpf": 60,
                   "wxcodes": "TS|RA"}])
        out = ingest.resample_weather_hourly(df, "2021-06-01T00:00Z", "2021-06-01T04:00Z")
        assert len(out) == 5
        np.testing.assert_array_equal(out["tmpf"].isna().to_numpy(), [False, False, False, True, True])
        assert out["ts_flag"].tolist() == [True, False, False, False, False]
        assert out[["ts_flag", "sq_flag", "hr_flag"]].notna().all().all()

    def test_one_row_per_station_hour(self):
        rng = np.random.default_rng(0)
        t = pd.Timestamp("2021-06-01", tz="UTC") + pd.to_timedelta(rng.integers(0, 600, 80), unit="min")
        df = _wx([{"station_id": f"K{i % 3}", "timestamp_utc": ts, "tmpf": 60} for i, ts in enumerate(t)])
        out = ingest.resample_weather_hourly(df, "2021-06-01T00:00Z", "2021-06-01T12:00Z")
        assert len(out) == 3 * 13
        assert not out.duplicated(["station_id", "hour"]).any()


def test_projection_origin_maps_to_zero():
    x, y = ingest.project_lonlat([-84.0, -85.0], [43.0, 44.0], -84.0, 43.0)
    assert x[0] == 0 and y[0] == 0
    assert y[1] == pytest.approx(ingest.EARTH_RADIUS_M * np.pi / 180)
