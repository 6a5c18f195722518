import configparser

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stormgate import interp

import oracles


def _cfg(method="ordinary", maxlag=1e7, **kw):
    return interp.KrigingConfig(method=method, maxlag=maxlag, **kw)


class TestVariogram:
    def test_two_stations_single_bin(self):
        ev = interp.fit_empirical_variogram([[0, 0], [1000, 0]], [0.0, 2.0], _cfg(maxlag=5000))
        assert len(ev) == 1
        assert ev.semivariances[0] == 2.0 and ev.lags[0] == 1000.0

    def test_constant_field_zero(self, rng):
        ev = interp.fit_empirical_variogram(rng.uniform(0, 1e5, (10, 2)), np.full(10, 3.3),
                                            _cfg(maxlag=2e5))
        assert np.all(ev.semivariances == 0)

    def test_no_pairs_within_maxlag(self):
        with pytest.raises(interp.NotEnoughStations):
            interp.fit_empirical_variogram([[0, 0], [1e6, 0]], [1.0, 2.0], _cfg(maxlag=1000))

    def test_bin_rules(self, rng):
        xy = rng.uniform(0, 2e5, (30, 2))
        z = rng.normal(size=30)
        for rule in ("fixed", "sturges", "fd"):
            ev = interp.fit_empirical_variogram(xy, z, _cfg(maxlag=2.5e5, bin_rule=rule))
            assert ev.counts.sum() == 30 * 29 // 2
            assert np.all(np.diff(ev.lags) > 0)

    def test_spherical_hand_value(self):
        assert interp.spherical(50_000, 0, 10, 100_000) == pytest.approx(6.875)
        assert interp.spherical(100_000, 0.5, 10, 100_000) == 10.5
        assert interp.spherical(0.0, 0.5, 10, 100_000) == 0.0

    @given(st.floats(0, 5), st.floats(0.1, 20), st.floats(1e3, 5e5))
    def test_spherical_monotone_then_flat(self, c0, c, a):
        h = np.linspace(0, 2 * a, 201)
        g = interp.spherical(h, c0, c, a)
        assert np.all(np.diff(g) >= -1e-12)
        np.testing.assert_allclose(g[h >= a], c0 + c)
        ref = [oracles.spherical_gamma(x, c0, c, a) for x in h]
        np.testing.assert_allclose(g, ref, rtol=1e-12, atol=1e-12)

    def test_fit_needs_three_bins(self):
        ev = interp.EmpiricalVariogram(np.array([1.0, 2.0]), np.array([1.0, 2.0]), np.array([1, 1]), 10.0)
        with pytest.raises(interp.VariogramFitError):
            interp.fit_spherical_model(ev)


class TestKrige:
    def test_single_station_collapse(self):
        f = interp.krige([[0, 0], [5e5, 0]], [12.0, 40.0], [[1000, 0]],
                         interp.SphericalModel(0, 1, 5e4), _cfg(maxlag=1e5), return_weights=True)
        assert f.values[0] == pytest.approx(12.0)
        assert f.weights[0][1].sum() == pytest.approx(1.0)

    def test_equidistant_symmetry(self):
        f = interp.krige([[-1000, 0], [1000, 0]], [10.0, 20.0], [[0, 0]],
                         interp.SphericalModel(0, 1, 5e3), _cfg())
        assert f.values[0] == pytest.approx(15.0)

    def test_outside_radius_is_nan(self):
        f = interp.krige([[0, 0]], [1.0], [[1e6, 0]], interp.SphericalModel(0, 1, 1e3), _cfg(maxlag=1e3))
        assert np.isnan(f.values[0]) and f.n_neighbors[0] == 0

    def test_universal_reproduces_linear_trend(self, rng):
        xy = rng.uniform(0, 2e5, (15, 2))
        z = 3.0 + 1e-4 * xy[:, 0] - 2e-5 * xy[:, 1]
        tg = rng.uniform(0, 2e5, (5, 2))
        f = interp.krige(xy, z, tg, interp.SphericalModel(0, 1, 5e4), _cfg("universal"))
        np.testing.assert_allclose(f.values, 3.0 + 1e-4 * tg[:, 0] - 2e-5 * tg[:, 1], atol=1e-8)

    def test_universal_falls_back_with_few_stations(self):
        xy = [[0, 0], [1000, 0], [0, 1000]]
        f = interp.krige(xy, [1.0, 2.0, 3.0], [[500, 500]], interp.SphericalModel(0, 1, 1e4),
                         _cfg("universal"), return_weights=True)
        assert f.weights[0][1].sum() == pytest.approx(1.0)

    def test_duplicate_stations_are_regularized(self):
        xy = [[0, 0], [0, 0], [1000, 0], [0, 2000]]
        f = interp.krige(xy, [1.0, 1.0, 2.0, 3.0], [[100, 100]], interp.SphericalModel(0, 1, 1e4), _cfg())
        assert np.isfinite(f.values[0]) and f.jittered[0]

    def test_identical_coordinates_rejected(self):
        with pytest.raises(interp.DegenerateGeometry):
            interp.krige([[0, 0], [0, 0]], [1.0, 2.0], [[1, 1]], interp.SphericalModel(0, 1, 1e4), _cfg())

    def test_clamping(self):
        f = interp.krige([[-1000, 0], [1000, 0]], [-5.0, -1.0], [[0, 0]],
                         interp.SphericalModel(0, 1, 5e3), _cfg(), floor=0.0)
        assert f.values[0] == 0.0 and f.clamped[0]

    @given(st.integers(5, 25), st.integers(0, 2**31 - 1))
    def test_agrees_with_semivariogram_form(self, n, seed):
        r = np.random.default_rng(seed)
        xy = r.uniform(0, 1e5, (n, 2))
        z = r.normal(size=n)
        model = interp.SphericalModel(0.0, 2.0, float(r.uniform(2e4, 2e5)))
        tg = r.uniform(0, 1e5, 2)
        f = interp.krige(xy, z, tg, model, _cfg(), return_weights=True)
        ref, lam = oracles.ordinary_kriging(xy, z, tg, 0.0, 2.0, model.range_)
        assert f.values[0] == pytest.approx(ref, rel=1e-8, abs=1e-8)
        np.testing.assert_allclose(f.weights[0][1], lam, atol=1e-7)


class TestOverdraftJoinGradient:
    def test_overdraft_replaces_with_extreme(self):
        kf = interp.KrigedField("dwpf", 0, np.array([65.0]), np.zeros(1), np.ones(1, int), np.zeros(1, bool))
        out = interp.overdraft(kf, [[50_000, 0]], [75.0], [[0, 0]], interp.OverdraftRule(200_000, 69.8, 49.17))
        assert out.values[0] == 75.0 and out.overdrafted[0]
        assert kf.values[0] == 65.0

    def test_overdraft_out_of_radius_and_noop(self):
        kf = interp.KrigedField("dwpf", 0, np.array([65.0]), np.zeros(1), np.ones(1, int), np.zeros(1, bool))
        rule = interp.OverdraftRule(200_000, 69.8, 49.17)
        far = interp.overdraft(kf, [[250_000, 0]], [75.0], [[0, 0]], rule)
        calm = interp.overdraft(kf, [[1000, 0]], [60.0], [[0, 0]], rule)
        assert far.values[0] == 65.0 and not far.overdrafted[0]
        assert calm.values[0] == 65.0 and not calm.overdrafted[0]

    @given(st.lists(st.floats(40, 80), min_size=2, max_size=12), st.integers(0, 10**6))
    def test_overdraft_value_is_observed_or_unchanged(self, vals, seed):
        r = np.random.default_rng(seed)
        xy = r.uniform(0, 4e5, (len(vals), 2))
        tg = r.uniform(0, 4e5, (6, 2))
        base = r.uniform(50, 70, 6)
        kf = interp.KrigedField("dwpf", 0, base.copy(), np.zeros(6), np.ones(6, int), np.zeros(6, bool))
        out = interp.overdraft(kf, xy, vals, tg, interp.OverdraftRule(150_000, 69.8, 49.17))
        for i in range(6):
            if out.overdrafted[i]:
                assert out.values[i] in vals
            else:
                assert out.values[i] == base[i]

    def test_rh_gradient_examples(self):
        g = interp.rh_gradient([[0, 0], [10_000, 0], [500_000, 0]], [80.0, 60.0, 50.0])
        np.testing.assert_allclose(g, [2.0, 2.0, 0.0])
        assert interp.rh_gradient([[0, 0], [5000, 0]], [70.0, 70.0]).tolist() == [0.0, 0.0]

    def test_polygon_join_examples(self):
        xy = [[0, 0], [1000, 0]]
        assert interp.polygon_join(xy, [0.0, 1.0], [[0, 0]], 5000, "any")[0] == 1.0
        assert interp.polygon_join(xy, [18.0, 25.0], [[0, 0]], 5000)[0] == 25.0
        assert interp.polygon_join(xy, [0.3, 0.1], [[1e6, 0]], 5000, empty=0.0)[0] == 0.0

    @given(st.lists(st.booleans(), min_size=1, max_size=15), st.integers(0, 10**6))
    def test_polygon_join_or_matches_brute_force(self, flags, seed):
        r = np.random.default_rng(seed)
        xy = r.uniform(0, 3e5, (len(flags), 2))
        tg = r.uniform(0, 3e5, (4, 2))
        got = interp.polygon_join(xy, np.asarray(flags, float), tg, 100_000, "any")
        for i, t in enumerate(tg):
            ref = any(f for f, p in zip(flags, xy) if np.hypot(*(p - t)) <= 100_000)
            assert got[i] == float(ref)


class TestSeriesAndHoldout:
    def test_fallback_reuses_last_model(self, rng):
        xy = rng.uniform(0, 2e5, (8, 2))
        Z = rng.normal(20, 3, (3, 8))
        Z[1, 2:] = np.nan  # two stations: one pair -> one bin -> fit fails
        res = interp.interpolate_series(interp.ParamSpec("tmpf", "ordinary", 400.0), Z, xy,
                                        rng.uniform(0, 2e5, (4, 2)))
        assert res.fallback_hours == 1
        assert res.models[1].fallback and res.models[1].range_ == res.models[0].range_
        assert np.isfinite(res.values).all()

    def test_join_flags_and_precip(self):
        xy = np.array([[0.0, 0.0], [1e6, 0]])
        Z = np.array([[1.0, 0.0], [np.nan, np.nan]])
        res = interp.interpolate_series(interp.ParamSpec("ts_flag", "join"), Z, xy, [[0, 0]])
        np.testing.assert_array_equal(res.values[:, 0], [1.0, 0.0])
        res = interp.interpolate_series(interp.ParamSpec("p01i", "join"), Z, xy, [[5e5, 0]])
        np.testing.assert_array_equal(res.values[:, 0], [0.0, 0.0])

    def test_holdout_constant_field_zero(self, rng):
        xy = rng.uniform(0, 2e5, (8, 2))
        m, sd, n = interp.holdout_validate(0, np.full((48, 8), 5.0), xy,
                                           interp.ParamSpec("tmpf", "ordinary", 400.0))
        assert m == pytest.approx(0.0, abs=1e-9) and n == 2

    def test_isolated_station_has_larger_error(self):
        r = np.random.default_rng(4)
        dense = r.uniform(0, 60_000, (12, 2))
        xy = np.vstack([dense, [[400_000, 400_000]]])
        model = interp.SphericalModel(0.0, 4.0, 150_000)
        C = model.covariance(np.hypot(*(xy[:, None, :] - xy[None, :, :]).transpose(2, 0, 1)))
        L = np.linalg.cholesky(C + 1e-9 * np.eye(len(xy)))
        Z = 20 + (L @ r.normal(size=(len(xy), 72))).T
        spec = interp.ParamSpec("tmpf", "ordinary", 1000.0)
        d_mean = interp.holdout_validate(0, Z, xy, spec)[0]
        i_mean = interp.holdout_validate(12, Z, xy, spec)[0]
        assert i_mean >= d_mean


def test_param_config_round_trip(tmp_path):
    specs = interp.default_param_specs()
    p = tmp_path / "p.ini"
    interp.write_param_config(specs, p)
    assert interp.read_param_config(p) == specs
    cp = configparser.ConfigParser()
    cp["x"] = {"bogus": "1"}
    with pytest.raises(ValueError):
        interp.param_specs_from_sections(cp)
