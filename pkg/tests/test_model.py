import json
import struct

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.linear_model import LogisticRegression

from stormgate import features as ft
from stormgate import model as md

import oracles


def _toy(n=400, d=6, seed=0, signal=0):
    r = np.random.default_rng(seed)
    X = r.normal(size=(n, d))
    y = (X[:, signal] + 0.3 * r.normal(size=n) > 0.8).astype(float)
    return X, y


class TestL1:
    def test_matches_sklearn_objective(self):
        X, y = _toy()
        lam = 0.02
        w, b = md.l1_logistic(X, y, lam, tol=1e-12, max_iter=20000)
        sk = LogisticRegression(penalty="l1", C=1.0 / (len(y) * lam), solver="saga", tol=1e-10,
                                max_iter=100000).fit(X, y)

        def obj(w_, b_):
            return np.mean(md._logloss_terms(X @ w_ + b_, y)) + lam * np.abs(w_).sum()

        assert obj(w, b) <= obj(sk.coef_[0], sk.intercept_[0]) + 1e-8
        np.testing.assert_allclose(w, sk.coef_[0], atol=2e-3)

    def test_lambda_max_zeroes_everything(self):
        X, y = _toy()
        w, _ = md.l1_logistic(X, y, md.lambda_max(X, y) * 1.001)
        assert np.all(w == 0)

    def test_selects_the_signal_feature(self):
        X, y = _toy(signal=3)
        sel = md.fit_l1_selection(X, y, [f"f{i}" for i in range(6)], n_select=1)
        assert sel.selected == ["f3"]

    def test_duplicate_column_selected_at_most_once(self):
        X, y = _toy(signal=2)
        X = np.hstack([X, X[:, [2]]])
        sel = md.fit_l1_selection(X, y, [f"f{i}" for i in range(7)], n_select=2)
        assert not {"f2", "f6"} <= set(sel.selected)
        assert len(sel.coef) == 7

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            md.fit_l1_selection(np.ones((10, 2)), np.zeros(10), ["a", "b"])

    def test_folds_are_forward_chained(self):
        folds = list(md.time_series_folds(100, 3))
        assert len(folds) == 3
        for tr, va in folds:
            assert tr.max() < va.min() and tr[0] == 0


class TestL2Gate:
    def test_matches_sklearn(self):
        X, y = _toy(seed=1)
        w, b, _ = md.l2_logistic(X, y, 0.1, {0: 1.0, 1: 5.0}, tol=1e-9)
        sk = LogisticRegression(C=0.1, class_weight={0: 1.0, 1: 5.0}, tol=1e-12, max_iter=10000).fit(X, y)
        np.testing.assert_allclose(w, sk.coef_[0], atol=1e-5)
        assert b == pytest.approx(sk.intercept_[0], abs=1e-5)

    def test_separable_recall_one(self):
        X = np.r_[np.linspace(-3, -1, 20), np.linspace(1, 3, 20)][:, None]
        y = np.r_[np.zeros(20), np.ones(20)]
        g = md.fit_l2_gate(X, y, ["x"], class_weight={0: 1.0, 1: 1.0}, tau=0.5)
        out = md.gate_predict(g, X)
        assert out.passed[y == 1].all()

    def test_huge_positive_weight_passes_everything(self):
        X = np.array([[0.0], [1.0], [2.0], [3.0]])
        y = np.array([0.0, 1.0, 0.0, 1.0])
        w, b, _ = md.l2_logistic(X, y, 1.0, {0: 1.0, 1: 1e6})
        assert np.all(md.LogisticGate(["x"], w, b, 1.0, {0: 1, 1: 1e6}, 0.5).proba(X) > 0.5)

    def test_independent_labels_give_weighted_base_rate(self):
        r = np.random.default_rng(2)
        X = r.normal(size=(20000, 2))
        y = (r.random(20000) < 0.2).astype(float)
        w, b, _ = md.l2_logistic(X, y, 1.0, {0: 1.0, 1: 5.0})
        assert np.abs(w).max() < 0.05
        p = 1 / (1 + np.exp(-b))
        assert p == pytest.approx(0.2 * 5 / (0.2 * 5 + 0.8), abs=0.01)

    def test_c_tie_prefers_stronger_penalty(self):
        # alternating classes so every forward fold is separable and scores AP = 1
        y = np.tile([0.0, 1.0], 30)
        X = np.where(y == 1, 2.0, -2.0)[:, None] + np.linspace(0, 0.5, 60)[:, None]
        g = md.fit_l2_gate(X, y, ["x"])
        assert set(g.cv_scores.values()) == {1.0}
        assert g.C == 1e-3

    def test_zero_gate_passes_nothing(self):
        g = md.LogisticGate(["a", "b"], np.zeros(2), 0.0, 1.0, {0: 1, 1: 5}, 0.7)
        out = md.gate_predict(g, np.random.default_rng(0).normal(size=(50, 2)))
        np.testing.assert_array_equal(out.probability, 0.5)
        assert out.pass_rate == 0.0

    def test_missing_feature_rows_rejected(self):
        g = md.LogisticGate(["a"], np.array([10.0]), 0.0, 1.0, {0: 1, 1: 5}, 0.7)
        out = md.gate_predict(g, pd.DataFrame({"a": [1.0, np.nan]}))
        assert out.passed.tolist() == [True, False] and out.rejected[1]
        with pytest.raises(KeyError):
            md.gate_predict(g, pd.DataFrame({"b": [1.0]}))

    @given(st.floats(0.01, 0.98), st.floats(0.01, 0.98), st.integers(0, 1000))
    def test_pass_set_monotone_in_tau(self, t1, t2, seed):
        lo, hi = sorted((t1, t2))
        r = np.random.default_rng(seed)
        coef, X = r.normal(size=3), r.normal(size=(100, 3))
        a = md.gate_predict(md.LogisticGate(list("abc"), coef, 0.1, 1.0, {0: 1, 1: 5}, lo), X).passed
        b = md.gate_predict(md.LogisticGate(list("abc"), coef, 0.1, 1.0, {0: 1, 1: 5}, hi), X).passed
        assert np.all(b <= a)

    def test_zero_weight_feature_changes_nothing(self):
        X = np.random.default_rng(3).normal(size=(20, 2))
        g1 = md.LogisticGate(["a"], np.array([0.7]), -0.2, 1.0, {0: 1, 1: 5})
        g2 = md.LogisticGate(["a", "b"], np.array([0.7, 0.0]), -0.2, 1.0, {0: 1, 1: 5})
        np.testing.assert_array_equal(g1.proba(X[:, :1]), g2.proba(X))

    def test_invalid_tau(self):
        with pytest.raises(ValueError):
            md.LogisticGate(["a"], np.zeros(1), 0.0, 1.0, {0: 1, 1: 5}, 1.0)


class TestRegressor:
    def test_zero_network_outputs_bias(self):
        reg = md.init_regressor(["a", "b"], 4, seed=0, out_bias=2.5)
        p = {k: np.zeros_like(v) for k, v in reg.params().items()}
        p["b_out"] = np.array([2.5])
        np.testing.assert_array_equal(md.cell_forward(p, np.random.default_rng(0).normal(size=(5, 2)))[0], 2.5)

    def test_zero_output_weights_ignore_state(self):
        reg = md.init_regressor(["a"], 3, seed=1, out_bias=-1.0)
        reg.w_out[:] = 0
        np.testing.assert_array_equal(reg.predict(np.random.default_rng(1).normal(size=(4, 1))), -1.0)

    def test_forward_matches_oracle(self):
        reg = md.init_regressor([f"f{i}" for i in range(35)], 16, seed=3)
        reg.b[:] = np.random.default_rng(4).normal(size=64)
        x = np.random.default_rng(5).uniform(0, 1, 35)
        ref = oracles.lstm_step(reg.W, reg.U, reg.b, reg.w_out, reg.b_out, x, np.zeros(16), np.zeros(16))
        assert reg.predict(x[None, :])[0] == pytest.approx(ref, abs=1e-13)

    def test_shape_validation(self):
        reg = md.init_regressor(["a"], 2)
        with pytest.raises(ValueError):
            md.RecurrentRegressor(["a", "b"], reg.W, reg.U, reg.b, reg.w_out, reg.b_out)
        with pytest.raises(ValueError):
            reg.predict(np.zeros((1, 3)))

    @given(st.integers(0, 10**6))
    def test_gradient_check_property(self, seed):
        r = np.random.default_rng(seed)
        reg = md.init_regressor(["a", "b", "c"], 3, seed=seed)
        p = {k: np.array(v) for k, v in reg.params().items()}
        errs = md.gradient_check(p, r.normal(size=(4, 3)), r.normal(size=4),
                                 r.normal(size=(4, 3)), r.normal(size=(4, 3)))
        assert max(errs.values()) < 1e-4

    def test_constant_target_converges(self):
        X = np.random.default_rng(6).uniform(0, 1, (400, 3))
        reg = md.train_regressor(X, np.full(400, 3.0), list("abc"),
                                 md.TrainConfig(max_epochs=30, patience=30, lr=1e-2))
        assert np.mean((reg.predict(X) - 3.0) ** 2) < 1e-4

    def test_learns_linear_signal(self):
        X = np.random.default_rng(7).uniform(0, 1, (2000, 3))
        t = 2.0 * X[:, 1]
        reg = md.train_regressor(X, t, list("abc"), md.TrainConfig(lr=1e-2, max_epochs=30, patience=5))
        assert min(reg.history) < 0.05 * t.var()

    def test_training_is_reproducible(self):
        X = np.random.default_rng(8).uniform(0, 1, (300, 2))
        t = X.sum(axis=1)
        cfg = md.TrainConfig(max_epochs=3, seed=4)
        a, b = md.train_regressor(X, t, ["a", "b"], cfg), md.train_regressor(X, t, ["a", "b"], cfg)
        for k in md.PARAM_NAMES:
            np.testing.assert_array_equal(getattr(a, k), getattr(b, k))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            md.train_regressor(np.array([[np.nan]]), np.array([1.0]), ["a"])


class TestStateSeries:
    hours = pd.date_range("2021-06-01", periods=100, freq="h", tz="UTC")

    def test_expm1_inversion_and_sum(self):
        rows = self.hours[[0, 0, 1]]
        s, avail = md.predict_state_series(rows, np.log1p([100.0, 50.0, 100.0]), [True, True, False],
                                           self.hours)
        assert s[48] == pytest.approx(150.0) and avail[48]
        assert s[49] == 0 and not avail[49]

    def test_nothing_passed(self):
        s, avail = md.predict_state_series(self.hours[:5], np.zeros(5), np.zeros(5, bool), self.hours)
        assert not avail.any() and np.all(s == 0)

    @given(st.lists(st.floats(-5, 20), min_size=1, max_size=30))
    def test_nonnegative_and_finite(self, logs):
        n = len(logs)
        s, _ = md.predict_state_series(self.hours[:n], logs, np.ones(n, bool), self.hours)
        assert np.all(s >= 0) and np.all(np.isfinite(s))


def _model():
    names = ["a", "b", "c"]
    sc = ft.fit_scaler(np.random.default_rng(0).normal(size=(10, 3)), names)
    gate = md.LogisticGate(["a", "c"], np.array([0.5, -1.0]), 0.25, 0.01, {0: 1.0, 1: 5.0}, 0.7)
    return md.TwoStageModel(sc, gate, md.init_regressor(names, 4, seed=1),
                            md.init_regressor(names, 4, seed=2), {"k": 1}, seed=9)


class TestBundle:
    def test_round_trip(self, tmp_path):
        m = _model()
        md.save_bundle(m, tmp_path / "m.bin")
        back = md.load_bundle(tmp_path / "m.bin")
        for k in md.PARAM_NAMES:
            np.testing.assert_array_equal(getattr(back.regressor, k), getattr(m.regressor, k))
            np.testing.assert_array_equal(getattr(back.baseline, k), getattr(m.baseline, k))
        np.testing.assert_array_equal(back.gate.coef, m.gate.coef)
        assert back.gate.class_weight == {0: 1.0, 1: 5.0} and back.seed == 9
        np.testing.assert_array_equal(back.scaler.median, m.scaler.median)

    def test_byte_layout(self, tmp_path):
        md.save_bundle(_model(), tmp_path / "m.bin")
        data = (tmp_path / "m.bin").read_bytes()
        assert data[:4] == b"SGMB"
        version, hlen = struct.unpack_from("<IQ", data, 4)
        header = json.loads(data[16:16 + hlen])
        assert version == 1 and header["format_version"] == 1
        body = data[16 + hlen:]
        last = header["tensors"][-1]
        assert len(body) == last["offset"] + 8 * int(np.prod(last["shape"]))
        w = header["tensors"][0]
        assert w["name"] == "regressor.W"
        first = np.frombuffer(body, "<f8", count=int(np.prod(w["shape"]))).reshape(w["shape"])
        np.testing.assert_array_equal(first, _model().regressor.W)

    def test_deterministic_bytes(self, tmp_path):
        md.save_bundle(_model(), tmp_path / "a.bin")
        md.save_bundle(_model(), tmp_path / "b.bin")
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.bin").write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(ValueError):
            md.load_bundle(tmp_path / "x.bin")
