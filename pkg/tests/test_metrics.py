from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from deepdvl import metrics as mt

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
series_pairs = st.integers(2, 50).flatmap(
    lambda n: st.tuples(arrays(np.float64, n, elements=finite), arrays(np.float64, n, elements=finite))
)


class TestHandCases:
    x = np.array([1.0, 2.0, 3.0])
    x_hat = np.array([1.0, 2.0, 4.0])

    def test_rmse(self):
        assert mt.rmse(self.x, self.x) == 0.0
        assert mt.rmse(self.x, self.x_hat) == pytest.approx(np.sqrt(1 / 3), abs=1e-15)

    def test_mae(self):
        assert mt.mae(self.x, self.x) == 0.0
        assert mt.mae(self.x, self.x_hat) == pytest.approx(1 / 3, abs=1e-15)

    def test_r_squared(self):
        assert mt.r_squared(self.x, self.x) == 1.0
        assert mt.r_squared(self.x, np.full(3, self.x.mean())) == 0.0

    def test_vaf(self):
        assert mt.vaf(self.x, self.x) == 100.0
        assert mt.vaf(self.x, self.x + 5.0) == pytest.approx(100.0, abs=1e-12)

    def test_constant_truth_undefined(self):
        with pytest.raises(mt.UndefinedMetricError):
            mt.r_squared(np.ones(4), np.arange(4.0))
        with pytest.raises(mt.UndefinedMetricError):
            mt.vaf(np.ones(4), np.arange(4.0))

    def test_vectors_use_norm(self):
        v = np.array([[3.0, 4.0, 0.0], [0.0, 0.0, 1.0]])
        v_hat = np.array([[0.0, 5.0, 0.0], [0.0, 0.0, 2.0]])
        # norms are [5, 1] vs [5, 2]
        assert mt.rmse(v, v_hat) == pytest.approx(np.sqrt(0.5))
        np.testing.assert_allclose(mt.mae_per_axis(v, v_hat), [1.5, 0.5, 0.5])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mt.rmse(np.zeros(3), np.zeros(4))
        with pytest.raises(ValueError):
            mt.rmse(np.zeros(0), np.zeros(0))


class TestIdentities:
    @given(series_pairs)
    def test_rmse_at_least_mae(self, pair):
        x, x_hat = pair
        assert mt.rmse(x, x_hat) >= mt.mae(x, x_hat) - 1e-12 * (1 + mt.mae(x, x_hat))

    @given(series_pairs)
    def test_upper_bounds(self, pair):
        x, x_hat = pair
        if np.var(x) < 1e-9:
            return
        assert mt.r_squared(x, x_hat) <= 1.0
        assert mt.vaf(x, x_hat) <= 100.0

    @given(series_pairs, finite)
    def test_translation_covariance(self, pair, c):
        x, x_hat = pair
        assert mt.rmse(x + c, x_hat + c) == pytest.approx(mt.rmse(x, x_hat), rel=1e-9, abs=1e-9)
        assert mt.mae(x + c, x_hat + c) == pytest.approx(mt.mae(x, x_hat), rel=1e-9, abs=1e-9)


class TestNees:
    def test_zero_error(self):
        r = mt.nees(np.zeros((5, 12)), np.tile(np.eye(12), (5, 1, 1)))
        np.testing.assert_array_equal(r.values, 0.0)

    def test_consistent_gaussian(self, rng):
        P = np.diag(rng.uniform(0.5, 2.0, 12))
        e = rng.multivariate_normal(np.zeros(12), P, size=5000)
        r = mt.nees(e, np.tile(P, (5000, 1, 1)))
        lo, hi = mt.chi2_band(12, 5000)
        assert lo <= r.mean <= hi
        assert r.fraction_inside == pytest.approx(0.95, abs=0.015)

    def test_overconfident_scales_by_ten(self, rng):
        P = np.eye(12)
        e = rng.standard_normal((5000, 12))
        r = mt.nees(e, np.tile(0.1 * P, (5000, 1, 1)))
        assert r.mean == pytest.approx(120.0, rel=0.03)

    def test_diagonal_form_matches_full(self, rng):
        d = rng.uniform(0.1, 1.0, (10, 12))
        e = rng.standard_normal((10, 12))
        full = np.array([np.diag(row) for row in d])
        np.testing.assert_allclose(mt.nees(e, d).values, mt.nees(e, full).values)

    def test_band_for_average(self):
        lo, hi = mt.chi2_band(12, 50)
        assert lo == pytest.approx(10.68, abs=0.01) and hi == pytest.approx(13.40, abs=0.01)

    def test_monte_carlo_consistent(self, rng):
        e = rng.standard_normal((50, 30, 12))
        mean, band, occ = mt.monte_carlo_nees(e, np.tile(np.eye(12), (50, 30, 1, 1)))
        assert mean.shape == (30,) and occ >= 0.8


def fake_run(std, times=None):
    std = np.asarray(std, dtype=float)
    return SimpleNamespace(times=np.arange(len(std)) if times is None else times, pdiag=std**2)


class TestUncertaintySummary:
    def test_identical_runs(self, rng):
        std = rng.uniform(0.1, 1.0, (20, 12))
        rep = mt.uncertainty_summary(fake_run(std), fake_run(std))
        for g in rep.values():
            assert g["time_avg_improvement_pct"] == 0.0 and g["final_improvement_pct"] == 0.0

    def test_uniform_ratio(self, rng):
        std = rng.uniform(0.1, 1.0, (20, 12))
        rep = mt.uncertainty_summary(fake_run(std), fake_run(1.1 * std))
        for g in rep.values():
            assert g["time_avg_improvement_pct"] == pytest.approx(100 * 0.1 / 1.1)
            assert g["final_improvement_pct"] == pytest.approx(9.0909, abs=1e-4)

    def test_swapping_flips_sign(self, rng):
        a = rng.uniform(0.1, 1.0, (20, 12))
        b = rng.uniform(0.1, 1.0, (20, 12))
        ab = mt.uncertainty_summary(fake_run(a), fake_run(b))
        ba = mt.uncertainty_summary(fake_run(b), fake_run(a))
        for name in ab:
            for key in ("time_avg_improvement_pct", "final_improvement_pct"):
                assert np.sign(ab[name][key]) == -np.sign(ba[name][key])

    def test_group_measures(self):
        std = np.ones((4, 12))
        std[-1, 0:3] = [1.0, 2.0, 3.0]
        rep = mt.uncertainty_summary(fake_run(std), fake_run(std))
        assert rep["velocity"]["final_sum_std_aware"] == 6.0
        assert rep["velocity"]["time_avg_std_aware"] == pytest.approx((9 + 6) / 12)
        assert set(rep) == {"velocity", "misalignment", "accel_bias", "gyro_bias"}

    def test_misaligned_rejected(self):
        with pytest.raises(mt.MisalignedRunsError):
            mt.uncertainty_summary(fake_run(np.ones((5, 12))), fake_run(np.ones((6, 12))))
        with pytest.raises(mt.MisalignedRunsError):
            mt.uncertainty_summary(fake_run(np.ones((5, 12))), fake_run(np.ones((5, 12)), np.arange(5) + 0.5))
