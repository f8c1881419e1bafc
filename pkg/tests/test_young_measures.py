"""Tests for empirical value histograms in young_measures."""

import json

import numpy as np
import pytest

from homoglab import sigma_limits as sl
from homoglab import young_measures as ym
from homoglab.errors import ClippedMassError, UnsupportedOperationError

EPS = 2.0 ** -10


@pytest.fixture(scope="module")
def sin_measure():
    return ym.estimate_young_measure(sl.catalog_sequences()["pure-sin"], EPS)


class TestEstimation:
    def test_normalization_exact(self, sin_measure):
        nu = sin_measure
        sums = nu.weights.sum(axis=2)[nu.counts > 0]
        assert np.abs(sums - 1.0).max() <= 1e-12

    def test_cell_marginal_uniform(self, sin_measure):
        assert sin_measure.s_marginal_sigma_ratio() <= 3.0

    def test_no_starvation_at_default_settings(self, sin_measure):
        assert not sin_measure.starved.any()
        assert sin_measure.clipped_fraction == 0.0

    def test_concentrates_on_cell_profile(self, sin_measure):
        # per (x, s) the histogram sits at sin(2*pi*s) up to bin widths
        nu = sin_measure
        bary = np.einsum("ijk,k->ij", nu.weights, nu.lam_centers)
        target = np.sin(2 * np.pi * nu.s_centers)[None, :]
        assert np.abs(bary - target).max() <= nu.lambda_bin_width + 1e-3

    def test_constant_sequence_single_bin(self):
        nu = ym.estimate_young_measure(sl.catalog_sequences()["constant"],
                                       EPS)
        per_bin_max = nu.weights.max(axis=2)
        assert np.all(per_bin_max[nu.counts > 0] == 1.0)

    def test_starvation_mask_reports_thin_sampling(self):
        nu = ym.estimate_young_measure(sl.catalog_sequences()["pure-sin"],
                                       EPS, n_samples=5000)
        assert nu.starved.any()

    def test_rejects_coarse_eps(self):
        with pytest.raises(ValueError):
            ym.estimate_young_measure(sl.catalog_sequences()["pure-sin"],
                                      0.25)

    def test_rejects_two_dimensional_domain(self):
        Q2 = sl.Box(((0.0, 1.0), (0.0, 1.0)))
        seq = sl.OscillatorySequence(
            "pure-oscillation", Q2,
            v=lambda x, y: np.cos(2 * np.pi * y[:, 0]))
        with pytest.raises(UnsupportedOperationError):
            ym.estimate_young_measure(seq, EPS)

    def test_rejects_empty_value_box(self):
        with pytest.raises(ValueError):
            ym.estimate_young_measure(sl.catalog_sequences()["pure-sin"],
                                      EPS, value_box=(2.0, 1.0))

    def test_weyl_sampling_deterministic(self):
        a = ym.weyl_points(100, 0.0, 1.0, seed=4)
        b = ym.weyl_points(100, 0.0, 1.0, seed=4)
        c = ym.weyl_points(100, 0.0, 1.0, seed=5)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)


class TestPairing:
    def test_square_integrand(self, sin_measure):
        val = ym.pair_with_integrand(sin_measure, lambda x, s, lam: lam ** 2)
        assert val == pytest.approx(0.5, abs=5e-3)

    def test_unit_integrand_gives_domain_volume(self, sin_measure):
        val = ym.pair_with_integrand(
            sin_measure, lambda x, s, lam: np.ones_like(lam))
        assert val == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_cell_mode(self, sin_measure):
        val = ym.pair_with_integrand(
            sin_measure, lambda x, s, lam: np.cos(2 * np.pi * s) * lam)
        assert abs(val) <= 5e-3

    def test_clipped_mass_guard(self):
        nu = ym.estimate_young_measure(sl.catalog_sequences()["pure-sin"],
                                       EPS, value_box=(-0.5, 0.5))
        assert nu.clipped_fraction > 0.2
        with pytest.raises(ClippedMassError):
            ym.pair_with_integrand(nu, lambda x, s, lam: lam)


class TestBarycenter:
    def test_matches_cell_profile(self, sin_measure):
        u0 = ym.barycenter(sin_measure)
        s = np.linspace(0.05, 0.95, 19)
        x = np.full_like(s, 0.5)
        got = u0.u0(x, s)
        allow = sin_measure.lambda_bin_width + sin_measure.cell_bin_width
        assert np.abs(got - np.sin(2 * np.pi * s)).max() <= allow + 1e-3

    def test_constant_sequence(self):
        nu = ym.estimate_young_measure(sl.catalog_sequences()["constant"],
                                       EPS)
        u0 = ym.barycenter(nu)
        x = np.array([0.2, 0.8])
        np.testing.assert_allclose(u0.u0(x, x * 3), 1.0,
                                   atol=nu.lambda_bin_width)

    def test_separable_oscillation(self):
        nu = ym.estimate_young_measure(sl.catalog_sequences()["x-times-cos"],
                                       EPS)
        u0 = ym.barycenter(nu)
        x = np.array([0.25, 0.75])
        s = np.array([0.125, 0.375])
        expect = x * np.cos(2 * np.pi * s)
        allow = (nu.lambda_bin_width + nu.cell_bin_width + nu.x_bin_width)
        np.testing.assert_allclose(u0.u0(x, s), expect, atol=allow)

    def test_agrees_with_weak_sigma_limits(self, sin_measure):
        # pairing the barycenter against the sine mode reproduces the
        # weak-limit table from the convergence checker
        u0 = ym.barycenter(sin_measure)
        val = sl.sigma_limit_value(
            u0, lambda x, y: np.sin(2 * np.pi * np.asarray(y, float)))
        rep_limit = 0.5
        allow = sin_measure.lambda_bin_width + 1e-3
        assert val == pytest.approx(rep_limit, abs=allow)


class TestDiracTest:
    def test_true_profile_is_dirac(self, sin_measure):
        out = ym.dirac_test(sin_measure,
                            lambda x, s: np.sin(2 * np.pi * s),
                            seq=sl.catalog_sequences()["pure-sin"], eps=EPS)
        assert out["is_dirac"]
        assert out["l1_distance"] <= sin_measure.lambda_bin_width \
            + sin_measure.cell_bin_width
        assert out["l1_direct"] <= 1e-10

    def test_zero_target_is_not_dirac(self, sin_measure):
        out = ym.dirac_test(
            sin_measure,
            lambda x, s: np.zeros_like(np.asarray(x, float)))
        assert not out["is_dirac"]
        assert out["l1_distance"] == pytest.approx(2.0 / np.pi, abs=0.02)

    def test_constant_target(self):
        nu = ym.estimate_young_measure(sl.catalog_sequences()["constant"],
                                       EPS)
        out = ym.dirac_test(nu, lambda x, s: np.ones_like(
            np.asarray(x, float)))
        assert out["is_dirac"]
        assert out["l1_distance"] <= nu.lambda_bin_width

    def test_non_oscillating_identity_sequence(self):
        seq = sl.OscillatorySequence("pure-oscillation", sl.UNIT_INTERVAL,
                                     v=lambda x, y: np.asarray(x, float))
        nu = ym.estimate_young_measure(seq, EPS)
        out = ym.dirac_test(nu, lambda x, s: np.asarray(x, float))
        assert out["is_dirac"]


class TestLowerSemicontinuity:
    def test_square_integrand_equality(self, sin_measure):
        out = ym.check_lsc(sin_measure, lambda x, s, lam: lam ** 2,
                           sl.catalog_sequences()["pure-sin"])
        assert out["passed"]
        assert out["lhs"] == pytest.approx(0.5, abs=5e-3)
        assert out["equality_gap"] <= out["slack"]

    def test_zero_integrand(self, sin_measure):
        out = ym.check_lsc(sin_measure,
                           lambda x, s, lam: np.zeros_like(lam),
                           sl.catalog_sequences()["pure-sin"])
        assert out["passed"]
        assert out["lhs"] == 0.0

    def test_weighted_square_integrand(self, sin_measure):
        out = ym.check_lsc(
            sin_measure,
            lambda x, s, lam: (2.0 + np.sin(2 * np.pi * s)) * lam ** 2,
            sl.catalog_sequences()["pure-sin"])
        assert out["passed"]
        assert out["lhs"] == pytest.approx(1.0, abs=5e-3)

    def test_rejects_signed_integrand(self, sin_measure):
        with pytest.raises(ValueError):
            ym.check_lsc(sin_measure, lambda x, s, lam: lam,
                         sl.catalog_sequences()["pure-sin"])

    def test_second_moment_bounded_by_square_norm_tail(self, sin_measure):
        moment = ym.pair_with_integrand(sin_measure,
                                        lambda x, s, lam: lam ** 2)
        # int of sin^2 over whole periods is exactly 1/2 for every eps
        assert moment <= 0.5 + sin_measure.lambda_bin_width


class TestSerialization:
    def test_csv_lists_nonzero_weights(self, sin_measure):
        lines = sin_measure.to_csv().strip().split("\n")
        assert lines[0] == "x_bin,s_bin,lambda_bin,weight"
        assert len(lines) - 1 == int(np.count_nonzero(sin_measure.weights))

    def test_json_summary(self, sin_measure):
        blob = json.dumps(sin_measure.to_json())
        data = json.loads(blob)
        assert data["starved_bins"] == 0
        assert data["clipped_fraction"] == 0.0
        bary = np.array(data["barycenter_grid"])
        assert bary.shape == (16, 32)
