"""Cell-problem solvers, effective-flux tables, and density relaxation."""

import numpy as np
import pytest

from homoglab.correctors import (
    XI_TABLE_DEFAULT,
    EffectiveModel,
    MonotoneCellOperator,
    effective_coefficients,
    homogenized_density,
    solve_cell_1d_closed_form,
    solve_cell_problem,
)
from homoglab.errors import (
    InvalidDensityError,
    InvalidOperatorError,
    TableRangeError,
)
from homoglab.oscillator_fields import (
    piecewise_constant,
    slow_oscillation,
    trig_polynomial,
)

ROOT3 = float(np.sqrt(3.0))


def a_sin(y):
    return 2.0 + np.sin(2.0 * np.pi * y)


def b_cos(y):
    return 1.0 + 0.5 * np.cos(2.0 * np.pi * y + 0.7)


def linear_op():
    return MonotoneCellOperator(a=a_sin, b=None, p=3.0, dimension=1)


def mixed_op():
    return MonotoneCellOperator(a=a_sin, b=b_cos, p=3.0, dimension=1)


class TestOperatorValidation:

    def test_both_parts_missing(self):
        with pytest.raises(InvalidOperatorError):
            MonotoneCellOperator(a=None, b=None)

    def test_non_coercive_linear_part(self):
        with pytest.raises(InvalidOperatorError, match="coercive"):
            MonotoneCellOperator(a=lambda y: 1.0 + 2.0 * np.sin(2 * np.pi * y),
                                 b=None)

    def test_declared_coercivity_too_large(self):
        with pytest.raises(InvalidOperatorError, match="exceeds"):
            MonotoneCellOperator(a=a_sin, b=None, nu0=1.5)

    def test_negative_power_coefficient(self):
        with pytest.raises(InvalidOperatorError, match="positive"):
            MonotoneCellOperator(a=None,
                                 b=lambda y: np.sin(2 * np.pi * y), p=3.0)

    def test_power_bounds_violated(self):
        b = piecewise_constant([0.0, 0.5, 1.0], [1.0, 8.0])
        # c1 = 0.5 declares b in [0.5, 2]; the field reaches 8
        with pytest.raises(InvalidOperatorError, match="leaves"):
            MonotoneCellOperator(a=None, b=b, p=3.0, c1=0.5)

    def test_power_exponent_below_threshold(self):
        with pytest.raises(ValueError, match="p >= 3"):
            MonotoneCellOperator(a=a_sin, b=b_cos, p=2.5)

    def test_vector_mode_needs_dimension_two(self):
        with pytest.raises(ValueError, match="dimension 2"):
            MonotoneCellOperator(a=a_sin, b=None, mode="vector", dimension=1)

    def test_unknown_mode(self):
        with pytest.raises(ValueError, match="mode"):
            MonotoneCellOperator(a=a_sin, b=None, mode="tensor")

    def test_coarse_grid_rejected(self):
        with pytest.raises(ValueError, match="at least 16"):
            solve_cell_problem(linear_op(), 1.0, grid=8)

    def test_probed_coercivity_stored(self):
        op = linear_op()
        assert 0.99 < op.nu0 <= 1.001


class TestLinearCell1D:
    """a(y) = 2 + sin(2 pi y): the effective coefficient is the harmonic
    mean sqrt(3)."""

    def test_grid_solver(self):
        sol = solve_cell_problem(linear_op(), 1.0, grid=64)
        assert abs(sol.effective_flux[0] - ROOT3) <= 1e-6
        assert np.allclose(sol.mean_flux_power, 0.0)

    def test_closed_form(self):
        sol = solve_cell_1d_closed_form(linear_op(), 1.0)
        assert abs(sol.effective_flux[0] - ROOT3) <= 1e-6
        assert sol.residual <= 1e-10

    def test_solvers_agree_to_machine_precision(self):
        g = solve_cell_problem(linear_op(), 1.0, grid=64)
        c = solve_cell_1d_closed_form(linear_op(), 1.0, n_quad=4096)
        assert abs(g.effective_flux[0] - c.effective_flux[0]) <= 1e-12

    def test_corrector_zero_mean(self):
        g = solve_cell_problem(linear_op(), 1.0, grid=64)
        c = solve_cell_1d_closed_form(linear_op(), 1.0)
        assert abs(np.mean(g.pi)) <= 1e-12
        assert abs(np.mean(c.pi)) <= 1e-12

    def test_flux_linear_in_xi(self):
        s1 = solve_cell_problem(linear_op(), 1.0, grid=64)
        s2 = solve_cell_problem(linear_op(), -1.7, grid=64)
        assert abs(s2.effective_flux[0] + 1.7 * s1.effective_flux[0]) <= 1e-9


class TestPowerCell1D:

    def test_piecewise_power_coefficient(self):
        # b = 1 on [0, 1/2), 8 on [1/2, 1), p = 3: the effective constant
        # is the -1/2 power mean of b, squared and inverted.
        b = piecewise_constant([0.0, 0.5, 1.0], [1.0, 8.0])
        op = MonotoneCellOperator(a=None, b=b, p=3.0)
        expected = (0.5 * (1.0 + 8.0 ** -0.5)) ** -2.0
        assert abs(expected - 2.183278857474364) < 1e-14
        g = solve_cell_problem(op, 1.0, grid=64)
        c = solve_cell_1d_closed_form(op, 1.0, n_quad=4096)
        assert abs(g.effective_flux[0] - expected) <= 1e-5
        assert abs(c.effective_flux[0] - expected) <= 1e-5
        assert np.allclose(g.mean_flux_linear, 0.0)

    def test_constant_coefficients_exact(self):
        op = MonotoneCellOperator(a=lambda y: np.full_like(y, 2.0),
                                  b=lambda y: np.full_like(y, 1.5),
                                  p=3.0, dimension=1)
        for xi in (-1.5, 0.7):
            sol = solve_cell_problem(op, xi, grid=32)
            assert np.max(np.abs(sol.pi)) <= 1e-12
            want = 2.0 * xi + 1.5 * abs(xi) * xi
            assert abs(sol.effective_flux[0] - want) <= 1e-12

    def test_mixed_sweep_grid_vs_closed_form(self):
        op = mixed_op()
        for xi in XI_TABLE_DEFAULT:
            g = solve_cell_problem(op, xi, grid=64)
            c = solve_cell_1d_closed_form(op, xi, n_quad=4096)
            assert abs(g.effective_flux[0] - c.effective_flux[0]) <= 1e-10

    def test_flux_monotone_in_xi(self):
        op = mixed_op()
        fluxes = [solve_cell_problem(op, xi, grid=32).effective_flux[0]
                  for xi in XI_TABLE_DEFAULT]
        assert np.all(np.diff(fluxes) > 0)

    def test_aligned_piecewise_exact_on_grid(self):
        # jump at 1/2 sits on an element face for even n, so the discrete
        # harmonic mean matches the continuum one exactly
        a = piecewise_constant([0.0, 0.5, 1.0], [1.0, 4.0])
        op = MonotoneCellOperator(a=a, b=None, p=3.0)
        g = solve_cell_problem(op, 1.0, grid=32)
        c = solve_cell_1d_closed_form(op, 1.0, n_quad=4096)
        assert abs(g.effective_flux[0] - 1.6) <= 1e-12
        assert abs(c.effective_flux[0] - 1.6) <= 1e-12


class TestTauSweep:

    def test_time_independent_data_has_zero_spread(self):
        op = MonotoneCellOperator(a=lambda y, tau: a_sin(y), b=None,
                                  p=3.0, tau_period=1.0)
        sol = solve_cell_problem(op, 1.0, grid=64, n_tau=8)
        assert sol.info["tau_slices"] == 8
        assert sol.info["tau_spread"] == 0.0
        assert abs(sol.effective_flux[0] - ROOT3) <= 1e-6

    def test_modulated_coefficient_averages_out(self):
        # a(y, tau) = (1 + cos(2 pi tau)/4) (2 + sin(2 pi y)): each slice
        # scales the harmonic mean by the time factor, whose midpoint
        # average over one period is exactly 1
        def a(y, tau):
            return (1.0 + 0.25 * np.cos(2 * np.pi * tau)) * a_sin(y)

        op = MonotoneCellOperator(a=a, b=None, p=3.0, tau_period=1.0)
        sol = solve_cell_problem(op, 1.0, grid=64, n_tau=16)
        assert abs(sol.effective_flux[0] - ROOT3) <= 1e-12
        assert 0.5 < sol.info["tau_spread"] < 1.2
        assert sol.pi.shape == (16, 64)


class TestScalarCell2D:

    @staticmethod
    def laminate_op():
        def a(pts):
            return 2.0 + np.sin(2 * np.pi * pts[..., 0])
        return MonotoneCellOperator(a=a, b=None, p=3.0, dimension=2)

    def test_laminate_diagonal(self):
        # layers normal to the first axis: harmonic mean across, arithmetic
        # mean along
        op = self.laminate_op()
        s1 = solve_cell_problem(op, np.array([1.0, 0.0]), grid=64)
        s2 = solve_cell_problem(op, np.array([0.0, 1.0]), grid=64)
        assert abs(s1.effective_flux[0] - ROOT3) <= 1e-3
        assert abs(s2.effective_flux[1] - 2.0) <= 1e-12
        assert abs(s1.effective_flux[1]) <= 1e-12
        assert abs(s2.effective_flux[0]) <= 1e-12

    def test_second_order_convergence(self):
        op = self.laminate_op()
        errs = []
        for n in (32, 64, 128):
            s = solve_cell_problem(op, np.array([1.0, 0.0]), grid=n)
            errs.append(abs(s.effective_flux[0] - ROOT3))
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert np.all(orders > 1.5)

    def test_transverse_gradient_needs_no_corrector(self):
        # coefficients vary along the first axis only; xi = e2 keeps the
        # flux divergence-free with pi = 0, so cell averages are plain means
        def a(pts):
            return 2.0 + np.sin(2 * np.pi * pts[..., 0])

        def b(pts):
            return 1.0 + 0.5 * np.cos(2 * np.pi * pts[..., 0] + 0.7)

        op = MonotoneCellOperator(a=a, b=b, p=3.0, dimension=2)
        sol = solve_cell_problem(op, np.array([0.0, 1.0]), grid=32)
        assert np.max(np.abs(sol.pi)) <= 1e-10
        assert abs(sol.effective_flux[0]) <= 1e-10
        assert abs(sol.effective_flux[1] - 3.0) <= 1e-10


class TestVectorCell2D:

    @staticmethod
    def laminate_op():
        def a(pts):
            return 2.0 + np.sin(2 * np.pi * pts[..., 0])
        return MonotoneCellOperator(a=a, b=None, p=3.0, dimension=2,
                                    mode="vector")

    def test_shear_along_layers(self):
        # velocity (y2, 0): incompressibility forbids any corrector, so the
        # effective response is the arithmetic mean 2
        xi = np.array([[0.0, 1.0], [0.0, 0.0]])
        sol = solve_cell_problem(self.laminate_op(), xi, grid=32)
        assert abs(sol.effective_flux[0, 1] - 2.0) <= 1e-6
        assert np.max(np.abs(sol.effective_flux - 2.0 * xi)) <= 1e-6

    def test_shear_across_layers(self):
        # velocity (0, y1) shears across the layers: harmonic mean sqrt(3)
        xi = np.array([[0.0, 0.0], [1.0, 0.0]])
        sol = solve_cell_problem(self.laminate_op(), xi, grid=32)
        assert abs(sol.effective_flux[1, 0] - ROOT3) <= 1e-6
        assert np.max(np.abs(sol.effective_flux - ROOT3 * xi)) <= 1e-6

    def test_divergence_constraint_enforced(self):
        xi = np.array([[0.0, 0.0], [1.0, 0.0]])
        sol = solve_cell_problem(self.laminate_op(), xi, grid=32)
        assert sol.info["divergence_max"] <= 1e-8

    def test_trace_carrying_gradient_rejected(self):
        xi = np.array([[1.0, 0.0], [0.0, 0.0]])
        with pytest.raises(ValueError, match="trace"):
            solve_cell_problem(self.laminate_op(), xi, grid=32)


class TestEffectiveModel:

    def test_linear_fast_path(self):
        model = effective_coefficients(linear_op(), grid=64)
        assert "linear_matrix" in model.info
        assert np.allclose(model.M_values, 0.0)
        # linearity: the tabulated flux interpolates exactly
        f1 = model.flux(1.0)
        f17 = model.flux(1.7)
        assert abs(f17[0] - 1.7 * f1[0]) <= 1e-12
        assert abs(f1[0] - ROOT3) <= 1e-6

    def test_mixed_table(self):
        model = effective_coefficients(mixed_op(), grid=32,
                                       xi_samples=np.linspace(-2, 2, 9))
        assert model.A_values.shape == (9, 1)
        assert abs(model.flux(0.0)[0]) <= 1e-12
        # interpolation reproduces table nodes
        node = model.flux(1.5)[0]
        direct = solve_cell_problem(mixed_op(), 1.5, grid=32).effective_flux[0]
        assert abs(node - direct) <= 1e-10

    def test_monotonicity_margin(self):
        model = effective_coefficients(mixed_op(), grid=32,
                                       xi_samples=np.linspace(-2, 2, 5))
        assert model.monotonicity_margin >= -1e-10
        assert model.check_monotone() >= -1e-10

    def test_out_of_table_query_rejected(self):
        model = effective_coefficients(mixed_op(), grid=32,
                                       xi_samples=np.linspace(-2, 2, 5))
        with pytest.raises(TableRangeError):
            model.flux(2.5)

    def test_vector_samples_are_trace_free(self):
        op = TestVectorCell2D.laminate_op()
        model = effective_coefficients(op, grid=16)
        traces = np.abs(np.trace(model.xi_samples, axis1=1, axis2=2))
        assert np.max(traces) <= 1e-12

    def test_save_load_roundtrip(self, tmp_path):
        model = effective_coefficients(mixed_op(), grid=32,
                                       xi_samples=np.linspace(-1, 1, 5),
                                       keep_correctors=True)
        prefix = str(tmp_path / "table")
        model.save(prefix)
        with open(prefix + ".bin", "rb") as fh:
            assert fh.read(4) == b"HMGB"
        back = EffectiveModel.load(prefix)
        assert np.allclose(back.xi_samples, model.xi_samples)
        assert np.allclose(back.A_values, model.A_values)
        assert np.allclose(back.correctors, model.correctors)
        assert back.p == model.p and back.mode == model.mode

    def test_json_payload(self):
        model = effective_coefficients(linear_op(), grid=32)
        data = model.to_json()
        assert data["dimension"] == 1
        assert data["density_values"] is None
        assert np.allclose(np.array(data["A_values"]),
                           np.array(data["m_values"])
                           + np.array(data["M_values"]))


class TestHomogenizedDensity:

    def test_plain_quadratic(self):
        r = homogenized_density(lambda x, y, s: 0.5 * s * s, 0.3, 1.0)
        assert abs(r["value"] - 0.5) <= 1e-12
        assert r["method"] == "newton"

    def test_weighted_quadratic_matches_harmonic_mean(self):
        r = homogenized_density(lambda x, y, s: 0.5 * a_sin(y) * s * s,
                                0.0, 1.0)
        assert abs(r["value"] - 0.5 * ROOT3) <= 1e-9
        assert r["iterations"] <= 10

    def test_quartic_constant(self):
        r = homogenized_density(lambda x, y, s: 0.25 * s ** 4, 0.0, 1.0)
        assert abs(r["value"] - 0.25) <= 1e-12

    def test_quartic_weighted_frozen_value(self):
        b = lambda y: 1.0 + 0.5 * np.cos(2 * np.pi * y)
        r = homogenized_density(lambda x, y, s: 0.25 * b(y) * s ** 4,
                                0.0, 1.5)
        assert abs(r["value"] - 1.1521158742578037) <= 1e-9

    def test_macroscopic_point_passthrough(self):
        r = homogenized_density(lambda x, y, s: 0.5 * (1.0 + x) * s * s,
                                0.5, 2.0)
        assert abs(r["value"] - 3.0) <= 1e-12

    def test_quadratic_fast_path(self):
        fld = trig_polynomial([(0, 2.0, 0.0), (1, 1.0, -np.pi / 2)])
        r = homogenized_density(("quadratic", fld), 0.0, 1.0)
        assert r["method"] == "harmonic-mean"
        assert r["iterations"] == 0
        assert abs(r["value"] - 0.5 * ROOT3) <= 1e-12

    def test_quadratic_slow_oscillation(self):
        # 2 + cos(|z|^(1/2)) equidistributes its phase, so the window
        # harmonic mean tends to the same 1/sqrt(3)
        fld = slow_oscillation([(2.0, []), (1.0, [0.0])], alpha=0.5)
        r = homogenized_density(("quadratic", fld), 0.0, 1.0)
        assert r["method"] == "harmonic-mean"
        assert abs(r["value"] - 0.5 * ROOT3) <= 1e-4

    def test_concave_density_rejected(self):
        with pytest.raises(InvalidDensityError):
            homogenized_density(lambda x, y, s: -s * s, 0.0, 1.0)

    def test_minimizer_beats_random_correctors(self):
        b = lambda y: 1.0 + 0.5 * np.cos(2 * np.pi * y)
        r = homogenized_density(lambda x, y, s: 0.25 * b(y) * s ** 4,
                                0.0, 1.5, grid=256)
        n = 256
        h = 1.0 / n
        ym = (np.arange(n) + 0.5) * h

        def energy(w):
            s = 1.5 + (np.roll(w, -1) - w) / h
            return h * float(np.sum(0.25 * b(ym) * s ** 4))

        rng = np.random.default_rng(0)
        for _ in range(20):
            z = rng.standard_normal(n)
            w = r["corrector"] + 0.01 * (z - z.mean())
            assert energy(w) >= r["value"] - 1e-12
