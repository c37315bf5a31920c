import numpy as np
import pytest
from pydantic import ValidationError

from erdmd.core_dmd import TimeSeries
from erdmd.errors import ArgumentError, DimensionError, DivergenceError, RankError
from erdmd.models import KSSpec, ODESpec
from erdmd.systems import (
    generate_lagged_linear,
    integrate_ks_etdrk4,
    integrate_rk4,
    ks_grid,
    pod_reconstruct,
    pod_reduce,
    rk4_trajectory,
)


# ---------------------------------------------------------------------------
# ODEs
# ---------------------------------------------------------------------------

class TestRK4:
    def test_fourth_order(self):
        def max_error(n):
            ts = rk4_trajectory(lambda t, y: -y, [1.0], dt=1.0 / n, n_steps=n)
            return np.abs(ts.data[0] - np.exp(-ts.times)).max()

        assert 14.0 <= max_error(10) / max_error(20) <= 18.0

    def test_lorenz_fixed_point_at_origin(self):
        ts = integrate_rk4(ODESpec(kind="lorenz63", y0=[0.0, 0.0, 0.0], t_span=(0.0, 1.0)))
        assert np.all(ts.data == 0.0)

    def test_lorenz_shape_and_attractor_bounds(self, lorenz_series):
        assert lorenz_series.data.shape == (3, 2201)
        assert lorenz_series.data[:, 0].tolist() == [1.0, 1.0, 1.0]
        assert np.abs(lorenz_series.data[:2]).max() < 30
        assert lorenz_series.data[2].max() < 60

    def test_rossler_defaults(self):
        ts = integrate_rk4(ODESpec(kind="rossler", t_span=(0.0, 5.0)))
        assert ts.data.shape == (3, 501)
        assert ts.data[:, 0].tolist() == [1.0, 1.0, 0.0]

    def test_blow_up_is_reported(self):
        with pytest.raises(DivergenceError) as info:
            rk4_trajectory(lambda t, y: y * y, [1.0], dt=0.01, n_steps=1000)
        assert info.value.step > 90

    def test_unknown_parameter(self):
        with pytest.raises(ValidationError):
            ODESpec(kind="lorenz63", params={"gamma": 1.0})

    def test_bad_step_count(self):
        with pytest.raises(ArgumentError):
            rk4_trajectory(lambda t, y: -y, [1.0], dt=0.1, n_steps=0)


# ---------------------------------------------------------------------------
# Kuramoto–Sivashinsky
# ---------------------------------------------------------------------------

class TestKS:
    def test_zero_field_stays_zero(self):
        ts = integrate_ks_etdrk4(KSSpec(n_modes=32, u0=[0.0] * 32, t_burn=0.0, t_final=5.0))
        assert np.all(ts.data == 0.0)
        assert ts.data.shape == (32, 21)

    @pytest.mark.parametrize("substeps", [1, 8])
    def test_linear_mode_growth(self, substeps):
        x = ks_grid(32)
        spec = KSSpec(
            n_modes=32, u0=np.cos(2 * x).tolist(), t_burn=0.0, t_final=1.0, nonlinear=False, substeps=substeps
        )
        ts = integrate_ks_etdrk4(spec)
        growth = np.exp(4.0 - 16.0 * spec.nu)
        np.testing.assert_allclose(ts.data[:, -1], growth * np.cos(2 * x), atol=1e-10)

    def test_default_settings_stay_finite(self):
        ts = integrate_ks_etdrk4(KSSpec(t_final=40.0))
        assert ts.data.shape == (128, 161)
        assert ts.t0 == 10.0
        assert np.all(np.isfinite(ts.data))
        # the seeded noise has grown onto the attractor
        assert np.abs(ts.data).max() > 0.1

    def test_one_step_per_snapshot_is_too_coarse(self):
        with pytest.raises(DivergenceError):
            integrate_ks_etdrk4(KSSpec(substeps=1, t_final=40.0))

    def test_burn_in_shifts_start_time(self):
        ts = integrate_ks_etdrk4(KSSpec(n_modes=32, t_burn=2.0, t_final=1.0))
        assert ts.t0 == pytest.approx(2.0)
        assert ts.data.shape == (32, 5)

    def test_deterministic(self):
        spec = KSSpec(n_modes=64, t_burn=1.0, t_final=10.0, seed=3)
        a, b = integrate_ks_etdrk4(spec), integrate_ks_etdrk4(spec)
        np.testing.assert_array_equal(a.data, b.data)
        assert np.all(np.isfinite(a.data))

    def test_grid_must_be_power_of_two(self):
        with pytest.raises(ValidationError):
            KSSpec(n_modes=100)

    @pytest.mark.slow
    def test_twelve_modes_hold_most_of_the_energy(self):
        field = integrate_ks_etdrk4(KSSpec())
        basis, coeffs = pod_reduce(field, 12)
        # published capture is 0.986 ± 0.010; this resolved run sits at or above it
        assert 0.986 - 0.010 <= basis.energy_fraction <= 1.0
        assert coeffs.state_dim == 12
        back = pod_reconstruct(basis, coeffs)
        relative = np.linalg.norm(back.data - field.data) / np.linalg.norm(field.data - basis.mean_field[:, None])
        assert relative <= np.sqrt(1.0 - basis.energy_fraction) + 1e-10


# ---------------------------------------------------------------------------
# POD
# ---------------------------------------------------------------------------

def orthonormal(rows, cols, seed):
    q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((rows, cols)))
    return q


class TestPOD:
    def test_rank_one_field(self):
        profile = np.sin(ks_grid(16))
        signal = np.cos(0.3 * np.arange(50))
        basis, coeffs = pod_reduce(TimeSeries(np.outer(profile, signal), dt=0.1), 1)
        assert basis.energy_fraction == pytest.approx(1.0, abs=1e-12)
        assert coeffs.data.shape == (1, 50)

    def test_two_mode_oracle(self):
        n = 40
        phase = 2 * np.pi * np.arange(n) / n
        a1, a2 = np.sqrt(2 / n) * np.cos(phase), np.sqrt(2 / n) * np.sin(phase)
        q = orthonormal(8, 2, seed=1)
        field = 2.0 * np.outer(q[:, 0], a1) + 1.0 * np.outer(q[:, 1], a2)
        basis, _ = pod_reduce(TimeSeries(field, dt=1.0), 1)
        assert basis.singular_values[0] / basis.singular_values[1] == pytest.approx(2.0, rel=1e-10)
        assert basis.energy_fraction == pytest.approx(0.8, abs=1e-12)

    def test_modes_orthonormal_and_sign_fixed(self):
        field = TimeSeries(np.random.default_rng(2).standard_normal((10, 60)), dt=1.0)
        basis, _ = pod_reduce(field, 4)
        np.testing.assert_allclose(basis.modes.T @ basis.modes, np.eye(4), atol=1e-10)
        pivots = np.argmax(np.abs(basis.modes), axis=0)
        assert np.all(basis.modes[pivots, np.arange(4)] > 0)

    def test_rank_deficient(self):
        field = TimeSeries(np.outer(np.arange(1.0, 7.0), np.sin(np.arange(30.0))), dt=1.0)
        with pytest.raises(RankError):
            pod_reduce(field, 2)

    def test_too_many_modes(self):
        with pytest.raises(ArgumentError):
            pod_reduce(TimeSeries(np.ones((4, 10)), dt=1.0), 5)

    def test_full_rank_round_trip(self):
        field = TimeSeries(np.random.default_rng(5).standard_normal((6, 40)), dt=0.5, t0=1.0)
        basis, coeffs = pod_reduce(field, 6)
        back = pod_reconstruct(basis, coeffs)
        np.testing.assert_allclose(back.data, field.data, atol=1e-10)
        assert back.t0 == field.t0

    def test_zero_coefficients_give_the_mean(self):
        field = TimeSeries(np.random.default_rng(6).standard_normal((6, 40)), dt=1.0)
        basis, _ = pod_reduce(field, 3)
        back = pod_reconstruct(basis, TimeSeries(np.zeros((3, 2)), dt=1.0))
        np.testing.assert_allclose(back.data[:, 0], field.data.mean(axis=1))

    def test_coefficient_dimension_checked(self):
        field = TimeSeries(np.random.default_rng(7).standard_normal((6, 40)), dt=1.0)
        basis, _ = pod_reduce(field, 3)
        with pytest.raises(DimensionError):
            pod_reconstruct(basis, TimeSeries(np.zeros((2, 5)), dt=1.0))


# ---------------------------------------------------------------------------
# Lagged linear ground truth
# ---------------------------------------------------------------------------

def test_lagged_linear_follows_its_recurrence():
    K1 = np.array([[0.6, 0.1], [0.0, 0.5]])
    K4 = np.array([[0.2, 0.0], [0.1, 0.2]])
    ts = generate_lagged_linear([1, 4], [K1, K4], n_steps=30, seed=9, history_scale=2.0)
    assert ts.data.shape == (2, 34)
    assert np.abs(ts.data[:, :4]).max() <= 2.0
    for j in range(4, 34):
        np.testing.assert_allclose(ts.data[:, j], K1 @ ts.data[:, j - 1] + K4 @ ts.data[:, j - 4], atol=1e-14)
