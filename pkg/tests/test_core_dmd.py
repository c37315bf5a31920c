import numpy as np
import pytest

from erdmd.config import settings
from erdmd.core_dmd import (
    LaggedModel,
    LagSet,
    TimeSeries,
    build_regression,
    char_poly_scale,
    closed_loop,
    companion_matrix,
    eval_char_poly,
    fit,
    full_spectrum,
    iterate,
    lag_matrix_norms,
    matrix_poly_roots,
    nth_roots,
    one_step_predictions,
    predict_one,
    reconstruct,
    reduced_roots,
    top_pair_inner_roots,
    training_residual,
)
from erdmd.errors import (
    ArgumentError,
    DataError,
    DegeneratePencilError,
    DimensionError,
    DivergenceError,
    LagUnderflowError,
    SizeGuardError,
    UnderdeterminedError,
)
from erdmd.systems import generate_lagged_linear


def stable_three_state_system(seed=7):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    K1 = 0.9 * Q
    K3 = rng.standard_normal((3, 3))
    K3 *= 0.05 / np.linalg.norm(K3, 2)
    return K1, K3


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

class TestTypes:
    def test_time_series_rejects_non_finite(self):
        with pytest.raises(DataError):
            TimeSeries(np.array([[0.0, np.nan, 1.0]]), dt=0.1)

    def test_time_series_needs_two_columns(self):
        with pytest.raises(DimensionError):
            TimeSeries(np.zeros((3, 1)), dt=0.1)

    def test_window_snaps_to_grid(self):
        ts = TimeSeries(np.arange(11.0), dt=0.1)
        w = ts.window(0.2, 0.5)
        assert w.data.tolist() == [[2.0, 3.0, 4.0, 5.0]]
        assert w.t0 == pytest.approx(0.2)

    def test_lag_set_requires_lag_one(self):
        with pytest.raises(ArgumentError):
            LagSet((2, 3))

    def test_lag_set_sorts_and_dedups(self):
        assert LagSet.of([5, 1, 5, 3]).lags == (1, 3, 5)

    def test_lag_one_is_never_removed(self):
        with pytest.raises(ArgumentError):
            LagSet((1, 4)).without_lag(1)

    def test_model_shape_checked(self):
        with pytest.raises(DimensionError):
            LaggedModel(state_dim=2, lags=LagSet((1,)), matrices=(np.eye(3),))


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

class TestFit:
    def test_regression_blocks_alignment(self):
        ts = TimeSeries(np.arange(10.0), dt=1.0)
        blocks = build_regression(ts, LagSet((1, 3)), target_start=3)
        assert blocks.targets.tolist() == [[3, 4, 5, 6, 7, 8, 9]]
        # highest lag first
        assert blocks.regressors[0].tolist() == [0, 1, 2, 3, 4, 5, 6]
        assert blocks.regressors[1].tolist() == [2, 3, 4, 5, 6, 7, 8]

    def test_target_start_below_max_lag(self):
        ts = TimeSeries(np.arange(10.0), dt=1.0)
        with pytest.raises(LagUnderflowError):
            build_regression(ts, LagSet((1, 5)), target_start=4)

    def test_scalar_two_lag_recovery(self, two_lag_series):
        model = fit(two_lag_series, LagSet((1, 5)), target_start=20)
        assert model.matrix(1)[0, 0] == pytest.approx(0.5, abs=1e-8)
        assert model.matrix(5)[0, 0] == pytest.approx(0.3, abs=1e-8)

    def test_multivariate_recovery(self):
        K1, K3 = stable_three_state_system()
        ts = generate_lagged_linear([1, 3], [K1, K3], n_steps=150, seed=3)
        model = fit(ts, LagSet((1, 3)), target_start=3)
        assert np.linalg.norm(model.matrix(1) - K1) < 1e-8
        assert np.linalg.norm(model.matrix(3) - K3) < 1e-8

    def test_one_lag_fit_is_classical_dmd(self, lorenz_series):
        ts = lorenz_series
        model = fit(ts, LagSet((1,)), target_start=150)
        X, Y = ts.data[:, 149:-1], ts.data[:, 150:]
        oracle = Y @ np.linalg.pinv(X)
        np.testing.assert_allclose(model.matrix(1), oracle, atol=1e-8)

    def test_underdetermined(self):
        ts = TimeSeries(np.random.default_rng(0).standard_normal((2, 12)), dt=1.0)
        lags = LagSet(tuple(range(1, 6)))
        with pytest.raises(UnderdeterminedError):
            fit(ts, lags, target_start=5)
        model = fit(ts, lags, target_start=5, allow_underdetermined=True)
        assert len(model.matrices) == 5

    def test_one_step_predictions_and_residual(self, two_lag_series):
        model = fit(two_lag_series, LagSet((1, 5)), target_start=20)
        predictions = one_step_predictions(model, two_lag_series, 20)
        assert predictions.shape == (1, two_lag_series.n_steps - 19)
        assert training_residual(model, two_lag_series, 20) < 1e-10

    def test_norms_follow_lags(self, two_lag_series):
        model = fit(two_lag_series, LagSet((1, 5)), target_start=20)
        norms = lag_matrix_norms(model)
        assert [lag for lag, _ in norms] == [1, 5]
        assert norms[0][1] == pytest.approx(0.5, abs=1e-8)

    def test_perturbing_any_block_raises_the_residual(self):
        rng = np.random.default_rng(2)
        ts = TimeSeries(rng.standard_normal((3, 200)), dt=1.0)
        lags = LagSet((1, 3))
        model = fit(ts, lags, target_start=3)
        best = training_residual(model, ts, 3)
        for i in range(len(lags)):
            for _ in range(5):
                delta = rng.standard_normal((3, 3))
                delta *= 1e-3 / np.linalg.norm(delta)
                matrices = list(model.matrices)
                matrices[i] = matrices[i] + delta
                perturbed = LaggedModel(state_dim=3, lags=lags, matrices=tuple(matrices))
                assert training_residual(perturbed, ts, 3) > best


# ---------------------------------------------------------------------------
# Iteration
# ---------------------------------------------------------------------------

class TestIteration:
    model = LaggedModel(state_dim=1, lags=LagSet((1, 5)), matrices=(0.5, 0.3))

    def test_predict_one_uses_history_order(self):
        history = [[1.0], [0.0], [0.0], [0.0], [2.0]]   # y_{j-4} … y_j
        assert predict_one(self.model, history)[0] == pytest.approx(0.5 * 2.0 + 0.3 * 1.0)

    def test_predict_one_needs_history(self):
        with pytest.raises(LagUnderflowError):
            predict_one(self.model, [[1.0], [2.0]])

    def test_reconstruction_of_exact_model(self, two_lag_series):
        out = reconstruct(self.model, two_lag_series, seed_end=20, horizon_end=two_lag_series.n_steps)
        np.testing.assert_allclose(out.data, two_lag_series.data, atol=1e-8)

    def test_forecast_continues_past_data(self, two_lag_series):
        out = reconstruct(self.model, two_lag_series, seed_end=20,
                          horizon_end=two_lag_series.n_steps, forecast_steps=7)
        assert out.data.shape[1] == two_lag_series.data.shape[1] + 7

    def test_seed_shorter_than_max_lag(self, two_lag_series):
        with pytest.raises(LagUnderflowError):
            reconstruct(self.model, two_lag_series, seed_end=3, horizon_end=10)

    def test_divergence_reports_step(self, two_lag_series):
        exploding = LaggedModel(state_dim=1, lags=LagSet((1,)), matrices=(1e10,))
        with pytest.raises(DivergenceError) as info:
            reconstruct(exploding, two_lag_series, seed_end=5, horizon_end=two_lag_series.n_steps)
        assert info.value.step > 5
        assert info.value.to_dict()["error"] == "divergence"

    def test_iterate_returns_raw_overflow(self):
        exploding = LaggedModel(state_dim=1, lags=LagSet((1,)), matrices=(1e10,))
        out = iterate(exploding, np.ones((1, 1)), 50)
        assert not np.all(np.isfinite(out))

    def test_iterate_agrees_with_predict_one(self, two_lag_series):
        out = iterate(self.model, two_lag_series.data[:, :20], 10)
        for j in range(20, 30):
            assert predict_one(self.model, out[:, :j].T)[0] == out[0, j]

    def test_reconstruction_is_bit_reproducible(self):
        K1, K3 = stable_three_state_system()
        ts = generate_lagged_linear([1, 3], [K1, K3], n_steps=150, seed=3)
        model = fit(ts, LagSet((1, 3)), target_start=3)
        first = reconstruct(model, ts, seed_end=10, horizon_end=ts.n_steps, forecast_steps=20)
        second = reconstruct(model, ts, seed_end=10, horizon_end=ts.n_steps, forecast_steps=20)
        np.testing.assert_array_equal(first.data, second.data)
        np.testing.assert_array_equal(first.data, closed_loop(model, ts, 10, ts.n_steps, 20))

    def test_closed_loop_keeps_divergent_columns(self, two_lag_series):
        exploding = LaggedModel(state_dim=1, lags=LagSet((1,)), matrices=(1e10,))
        out = closed_loop(exploding, two_lag_series, seed_end=5, horizon_end=two_lag_series.n_steps)
        assert out.shape == two_lag_series.data.shape
        assert not np.all(np.isfinite(out))

    def test_closed_loop_checks_the_window(self, two_lag_series):
        with pytest.raises(ArgumentError):
            closed_loop(self.model, two_lag_series, seed_end=20, horizon_end=two_lag_series.n_steps + 1)
        with pytest.raises(LagUnderflowError):
            closed_loop(self.model, two_lag_series, seed_end=3, horizon_end=10)


# ---------------------------------------------------------------------------
# Spectrum
# ---------------------------------------------------------------------------

class TestSpectrum:
    def test_companion_layout(self):
        model = LaggedModel(state_dim=1, lags=LagSet((1, 3)), matrices=(0.7, 0.2))
        np.testing.assert_array_equal(
            companion_matrix(model),
            [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.2, 0.0, 0.7]],
        )

    def test_one_lag_spectrum_is_eig_of_k1(self):
        K1 = np.array([[0.5, 0.2], [-0.1, 0.8]])
        model = LaggedModel(state_dim=2, lags=LagSet((1,)), matrices=(K1,))
        np.testing.assert_allclose(
            np.sort_complex(full_spectrum(model).eigenvalues),
            np.sort_complex(np.linalg.eigvals(K1)),
            atol=1e-12,
        )

    def test_scalar_spectrum_matches_polynomial_roots(self):
        model = LaggedModel(state_dim=1, lags=LagSet((1, 5)), matrices=(0.5, 0.3))
        eigs = np.sort_complex(full_spectrum(model).eigenvalues)
        oracle = np.sort_complex(np.roots([1.0, -0.5, 0.0, 0.0, 0.0, -0.3]))
        np.testing.assert_allclose(eigs, oracle, atol=1e-8)

    def test_eigenvalues_are_char_poly_roots(self):
        K1, K3 = stable_three_state_system()
        model = LaggedModel(state_dim=3, lags=LagSet((1, 3)), matrices=(K1, K3))
        spectrum = full_spectrum(model)
        assert len(spectrum) == 9
        for lam in spectrum.eigenvalues:
            assert abs(eval_char_poly(model, lam)) / char_poly_scale(model, lam) < 1e-6

    def test_top_pair_inner_roots(self):
        model = LaggedModel(state_dim=1, lags=LagSet((1, 5)), matrices=(0.5, 0.3))
        inner = top_pair_inner_roots(model)
        # 0.3 + 0.5 z̃ = 0, z̃ = z⁴
        assert inner.source == "reduced-inner"
        assert len(inner) == 4
        np.testing.assert_allclose(inner.eigenvalues ** 4, -0.6, atol=1e-12)

    def test_outer_recipe_is_k1_spectrum(self):
        K1 = np.diag([0.9, 0.4])
        model = LaggedModel(state_dim=2, lags=LagSet((1, 7)), matrices=(K1, 0.01 * np.eye(2)))
        outer = reduced_roots(model, [(1, 0)], monic_degree=1, source="reduced-outer")
        np.testing.assert_allclose(np.sort(outer.eigenvalues.real), [0.4, 0.9], atol=1e-12)

    def test_reduced_roots_missing_lag(self):
        model = LaggedModel(state_dim=1, lags=LagSet((1, 5)), matrices=(0.5, 0.3))
        with pytest.raises(ArgumentError):
            reduced_roots(model, [(7, 0), (1, 1)])

    def test_singular_leading_block_uses_pencil(self):
        roots = matrix_poly_roots([(0, np.eye(2)), (1, np.diag([1.0, 0.0]))])
        np.testing.assert_allclose(roots.eigenvalues, [-1.0], atol=1e-12)

    def test_degenerate_pencil(self):
        singular = np.diag([1.0, 0.0])
        with pytest.raises(DegeneratePencilError):
            matrix_poly_roots([(0, singular), (1, singular)])

    def test_common_power_gives_zero_roots(self):
        roots = matrix_poly_roots([(2, np.array([[1.0]])), (3, np.array([[2.0]]))])
        np.testing.assert_allclose(np.sort_complex(roots.eigenvalues), [-0.5, 0.0, 0.0], atol=1e-12)

    def test_nth_roots(self):
        roots = nth_roots(8.0, 3)
        assert roots[0] == pytest.approx(2.0)
        np.testing.assert_allclose(roots ** 3, 8.0, atol=1e-12)
        with pytest.raises(ArgumentError):
            nth_roots(1.0, 0)

    def test_size_guard(self, monkeypatch):
        monkeypatch.setattr(settings, "MAX_DENSE_DIM", 4)
        model = LaggedModel(state_dim=1, lags=LagSet((1, 5)), matrices=(0.5, 0.3))
        with pytest.raises(SizeGuardError):
            full_spectrum(model)
