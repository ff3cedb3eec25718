"""Tests for the Galerkin SDE integrator."""

import numpy as np
import pytest

from katolab import sde
from katolab.errors import ConfigError, IntegrationError
from katolab.noise import build_noise_model, galerkin_noise, ito_correction, quadratic_form_tensor
from katolab.sde import (
    BrownianStream,
    SdeConfig,
    coarsen,
    drift,
    recompute_energy_history,
    scalar_gbm_check,
    simulate,
    step,
    stopping_step,
    stratonovich_consistency,
    strong_self_convergence,
    weak_residual,
)


class TestSdeConfig:
    def test_defaults(self):
        """Test mu defaults to nu and the step count follows T / dt."""
        cfg = SdeConfig(nu=0.05)

        assert cfg.noise_scale == 0.05
        assert cfg.n_steps == 100

    def test_collects_every_error(self):
        """Test every invalid field is reported at once."""
        with pytest.raises(ConfigError) as excinfo:
            SdeConfig(nu=1.5, dt=-1.0, M=0.5)
        assert len(excinfo.value.errors) == 3

    def test_whole_steps(self):
        """Test T must be a whole number of steps."""
        with pytest.raises(ConfigError, match="whole number"):
            SdeConfig(nu=0.1, dt=0.003, T=0.01)

    def test_unknown_scheme(self):
        """Test only the exponential Euler-Maruyama scheme is accepted."""
        with pytest.raises(ConfigError, match="scheme"):
            SdeConfig(nu=0.1, scheme="milstein")


class TestBrownian:
    def test_reproducible(self):
        """Test one seed gives one increment stream."""
        a = BrownianStream(7, 3, 0.01).increments(20)
        b = BrownianStream(7, 3, 0.01).increments(20)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, BrownianStream(8, 3, 0.01).increments(20))

    def test_coarsen(self):
        """Test coarsening sums consecutive blocks."""
        fine = np.arange(12.0).reshape(6, 2)
        np.testing.assert_array_equal(coarsen(fine, 3), [[6.0, 9.0], [24.0, 27.0]])

    def test_coarsen_uneven(self):
        """Test blocks must divide the step count."""
        with pytest.raises(ValueError):
            coarsen(np.zeros((5, 1)), 2)


class TestStep:
    @pytest.fixture
    def u0(self, basis8):
        return basis8.velocity([1.0, 0.5, 0.25])

    def test_pure_stokes_decay(self, basis8, u0):
        """Test without advection or noise each coefficient decays exactly."""
        cfg = SdeConfig(nu=0.1, dt=0.01, T=0.1, nonlinear=False)
        record = simulate(cfg, None, u0)
        expected = np.exp(-0.1 * np.outer(record.times, basis8.eigenvalues)) * u0.coeffs
        np.testing.assert_allclose(record.coeff_history, expected, rtol=1e-10, atol=1e-14)

    def test_step_matches_simulate(self, basis8, transport8, u0):
        """Test one public step reproduces the first row of a path."""
        cfg = SdeConfig(nu=0.1, dt=0.01, T=0.05, n_galerkin=8, seed=4)
        record = simulate(cfg, transport8, u0)
        nxt = step(cfg, transport8, u0, record.increments[0])
        np.testing.assert_array_equal(nxt.coeffs[:8], record.coeff_history[1])

    def test_step_checks_increments(self, transport8, u0):
        """Test the increment count must match the noise modes."""
        with pytest.raises(ValueError, match="increments"):
            step(SdeConfig(nu=0.1), transport8, u0, np.zeros(2))

    def test_drift_is_advection(self, basis8, u0):
        """Test the noiseless drift is minus the Galerkin advection."""
        n = 6
        cfg = SdeConfig(nu=0.1, n_galerkin=n)
        N = quadratic_form_tensor(basis8, n)
        U = u0.coeffs[:n]
        np.testing.assert_allclose(drift(cfg, None, u0), -np.einsum("kjl,j,l->k", N, U, U), atol=1e-9)

    def test_drift_carries_full_space_correction(self, basis8, transport8, u0):
        """Test the corrected drift adds (mu/2) P_n sum_i Q_i^2 u, not sum_i B_i^2 U."""
        n = 6
        cfg = SdeConfig(nu=0.1, mu=0.2, n_galerkin=n)
        N = quadratic_form_tensor(basis8, n)
        U = u0.coeffs[:n]
        u = basis8.velocity(U)
        expected = -np.einsum("kjl,j,l->k", N, U, U) + 0.1 * ito_correction(transport8, u).coeffs[:n]
        got = drift(cfg, transport8, u)
        np.testing.assert_allclose(got, expected, atol=1e-9)

        truncated = galerkin_noise(transport8, n).truncated_correction
        assert not np.allclose(got, -np.einsum("kjl,j,l->k", N, U, U) + 0.1 * truncated @ U, atol=1e-9)


class TestSimulate:
    @pytest.fixture
    def u0(self, basis8):
        return basis8.velocity([1.0, 0.5, 0.25])

    def test_reproducible(self, transport8, u0):
        """Test identical seeds give identical paths and different seeds differ."""
        cfg = SdeConfig(nu=0.1, dt=0.01, T=0.1, n_galerkin=8, seed=2)
        a = simulate(cfg, transport8, u0)
        b = simulate(cfg, transport8, u0)
        c = simulate(SdeConfig(nu=0.1, dt=0.01, T=0.1, n_galerkin=8, seed=3), transport8, u0)

        assert a.checksum() == b.checksum()
        assert a.checksum() != c.checksum()

    def test_energy_history_recomputes(self, basis8, transport8, u0):
        """Test stored energies equal a recomputation from the coefficients."""
        cfg = SdeConfig(nu=0.1, dt=0.01, T=0.1, n_galerkin=8, seed=2)
        record = simulate(cfg, transport8, u0)
        again = recompute_energy_history(basis8.eigenvalues, record.times, record.coeff_history)
        np.testing.assert_array_equal(record.energy_history, again)
        assert list(record.energy_frame().columns) == ["time", "l2_sq", "h1_sq", "dissipation"]

    def test_truncation_zeroes_after_stop(self, u0):
        """Test the state is zero after the stopping time when truncating."""
        cfg = SdeConfig(nu=0.01, dt=0.01, T=0.5, M=2.0, truncate=True, nonlinear=False)
        record = simulate(cfg, None, u0)

        assert record.stop_step is not None
        assert record.stop_hit == pytest.approx(record.times[record.stop_step])
        assert np.all(record.coeff_history[record.stop_step + 1:] == 0)
        assert np.any(record.coeff_history[record.stop_step] != 0)

    def test_stop_recorded_without_truncation(self, u0):
        """Test the hit is only recorded when not truncating."""
        cfg = SdeConfig(nu=0.01, dt=0.01, T=0.5, M=2.0, nonlinear=False)
        record = simulate(cfg, None, u0)

        assert record.stop_step is not None
        assert np.any(record.coeff_history[-1] != 0)

    def test_cfl_violation(self, basis8):
        """Test a step too large for the initial gradient is rejected."""
        u0 = basis8.velocity([10.0])
        with pytest.raises(ConfigError, match="violates"):
            simulate(SdeConfig(nu=0.1, dt=0.1, T=1.0), None, u0)

    def test_non_finite_state(self, transport8, u0, monkeypatch):
        """Test a non-finite state raises with the partial path attached."""
        monkeypatch.setattr(sde, "_em_step", lambda sys, cfg, U, dW, decay: np.full_like(U, np.nan))
        with pytest.raises(IntegrationError) as excinfo:
            simulate(SdeConfig(nu=0.1, dt=0.01, T=0.1, n_galerkin=8), transport8, u0)

        assert excinfo.value.step == 1
        assert len(excinfo.value.record.times) == 1

    def test_additive_noise(self, basis8, u0):
        """Test additive forcing integrates to a finite path."""
        model = build_noise_model(basis8, "additive", n_noise=3, seed=1)
        record = simulate(SdeConfig(nu=0.1, dt=0.01, T=0.1, seed=5), model, u0)
        assert np.all(np.isfinite(record.coeff_history))
        assert record.increments.shape == (10, 3)

    def test_weak_residual_small(self, basis8, transport8, u0):
        """Test the path satisfies the weak formulation up to the time-stepping error."""
        cfg = SdeConfig(nu=0.001, dt=0.001, T=0.1, n_galerkin=8, seed=9)
        record = simulate(cfg, transport8, u0)
        defect = weak_residual(record, transport8, cfg, basis8.mode(0))

        assert defect[0] == 0.0
        assert np.max(np.abs(defect)) < 1e-3


class TestStoppingStep:
    def test_first_hit(self):
        """Test the first index where sup energy plus dissipation reaches M + e0."""
        energy = np.array([[1.0, 0.0, 0.0], [3.0, 0.0, 0.5], [2.0, 0.0, 1.0]])

        assert stopping_step(energy, M=2.0, e0=1.0) == 1
        assert stopping_step(energy, M=3.5, e0=1.0) == 2
        assert stopping_step(energy, M=10.0, e0=1.0) is None

    def test_monotone_in_m(self, basis8, transport8):
        """Test a larger threshold never stops earlier on the same path."""
        u0 = basis8.velocity([1.0, 0.5])
        record = simulate(SdeConfig(nu=0.05, dt=0.01, T=0.5, n_galerkin=8, seed=1), transport8, u0)
        e0 = record.energy_history[0, 0]
        steps = [stopping_step(record.energy_history, M, e0) for M in [1.5, 3.0, 6.0, 12.0, 1e6]]
        as_numbers = [np.inf if s is None else s for s in steps]
        assert as_numbers == sorted(as_numbers)


class TestConvergence:
    @pytest.fixture
    def u0(self, basis8):
        return basis8.velocity([1.0, 0.5, 0.25])

    def test_stratonovich_consistency(self, transport8, u0):
        """Test the corrected Ito scheme and the Stratonovich scheme converge together."""
        cfg = SdeConfig(nu=0.1, dt=0.01, T=0.1, n_galerkin=6, nonlinear=False)
        report = stratonovich_consistency(cfg, transport8, u0, seed=0, n_paths=8, refinements=4)

        assert report.errors[-1] < report.errors[0]
        assert report.slope > 0.5

    def test_stratonovich_needs_correction(self, basis8, u0):
        """Test the harness refuses noise without a Stratonovich correction."""
        model = build_noise_model(basis8, "transport_ito", n_noise=2)
        with pytest.raises(ValueError, match="Stratonovich"):
            stratonovich_consistency(SdeConfig(nu=0.1, dt=0.01, T=0.05), model, u0)

    def test_strong_self_convergence(self, transport8, u0):
        """Test successive refinements get closer on common Brownian paths."""
        cfg = SdeConfig(nu=0.1, dt=0.01, T=0.1, n_galerkin=6, nonlinear=False)
        report = strong_self_convergence(cfg, transport8, u0, seed=0, n_paths=8, levels=4)

        assert len(report.errors) == 3
        assert np.all(report.errors > 0)
        assert report.errors[-1] < report.errors[0]

    def test_scalar_gbm(self):
        """Test both schemes track the closed-form geometric Brownian motion."""
        check = scalar_gbm_check(sigma=0.5, T=1.0, dt=1e-4, seed=0)

        assert check.heun_error < 1e-2
        assert check.ito_error < 5e-2
