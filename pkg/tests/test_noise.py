"""Tests for advection, the noise families and the assumption audit."""

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pandas as pd
import pytest

from katolab.noise import (
    AssumptionAudit,
    NoiseKind,
    adjoint_split,
    advect,
    advect_packed,
    apply_adjoint,
    apply_noise_mode,
    audit_assumptions,
    build_correlations,
    build_noise_model,
    galerkin_noise,
    ito_correction,
    normalize_amplitudes,
    parse_kind,
    quadratic_form_tensor,
    stretch_packed,
)
from katolab.spectral import leray_packed, random_velocity


class TestAdvection:
    def test_skew_symmetric(self, basis16, rng):
        """Test <L_f g, k> = -<g, L_f k> for divergence-free f."""
        domain = basis16.domain
        f, g, k = (random_velocity(basis16, rng).packed for _ in range(3))
        lhs = domain.inner(advect_packed(domain, f, g), k)
        rhs = -domain.inner(g, advect_packed(domain, f, k))

        assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-12)

    def test_energy_neutral(self, basis16, rng):
        """Test <L_u u, u> vanishes to rounding."""
        u = random_velocity(basis16, rng, scale=3.0)
        adv = advect(u, u)
        assert abs(adv.inner(u.grid)) < 1e-10 * adv.norm() * 3.0

    def test_zero_wall_faces(self, basis8, rng):
        """Test advection leaves wall-normal faces at zero."""
        f = random_velocity(basis8, rng)
        out = advect(f, f)
        assert np.all(out.u[0] == 0) and np.all(out.v[:, -1] == 0)

    def test_quadratic_form_tensor(self, basis8, rng):
        """Test the dense tensor reproduces the Galerkin advection."""
        n = 6
        tensor = quadratic_form_tensor(basis8, n)
        coeffs = rng.standard_normal(n)
        u = basis8.reconstruct(coeffs)
        direct = basis8.coefficients(advect_packed(basis8.domain, u, u))[:n]
        np.testing.assert_allclose(np.einsum("kjl,j,l->k", tensor, coeffs, coeffs), direct, atol=1e-9)

    def test_stretch_adjoint(self, basis8, rng):
        """Test the SALT stretching transpose is the exact discrete adjoint."""
        domain = basis8.domain
        xi, f, g = (random_velocity(basis8, rng).packed for _ in range(3))
        lhs = domain.inner(stretch_packed(domain, xi, f), g)
        rhs = domain.inner(f, stretch_packed(domain, xi, g, adjoint=True))
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)


class TestNoiseModel:
    def test_parse_kind(self):
        """Test kind names are case-insensitive and validated."""
        assert parse_kind("SALT") == NoiseKind.SALT
        with pytest.raises(ValueError, match="unknown noise kind"):
            parse_kind("levy")

    def test_too_many_noise_modes(self, basis8):
        """Test the truncation cannot exceed the basis."""
        with pytest.raises(ValueError, match="n_noise"):
            build_noise_model(basis8, "transport_ito", n_noise=17)

    def test_amplitudes_decay(self, basis8):
        """Test amplitudes follow a0 * i^(-decay)."""
        model = build_noise_model(basis8, "transport_ito", n_noise=3, a0=0.5, decay=2.0)
        np.testing.assert_allclose(model.amplitudes, [0.5, 0.125, 0.5 / 9])

    def test_correlation_fields(self, basis8):
        """Test xi_i is the scaled i-th eigenfield and stays divergence-free."""
        corr = build_correlations(basis8, 3, a0=0.5, decay=2.0)

        assert corr.n_noise == 3
        np.testing.assert_allclose(corr.xi[1], 0.125 * basis8.fields[1])
        np.testing.assert_allclose(corr.field(2).packed, corr.xi[2], atol=1e-12)
        assert np.all(corr.w2inf_norms() > 0)
        assert corr.summability == pytest.approx(np.sum(corr.w2inf_norms() ** 2))
        with pytest.raises(ValueError, match="exceeds"):
            build_correlations(basis8, 17)

    def test_correction_switch(self, basis8):
        """Test only Stratonovich transport and SALT carry the Ito correction."""
        for kind, enabled in [
            ("additive", False),
            ("multiplicative", False),
            ("transport_ito", False),
            ("transport_stratonovich", True),
            ("salt", True),
        ]:
            assert build_noise_model(basis8, kind, n_noise=2).ito_correction_enabled is enabled

    def test_additive_ignores_state(self, basis8, rng):
        """Test additive noise does not depend on the state."""
        model = build_noise_model(basis8, "additive", n_noise=2, seed=3)
        a = random_velocity(basis8, rng).packed
        b = random_velocity(basis8, rng).packed
        np.testing.assert_array_equal(model.g_packed(1, a), model.g_packed(1, b))

    def test_scaled(self, transport8):
        """Test scaling multiplies the amplitudes and the correlation fields."""
        scaled = transport8.scaled(2.0)
        np.testing.assert_allclose(scaled.amplitudes, 2.0 * transport8.amplitudes)
        np.testing.assert_allclose(scaled.correlations.xi, 2.0 * transport8.correlations.xi)

    def test_mode_index_checked(self, transport8, basis8):
        """Test noise mode indices are range-checked."""
        with pytest.raises(IndexError):
            transport8.g_packed(4, basis8.fields[0])

    def test_transport_is_projected(self, transport8, basis8, rng):
        """Test projected transport noise stays in the basis span to rounding."""
        u = random_velocity(basis8, rng)
        g = apply_noise_mode(transport8, 0, u)
        assert np.all(np.isfinite(g.coeffs))


class TestGalerkinNoise:
    def test_transport_matrices_skew(self, transport8):
        """Test projected transport gives skew-symmetric Galerkin matrices."""
        noise = galerkin_noise(transport8, 10)
        for B in noise.matrices:
            np.testing.assert_allclose(B, -B.T, atol=1e-9 * np.max(np.abs(B)))

    def test_correction_negative_semidefinite(self, transport8):
        """Test the projected sum Q_i^2 is symmetric negative semidefinite."""
        corr = galerkin_noise(transport8, 10).correction
        np.testing.assert_allclose(corr, corr.T, atol=1e-8 * np.max(np.abs(corr)))
        assert np.max(np.linalg.eigvalsh(0.5 * (corr + corr.T))) < 1e-8 * np.max(np.abs(corr))

    def test_multiplicative_is_scalar(self, basis8):
        """Test multiplicative noise gives amplitude times identity."""
        model = build_noise_model(basis8, "multiplicative", n_noise=2, a0=0.3)
        noise = galerkin_noise(model, 5)
        np.testing.assert_allclose(noise.matrices[0], 0.3 * np.eye(5), atol=1e-10)
        assert noise.correction is None

    def test_additive_vectors(self, basis8):
        """Test additive noise is carried by coefficient vectors."""
        model = build_noise_model(basis8, "additive", n_noise=3)
        noise = galerkin_noise(model, 5)
        assert noise.matrices is None
        assert noise.vectors.shape == (3, 5)

    def test_cached(self, transport8):
        """Test the matrices are computed once per truncation."""
        assert galerkin_noise(transport8, 6) is galerkin_noise(transport8, 6)

    def test_cached_under_threads(self, transport8):
        """Test concurrent first calls share one cached entry."""
        model = transport8.scaled(1.0)
        with ThreadPoolExecutor(max_workers=4) as pool:
            results = list(pool.map(lambda _: galerkin_noise(model, 7), range(8)))
        assert all(r is results[0] for r in results)

    def test_correction_matches_full_space(self, transport8, basis8):
        """Test correction columns are the projected full-space Q_i^2 of each mode."""
        n = 10
        corr = galerkin_noise(transport8, n).correction
        for j in range(n):
            expected = ito_correction(transport8, basis8.mode(j)).coeffs[:n]
            np.testing.assert_allclose(corr[:, j], expected, atol=1e-10 * np.max(np.abs(corr)))

    def test_truncated_correction_differs(self, transport8):
        """Test sum B_i^2 drops the out-of-span part: truncated minus full is PSD and nonzero."""
        noise = galerkin_noise(transport8, 10)
        gap = noise.truncated_correction - noise.correction
        scale = np.max(np.abs(noise.correction))
        assert np.min(np.linalg.eigvalsh(0.5 * (gap + gap.T))) > -1e-8 * scale
        assert np.max(np.abs(gap)) > 1e-6 * scale


class TestStratonovichCorrection:
    def test_neutrality(self, transport8, basis8, rng):
        """Test <Q^2 phi, phi> + ||Q phi||^2 = 0 for projected transport."""
        domain = basis8.domain
        phi = random_velocity(basis8, rng).packed
        for i in range(transport8.n_noise):
            q = transport8.q_packed(i, phi)
            total = domain.inner(transport8.q_packed(i, q), phi) + domain.inner(q, q)
            assert abs(total) <= 1e-8 * domain.inner(q, q) + 1e-14

    def test_ito_correction_needs_q(self, basis8):
        """Test the Ito correction is refused for uncorrected kinds."""
        model = build_noise_model(basis8, "transport_ito", n_noise=2)
        with pytest.raises(ValueError, match="no Ito correction"):
            ito_correction(model, basis8.mode(0))

    def test_ito_correction_dissipative(self, transport8, basis8, rng):
        """Test <sum Q_i^2 u, u> <= 0 for projected transport."""
        u = random_velocity(basis8, rng)
        assert ito_correction(transport8, u).inner(u) <= 1e-10

    def test_adjoint(self, transport8, basis8, rng):
        """Test Q_i^* is the discrete adjoint of Q_i."""
        domain = basis8.domain
        f = random_velocity(basis8, rng)
        g = random_velocity(basis8, rng)
        lhs = domain.inner(transport8.q_packed(1, f.packed), g.packed)
        rhs = f.grid.inner(apply_adjoint(transport8, 1, g))
        assert lhs == pytest.approx(rhs, rel=1e-8, abs=1e-12)

    def test_adjoint_split_on_divergence_free(self, transport8, basis8, rng):
        """Test the remainder vanishes on divergence-free fields."""
        f = random_velocity(basis8, rng)
        support, remainder = adjoint_split(transport8, 0, f)
        assert remainder.norm() < 1e-8 * max(support.norm(), 1.0)

    def test_adjoint_remainder_sees_gradient_part(self, transport8, basis8, rng):
        """Test the transport remainder is L_xi of the gradient part and nonzero off the solenoidal span."""
        domain = basis8.domain
        f = rng.standard_normal(domain.n_velocity)
        gradient_part = f - leray_packed(domain, f)
        support, remainder = transport8.adjoint_parts(0, f)

        np.testing.assert_allclose(remainder, transport8.adjoint_parts(0, gradient_part)[1], atol=1e-10)
        np.testing.assert_allclose(support + remainder, transport8.adjoint_packed(0, f), atol=1e-12)
        assert np.linalg.norm(remainder) > 1e-6 * np.linalg.norm(f)


class TestAudit:
    @pytest.fixture(scope="class")
    def ito_model(self, basis8):
        return build_noise_model(basis8, "transport_ito", n_noise=2, a0=0.5)

    def test_records(self, transport8):
        """Test one record per assumption and noise mode."""
        audit = audit_assumptions(transport8, samples=10, seed=0)

        assert len(audit.records) == 11 * transport8.n_noise
        assert set(audit.records.columns) >= {"assumption", "mode", "constant", "k", "violations"}
        assert audit.neutrality.shape == (transport8.n_noise,)

    def test_uncorrected_skips_q(self, ito_model):
        """Test Q-dependent assumptions are skipped when Q = 0."""
        audit = audit_assumptions(ito_model, samples=10, seed=0)

        assert "q_regularity" not in set(audit.records["assumption"])
        assert audit.neutrality is None

    def test_k_scales_quadratically(self, ito_model):
        """Test the fitted k_i scale with the square of the amplitudes."""
        base = audit_assumptions(ito_model, samples=10, seed=0)
        doubled = audit_assumptions(ito_model.scaled(2.0), samples=10, seed=0)
        assert doubled.sum_k == pytest.approx(4.0 * base.sum_k, rel=1e-6, abs=1e-12)

    def test_too_few_samples(self, transport8):
        """Test the audit needs at least ten samples."""
        with pytest.raises(ValueError, match="at least 10"):
            audit_assumptions(transport8, samples=5)

    def test_to_dict(self, transport8):
        """Test the audit summary is JSON-ready."""
        d = audit_assumptions(transport8, samples=10, seed=0).to_dict()
        assert d["kind"] == "transport_stratonovich"
        assert {"sum_k", "violations", "passed", "sum_c", "neutrality"} <= set(d)

    def test_admissible(self):
        """Test the relaxed summability bound sum_k <= (nu / mu)^(1/2)."""
        records = pd.DataFrame([
            {"assumption": "energy", "mode": 0, "constant": 1.0, "k": 2.0, "worst_sample": 0,
             "worst_ratio": 1.0, "violations": 0},
        ])
        audit = AssumptionAudit(NoiseKind.TRANSPORT_ITO, 10, 0, records)

        assert audit.sum_k == 2.0
        assert not audit.passed
        assert audit.admissible(nu=0.04, mu=0.01)
        assert not audit.admissible(nu=0.01, mu=0.01)


class TestNormalizeAmplitudes:
    def _audit(self, sum_k):
        records = pd.DataFrame([
            {"assumption": "energy", "mode": 0, "constant": 0.1, "k": sum_k, "worst_sample": 0,
             "worst_ratio": 1.0, "violations": 0},
        ])
        return AssumptionAudit(NoiseKind.TRANSPORT_STRATONOVICH, 10, 0, records)

    def test_rescales(self, transport8):
        """Test amplitudes shrink by sqrt(target / sum_k)."""
        scaled = normalize_amplitudes(transport8, self._audit(2.0), target=0.5)
        np.testing.assert_allclose(scaled.amplitudes, 0.5 * transport8.amplitudes)

    def test_noop_below_target(self, transport8):
        """Test a model already inside the target is returned unchanged."""
        assert normalize_amplitudes(transport8, self._audit(0.2), target=0.5) is transport8
