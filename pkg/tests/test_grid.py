"""Tests for the staggered grid, strips and gradient energies."""

import numpy as np
import pytest

from katolab.errors import ConfigError
from katolab.grid import (
    Domain,
    ScalarGridField,
    VectorGridField,
    boundary_strip,
    build_domain,
    curl,
    gradient_energy,
    integrate,
)


class TestDomain:
    def test_sizes(self):
        """Test face and node counts of the packed layout."""
        domain = build_domain(8)

        assert domain.h == 0.125
        assert domain.n_velocity == 2 * 8 * 7
        assert domain.n_stream == 49
        assert domain.u_shape == (9, 8)
        assert domain.v_shape == (8, 9)

    @pytest.mark.parametrize("nx", [7, 6, 0, 9])
    def test_rejects_bad_nx(self, nx):
        """Test odd or too small cell counts are configuration errors."""
        with pytest.raises(ConfigError):
            Domain(nx)

    def test_rejects_bool(self):
        """Test a boolean is not accepted as a cell count."""
        with pytest.raises(ConfigError):
            Domain(True)

    def test_pack_unpack(self, rng):
        """Test packing keeps interior faces and unpacking zeroes the walls."""
        domain = build_domain(8)
        vec = rng.standard_normal(domain.n_velocity)
        u, v = domain.unpack(vec)

        assert np.all(u[0] == 0) and np.all(u[-1] == 0)
        assert np.all(v[:, 0] == 0) and np.all(v[:, -1] == 0)
        np.testing.assert_array_equal(domain.pack(u, v), vec)

    def test_unpack_wrong_length(self):
        """Test a packed vector of the wrong length is rejected."""
        domain = build_domain(8)
        with pytest.raises(ValueError, match="expected"):
            domain.unpack(np.zeros(10))


class TestVectorGridField:
    def test_curl_is_divergence_free(self, rng):
        """Test the discrete curl of a wall-vanishing stream function has zero divergence."""
        domain = build_domain(16)
        psi = np.zeros(domain.node_shape)
        psi[1:-1, 1:-1] = rng.standard_normal((15, 15))
        field = VectorGridField(domain, *curl(domain, psi))

        assert np.max(np.abs(field.divergence())) < 1e-10
        assert np.all(field.u[0] == 0)

    def test_rejects_nan(self):
        """Test non-finite values are rejected."""
        domain = build_domain(8)
        u = np.zeros(domain.u_shape)
        u[3, 3] = np.nan
        with pytest.raises(ValueError, match="NaN"):
            VectorGridField(domain, u, np.zeros(domain.v_shape))

    def test_shape_mismatch(self):
        """Test component shapes are checked."""
        domain = build_domain(8)
        with pytest.raises(ValueError, match="shapes"):
            VectorGridField(domain, np.zeros((8, 8)), np.zeros(domain.v_shape))


class TestBoundaryStrip:
    def test_area(self):
        """Test the strip of width 1/4 covers three quarters of the square."""
        domain = build_domain(16)
        strip = boundary_strip(domain, 0.25)

        assert strip.area == pytest.approx(0.75)
        assert strip.weighted_area == pytest.approx(0.75)
        assert not strip.clamped

    def test_integrate_ones(self):
        """Test integrating one over the strip gives its area."""
        domain = build_domain(16)
        ones = ScalarGridField(domain, np.ones((16, 16)))

        assert integrate(ones, boundary_strip(domain, 0.25)) == pytest.approx(0.75)
        assert integrate(ones) == pytest.approx(1.0)

    def test_partial_cells(self):
        """Test a width that cuts through cells still integrates to the exact area."""
        domain = build_domain(16)
        strip = boundary_strip(domain, 0.1)

        assert strip.weighted_area == pytest.approx(strip.area, rel=1e-12)

    def test_clamped_below_half_cell(self, caplog):
        """Test widths below h/2 are clamped and the clamp is logged."""
        domain = build_domain(16)
        strip = boundary_strip(domain, 0.01)

        assert strip.clamped
        assert strip.effective_width == pytest.approx(1 / 32)
        assert "clamped" in caplog.text

    def test_non_positive_width(self):
        """Test zero width is rejected."""
        with pytest.raises(ValueError):
            boundary_strip(build_domain(8), 0.0)

    def test_dilated(self):
        """Test dilation widens the strip by whole cells."""
        domain = build_domain(16)
        strip = boundary_strip(domain, 0.125)

        assert strip.dilated(2).effective_width == pytest.approx(0.125 + 2 / 16)


class TestGradientEnergy:
    @pytest.fixture
    def field(self, rng):
        domain = build_domain(16)
        psi = np.zeros((3,) + domain.node_shape)
        psi[:, 1:-1, 1:-1] = rng.standard_normal((3, 15, 15))
        return domain, curl(domain, psi)

    def test_strip_dominated_and_monotone(self, field):
        """Test strip energies grow with the width and never exceed the full energy."""
        domain, (u, v) = field
        full = gradient_energy(domain, u, v)
        previous = np.zeros_like(full)
        for width in [0.03, 0.0625, 0.1, 0.2, 0.3]:
            strip = gradient_energy(domain, u, v, strip=boundary_strip(domain, width))
            assert np.all(strip <= full)
            assert np.all(previous <= strip)
            previous = strip

    def test_half_width_strip_is_full(self, field):
        """Test a strip of width 1/2 covers the whole domain."""
        domain, (u, v) = field
        full = gradient_energy(domain, u, v)
        np.testing.assert_allclose(gradient_energy(domain, u, v, strip=boundary_strip(domain, 0.5)), full)

    def test_unknown_boundary_mode(self, field):
        """Test the wall treatment is validated."""
        domain, (u, v) = field
        with pytest.raises(ValueError, match="boundary"):
            gradient_energy(domain, u, v, boundary="periodic")

    def test_grid_mismatch(self, field):
        """Test a strip from another grid is rejected."""
        domain, (u, v) = field
        with pytest.raises(ValueError, match="grid mismatch"):
            gradient_energy(domain, u, v, strip=boundary_strip(build_domain(8), 0.25))
