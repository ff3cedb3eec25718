"""Tests for the basis and Euler caches and the per-path dumps."""

import logging

import numpy as np
import pytest

from katolab.euler import solve_euler
from katolab.sde import SdeConfig, simulate
from katolab.spectral import BASIS_FORMAT_VERSION
from katolab.store import (
    CACHE_ENV,
    cache_dir,
    euler_key,
    find_file,
    load_basis,
    load_or_build_basis,
    load_or_solve_euler,
    load_path,
    save_path,
)


class TestCacheDir:
    def test_environment(self, tmp_path):
        """Test the cache follows the environment variable unless a directory is given."""
        assert cache_dir() == tmp_path / "cache"
        assert cache_dir(tmp_path / "other") == tmp_path / "other"

    def test_home_default(self, monkeypatch):
        """Test the fallback under the user cache directory."""
        monkeypatch.delenv(CACHE_ENV)
        assert cache_dir().parts[-2:] == (".cache", "katolab")


class TestBasisCache:
    def test_build_then_load(self, domain8):
        """Test a miss builds and caches, a hit loads the same basis."""
        built = load_or_build_basis(domain8, 6)
        assert find_file(cache_dir(), "basis", nx=8, n_modes=6, version=1) is not None

        loaded = load_basis(8, 6)
        assert loaded.digest == built.digest
        np.testing.assert_array_equal(loaded.fields, built.fields)

    def test_miss(self):
        """Test a missing entry names the expected pattern."""
        with pytest.raises(FileNotFoundError, match="basis-nx"):
            load_basis(8, 5)

    def test_truncated_entry_rebuilt(self, domain8, caplog):
        """Test a half-written cache file is treated as a miss and replaced."""
        directory = cache_dir()
        directory.mkdir(parents=True, exist_ok=True)
        (directory / f"basis-nx8-n4-v{BASIS_FORMAT_VERSION}.npz").write_bytes(b"PK\x03\x04partial")

        with caplog.at_level(logging.WARNING, logger="katolab.store"):
            basis = load_or_build_basis(domain8, 4)

        assert "unreadable basis cache entry" in caplog.text
        assert load_basis(8, 4).digest == basis.digest

    def test_no_temporary_files_left(self, domain8):
        """Test a save leaves only the final file behind."""
        load_or_build_basis(domain8, 3)
        assert [p.name for p in cache_dir().iterdir()] == [f"basis-nx8-n3-v{BASIS_FORMAT_VERSION}.npz"]


class TestEulerCache:
    def test_solve_then_load(self, basis8):
        """Test the second request is served from the cache."""
        u0 = basis8.velocity([1.0, 0.5])
        first = load_or_solve_euler(u0, T=0.02, dt=0.005)
        key = euler_key(u0, 0.02, 0.005)
        assert find_file(cache_dir(), "euler", key=key) is not None

        second = load_or_solve_euler(u0, T=0.02, dt=0.005)
        assert second.digest == first.digest
        assert second.digest == solve_euler(basis8.domain, u0, T=0.02, dt=0.005).digest

    def test_key_depends_on_inputs(self, basis8):
        """Test the key changes with the step and the initial state."""
        u0 = basis8.velocity([1.0, 0.5])
        key = euler_key(u0, 0.02, 0.005)

        assert len(key) == 24
        assert euler_key(u0, 0.02, 0.0025) != key
        assert euler_key(basis8.velocity([1.0, 0.4]), 0.02, 0.005) != key

    def test_truncated_entry_solved_again(self, basis8, caplog):
        """Test a corrupt Euler cache file falls back to a fresh solve."""
        u0 = basis8.velocity([1.0, 0.5])
        directory = cache_dir()
        directory.mkdir(parents=True, exist_ok=True)
        (directory / f"euler-{euler_key(u0, 0.02, 0.005)}.npz").write_bytes(b"PK\x03\x04partial")

        with caplog.at_level(logging.WARNING, logger="katolab.store"):
            sol = load_or_solve_euler(u0, T=0.02, dt=0.005)

        assert "unreadable Euler cache entry" in caplog.text
        assert sol.digest == solve_euler(basis8.domain, u0, T=0.02, dt=0.005).digest


class TestPathDumps:
    @pytest.fixture
    def record(self, basis8, transport8):
        u0 = basis8.velocity([1.0, 0.5, 0.25])
        return simulate(SdeConfig(nu=0.1, dt=0.01, T=0.05, n_galerkin=8, seed=5), transport8, u0)

    def test_npz(self, record, tmp_path):
        """Test an npz dump reads back bit-exactly with its increments."""
        path = save_path(record, tmp_path, "nu0.1-alpha1.0")
        back = load_path(path)

        assert path.name == "path-nu0.1-alpha1.0-seed5.npz"
        assert back.checksum() == record.checksum()
        np.testing.assert_array_equal(back.increments, record.increments)
        assert back.nu == record.nu and back.stop_step == record.stop_step

    def test_csv(self, record, tmp_path):
        """Test a CSV dump reads back bit-exactly without increments."""
        path = save_path(record, tmp_path, "p", fmt="csv")
        back = load_path(path)

        assert path.with_suffix(".json").exists()
        np.testing.assert_array_equal(back.coeff_history, record.coeff_history)
        np.testing.assert_array_equal(back.energy_history, record.energy_history)
        assert back.checksum() == record.checksum()
        assert back.increments is None

    def test_find_prefers_npz(self, record, tmp_path):
        """Test npz dumps are found before CSV ones."""
        save_path(record, tmp_path, "p", fmt="csv")
        assert find_file(tmp_path, "path", point="p", seed=5).suffix == ".csv"
        save_path(record, tmp_path, "p")
        assert find_file(tmp_path, "path", point="p", seed=5).suffix == ".npz"

    def test_unknown_format(self, record, tmp_path):
        """Test unsupported dump formats are refused."""
        with pytest.raises(ValueError, match="unknown path format"):
            save_path(record, tmp_path, "p", fmt="parquet")
