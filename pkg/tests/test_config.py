"""Tests for TOML experiment configuration."""

import pytest

from katolab.config import ExperimentConfig, config_from_dict, loads_config, parse_config
from katolab.errors import ConfigError

SMALL = """
[domain]
nx = 8

[basis]
n_modes = 12

[noise]
kind = "salt"
n_noise = 3

[sde]
nu = [0.2, 0.1]
alpha = 1
dt = 0.01
T = 0.05
paths = 4

[diagnostics]
c_tilde = [2.0, 1.0]
"""


class TestDefaults:
    def test_empty_config(self):
        """Test every table is optional and derived defaults are filled in."""
        cfg = config_from_dict({})

        assert cfg.domain.nx == 16
        assert cfg.sde.n_galerkin == cfg.basis.n_modes
        assert cfg.euler.dt == pytest.approx(cfg.sde.dt / 4)

    def test_filled_defaults_share_digest(self):
        """Test spelling out a default does not change the digest."""
        assert config_from_dict({}).digest() == config_from_dict({"sde": {"n_galerkin": 32}}).digest()


class TestLoads:
    def test_small(self):
        """Test scalars become ladders and c_tilde is sorted."""
        cfg = loads_config(SMALL)

        assert cfg.sde.nu == (0.2, 0.1)
        assert cfg.sde.alpha == (1.0,)
        assert cfg.diagnostics.c_tilde == (1.0, 2.0)
        assert cfg.noise.kind == "salt"
        assert cfg.sde.n_galerkin == 12

    def test_round_trip_through_dict(self):
        """Test a validated config rebuilds to the same digest."""
        cfg = loads_config(SMALL)
        again = config_from_dict(cfg.to_dict())

        assert again == cfg
        assert again.digest() == cfg.digest()
        assert isinstance(cfg.to_dict()["sde"]["nu"], list)

    def test_syntax_error(self):
        """Test a TOML syntax error names the source."""
        with pytest.raises(ConfigError, match="run.toml"):
            loads_config("[domain\nnx = 8", source="run.toml")


class TestValidation:
    def test_collects_every_error(self):
        """Test one pass reports all problems."""
        with pytest.raises(ConfigError) as excinfo:
            config_from_dict({"domain": {"nx": 7}, "sde": {"paths": 1}})

        messages = excinfo.value.errors
        assert len(messages) == 2
        assert any("nx" in m for m in messages) and any("paths" in m for m in messages)

    def test_type_and_range_errors_together(self):
        """Test a type error in one table does not hide range errors in another."""
        with pytest.raises(ConfigError) as excinfo:
            loads_config('[domain]\nnx = "a"\n[sde]\nnu = [0.01, 0.05]\n')

        messages = excinfo.value.errors
        assert len(messages) == 2
        assert any("expected an integer" in m for m in messages)
        assert any("strictly decreasing" in m for m in messages)

    def test_unknown_names(self):
        """Test unknown tables and keys are reported."""
        with pytest.raises(ConfigError) as excinfo:
            config_from_dict({"solver": {}, "sde": {"sigma": 1.0}})
        text = str(excinfo.value)

        assert "unknown table [solver]" in text
        assert "unknown key 'sigma'" in text

    def test_bool_is_not_an_integer(self):
        """Test true is refused where a count is expected."""
        with pytest.raises(ConfigError, match="expected an integer"):
            config_from_dict({"domain": {"nx": True}})

    def test_too_many_modes(self):
        """Test n_modes is bounded by the divergence-free subspace."""
        with pytest.raises(ConfigError, match="between 1 and 49"):
            config_from_dict({"domain": {"nx": 8}, "basis": {"n_modes": 50}})

    def test_ladder_order(self):
        """Test the viscosity ladder must strictly decrease."""
        with pytest.raises(ConfigError, match="strictly decreasing: 0.1 then 0.1"):
            config_from_dict({"sde": {"nu": [0.2, 0.1, 0.1]}})

    @pytest.mark.parametrize("alpha", [0.4, 2.5])
    def test_alpha_range(self, alpha):
        """Test alpha outside [1/2, 2] is rejected."""
        with pytest.raises(ConfigError, match="alpha"):
            config_from_dict({"sde": {"alpha": alpha}})

    def test_whole_steps(self):
        """Test T must be a whole number of SDE and Euler steps."""
        with pytest.raises(ConfigError, match=r"\[sde\] T="):
            config_from_dict({"sde": {"dt": 0.003, "T": 0.01}})
        with pytest.raises(ConfigError, match=r"\[euler\] T="):
            config_from_dict({"euler": {"dt": 0.003}})

    def test_initial_lengths(self):
        """Test modes and amplitudes pair up."""
        with pytest.raises(ConfigError, match="2 modes but 1 amplitudes"):
            config_from_dict({"initial": {"modes": [1, 2], "amplitudes": [1.0]}})

    def test_audit_samples(self):
        """Test the audit runs with at least ten samples or not at all."""
        assert config_from_dict({"noise": {"audit_samples": 0}}).noise.audit_samples == 0
        with pytest.raises(ConfigError, match="audit_samples"):
            config_from_dict({"noise": {"audit_samples": 5}})

    def test_unknown_kind_and_format(self):
        """Test enumerated strings are checked."""
        with pytest.raises(ConfigError) as excinfo:
            config_from_dict({"noise": {"kind": "levy"}, "output": {"format": "hdf5"}})
        assert len(excinfo.value.errors) == 2


class TestOverrides:
    def test_overrides(self):
        """Test command-line overrides replace output and seed."""
        cfg = ExperimentConfig().with_overrides(out="elsewhere", paths=True, seed=11)

        assert cfg.output.directory == "elsewhere"
        assert cfg.output.paths is True
        assert cfg.sde.seed == 11

    def test_seed_changes_digest(self):
        """Test the seed is part of the digest."""
        cfg = config_from_dict({})
        assert cfg.with_overrides(seed=1).digest() != cfg.digest()
        assert cfg.with_overrides().digest() == cfg.digest()

    def test_output_not_in_digest(self):
        """Test the output directory and dump switch leave the digest alone."""
        cfg = config_from_dict({})
        assert cfg.with_overrides(out="elsewhere", paths=True).digest() == cfg.digest()

    def test_negative_seed(self):
        """Test a negative seed override is a config error."""
        with pytest.raises(ConfigError, match="seed"):
            ExperimentConfig().with_overrides(seed=-1)


class TestParseConfig:
    def test_file(self, tmp_path):
        """Test reading a config file."""
        path = tmp_path / "run.toml"
        path.write_text(SMALL)
        assert parse_config(path) == loads_config(SMALL)

    def test_missing_file(self, tmp_path):
        """Test a missing file is reported as such."""
        with pytest.raises(FileNotFoundError):
            parse_config(tmp_path / "absent.toml")
