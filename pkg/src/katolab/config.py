"""Experiment configuration (TOML).

One file describes a run. Every table is optional; missing keys take the
defaults below. Ladders accept a bare scalar (``nu = 0.05`` is ``nu = [0.05]``).

Example:
    [domain]
    nx = 16

    [basis]
    n_modes = 32

    [sde]
    nu = [0.1, 0.05, 0.025, 0.0125]
    paths = 200
"""

import dataclasses
import hashlib
import json

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from katolab.errors import ConfigError
from katolab.grid import MIN_NX
from katolab.noise import NoiseKind

FORMATS = ("npz", "csv")


def _opt(default, kind: str):
    return field(default=default, metadata={"kind": kind})


@dataclass(frozen=True)
class DomainConfig:
    nx: int = _opt(16, "int")


@dataclass(frozen=True)
class BasisConfig:
    n_modes: int = _opt(32, "int")


@dataclass(frozen=True)
class NoiseConfig:
    """Noise family; ``audit_samples = 0`` skips the audit and the rescaling."""
    kind: str = _opt("transport_stratonovich", "str")
    n_noise: int = _opt(8, "int")
    a0: float = _opt(0.5, "float")
    decay: float = _opt(2.0, "float")
    seed: int = _opt(0, "int")
    audit_samples: int = _opt(50, "int")


@dataclass(frozen=True)
class InitialConfig:
    """Initial state as amplitudes on (one-based) Stokes modes."""
    modes: Tuple[int, ...] = _opt((1, 2, 3), "int_list")
    amplitudes: Tuple[float, ...] = _opt((1.0, 0.5, 0.25), "float_list")


@dataclass(frozen=True)
class SdeBlock:
    nu: Tuple[float, ...] = _opt((0.05,), "float_list")
    alpha: Tuple[float, ...] = _opt((1.0,), "float_list")
    dt: float = _opt(0.005, "float")
    T: float = _opt(0.5, "float")
    M: float = _opt(100.0, "float")
    paths: int = _opt(64, "int")
    seed: int = _opt(0, "int")
    n_galerkin: Optional[int] = _opt(None, "opt_int")
    truncate: bool = _opt(False, "bool")
    nonlinear: bool = _opt(True, "bool")


@dataclass(frozen=True)
class EulerConfig:
    """``dt`` defaults to a quarter of the SDE step."""
    dt: Optional[float] = _opt(None, "opt_float")


@dataclass(frozen=True)
class DiagnosticsConfig:
    c_tilde: Tuple[float, ...] = _opt((1.0,), "float_list")
    n_test_fields: int = _opt(8, "int")


@dataclass(frozen=True)
class OutputConfig:
    directory: str = _opt("katolab-out", "str")
    format: str = _opt("npz", "str")
    paths: bool = _opt(False, "bool")


TABLES = {
    "domain": DomainConfig,
    "basis": BasisConfig,
    "noise": NoiseConfig,
    "initial": InitialConfig,
    "sde": SdeBlock,
    "euler": EulerConfig,
    "diagnostics": DiagnosticsConfig,
    "output": OutputConfig,
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment configuration with defaults filled in."""
    domain: DomainConfig = field(default_factory=DomainConfig)
    basis: BasisConfig = field(default_factory=BasisConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)
    sde: SdeBlock = field(default_factory=SdeBlock)
    euler: EulerConfig = field(default_factory=EulerConfig)
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        def plain(v):
            return list(v) if isinstance(v, tuple) else v
        return {
            name: {k: plain(v) for k, v in dataclasses.asdict(getattr(self, name)).items()}
            for name in TABLES
        }

    def digest(self) -> str:
        """sha256 of the canonical JSON of the validated config.

        The [output] table is left out: where and how a run is written does
        not change its results.
        """
        data = self.to_dict()
        del data["output"]
        text = json.dumps(data, sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()

    def with_overrides(
        self,
        out: Optional[str] = None,
        paths: Optional[bool] = None,
        seed: Optional[int] = None,
    ) -> "ExperimentConfig":
        """Apply command-line overrides; None leaves a value unchanged."""
        output, sde = self.output, self.sde
        if out is not None:
            output = dataclasses.replace(output, directory=str(out))
        if paths is not None:
            output = dataclasses.replace(output, paths=bool(paths))
        if seed is not None:
            if seed < 0:
                raise ConfigError([f"seed must be non-negative, got {seed}"])
            sde = dataclasses.replace(sde, seed=int(seed))
        return dataclasses.replace(self, output=output, sde=sde)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _coerce(where: str, value: Any, kind: str, errors: List[str]):
    if kind in ("int", "opt_int"):
        if _is_int(value):
            return value
        errors.append(f"{where}: expected an integer, got {value!r}")
    elif kind in ("float", "opt_float"):
        if _is_number(value):
            return float(value)
        errors.append(f"{where}: expected a number, got {value!r}")
    elif kind == "bool":
        if isinstance(value, bool):
            return value
        errors.append(f"{where}: expected true or false, got {value!r}")
    elif kind == "str":
        if isinstance(value, str):
            return value
        errors.append(f"{where}: expected a string, got {value!r}")
    elif kind in ("float_list", "int_list"):
        items = value if isinstance(value, list) else [value]
        check = _is_int if kind == "int_list" else _is_number
        if all(check(v) for v in items):
            return tuple(int(v) if kind == "int_list" else float(v) for v in items)
        noun = "integers" if kind == "int_list" else "numbers"
        errors.append(f"{where}: expected a number or a list of {noun}, got {value!r}")
    return None


def _read_table(name: str, cls, data: Any, errors: List[str]):
    if not isinstance(data, dict):
        errors.append(f"[{name}] must be a table")
        return cls()
    known = {f.name: f for f in dataclasses.fields(cls)}
    values = {}
    for key, value in data.items():
        if key not in known:
            errors.append(f"[{name}] unknown key {key!r}")
            continue
        coerced = _coerce(f"[{name}] {key}", value, known[key].metadata["kind"], errors)
        if coerced is not None:
            values[key] = coerced
    return cls(**values)


def _whole_steps(T: float, dt: float) -> bool:
    n = round(T / dt)
    return abs(n * dt - T) <= 1e-9 * max(T, 1.0)


def _validate(cfg: ExperimentConfig, errors: List[str]) -> ExperimentConfig:
    nx = cfg.domain.nx
    if nx < MIN_NX or nx % 2:
        errors.append(f"[domain] nx must be even and >= {MIN_NX}, got {nx}")
    dim = (nx - 1) ** 2
    n_modes = cfg.basis.n_modes
    if not 1 <= n_modes <= dim:
        errors.append(f"[basis] n_modes must be between 1 and {dim} (divergence-free subspace on nx={nx}), got {n_modes}")

    noise = cfg.noise
    kinds = [k.value for k in NoiseKind]
    if noise.kind not in kinds:
        errors.append(f"[noise] kind must be one of {kinds}, got {noise.kind!r}")
    if not 0 <= noise.n_noise <= n_modes:
        errors.append(f"[noise] n_noise must be between 0 and n_modes={n_modes}, got {noise.n_noise}")
    if noise.a0 < 0:
        errors.append(f"[noise] a0 must be non-negative, got {noise.a0}")
    if noise.decay < 0:
        errors.append(f"[noise] decay must be non-negative, got {noise.decay}")
    if noise.seed < 0:
        errors.append(f"[noise] seed must be non-negative, got {noise.seed}")
    if noise.audit_samples != 0 and noise.audit_samples < 10:
        errors.append(f"[noise] audit_samples must be 0 or at least 10, got {noise.audit_samples}")

    init = cfg.initial
    if not init.modes:
        errors.append("[initial] modes must not be empty")
    if len(init.modes) != len(init.amplitudes):
        errors.append(f"[initial] {len(init.modes)} modes but {len(init.amplitudes)} amplitudes")
    for m in init.modes:
        if not 1 <= m <= n_modes:
            errors.append(f"[initial] mode {m} outside 1..{n_modes}")

    sde = cfg.sde
    if not sde.nu:
        errors.append("[sde] nu ladder must not be empty")
    for nu in sde.nu:
        if not 0 < nu < 1:
            errors.append(f"[sde] nu must satisfy 0 < nu < 1, got {nu}")
    for a, b in zip(sde.nu, sde.nu[1:]):
        if not b < a:
            errors.append(f"[sde] nu ladder must be strictly decreasing: {a} then {b}")
    if not sde.alpha:
        errors.append("[sde] alpha ladder must not be empty")
    for a in sde.alpha:
        if not 0.5 <= a <= 2.0:
            errors.append(f"[sde] alpha must lie in [0.5, 2], got {a}")
    if not sde.dt > 0:
        errors.append(f"[sde] dt must be positive, got {sde.dt}")
    if not sde.T >= 0:
        errors.append(f"[sde] T must be non-negative, got {sde.T}")
    elif sde.dt > 0 and not _whole_steps(sde.T, sde.dt):
        errors.append(f"[sde] T={sde.T} is not a whole number of steps of dt={sde.dt}")
    if not sde.M > 1:
        errors.append(f"[sde] M must exceed 1, got {sde.M}")
    if sde.paths < 2:
        errors.append(f"[sde] paths must be at least 2, got {sde.paths}")
    if sde.seed < 0:
        errors.append(f"[sde] seed must be non-negative, got {sde.seed}")
    n_galerkin = n_modes if sde.n_galerkin is None else sde.n_galerkin
    if not 1 <= n_galerkin <= n_modes:
        errors.append(f"[sde] n_galerkin must be between 1 and n_modes={n_modes}, got {n_galerkin}")

    euler_dt = sde.dt / 4 if cfg.euler.dt is None else cfg.euler.dt
    if not euler_dt > 0:
        errors.append(f"[euler] dt must be positive, got {euler_dt}")
    elif sde.T >= 0 and not _whole_steps(sde.T, euler_dt):
        errors.append(f"[euler] T={sde.T} is not a whole number of steps of dt={euler_dt}")

    diag = cfg.diagnostics
    if not diag.c_tilde:
        errors.append("[diagnostics] c_tilde must not be empty")
    for c in diag.c_tilde:
        if not c > 0:
            errors.append(f"[diagnostics] c_tilde must be positive, got {c}")
    if diag.n_test_fields < 0:
        errors.append(f"[diagnostics] n_test_fields must be non-negative, got {diag.n_test_fields}")

    if cfg.output.format not in FORMATS:
        errors.append(f"[output] format must be one of {list(FORMATS)}, got {cfg.output.format!r}")

    return dataclasses.replace(
        cfg,
        sde=dataclasses.replace(sde, n_galerkin=n_galerkin),
        euler=dataclasses.replace(cfg.euler, dt=euler_dt),
        diagnostics=dataclasses.replace(diag, c_tilde=tuple(sorted(diag.c_tilde))),
    )


def config_from_dict(data: Dict[str, Any]) -> ExperimentConfig:
    """Validate parsed TOML data.

    Raises:
        ConfigError: listing every problem found
    """
    errors: List[str] = []
    tables = {}
    for name, value in data.items():
        if name not in TABLES:
            errors.append(f"unknown table [{name}]")
            continue
        tables[name] = _read_table(name, TABLES[name], value, errors)
    # keys that failed coercion hold their defaults
    cfg = _validate(ExperimentConfig(**tables), errors)
    if errors:
        raise ConfigError(errors)
    return cfg


def loads_config(text: str, source: str = "<string>") -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"{source}: {exc}"]) from exc
    return config_from_dict(data)


def parse_config(path: Union[str, Path]) -> ExperimentConfig:
    """Read and validate a TOML experiment config.

    Args:
        path: Config file

    Returns:
        ExperimentConfig with defaults filled

    Raises:
        FileNotFoundError: the file does not exist
        ConfigError: syntax error (with line and column) or every
            validation problem found
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file {path} not found")
    return loads_config(path.read_text(), source=str(path))
