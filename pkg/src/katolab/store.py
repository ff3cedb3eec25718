"""On-disk caches and path dumps.

The Stokes basis and the Euler reference are cached as ``.npz`` files under
``$KATOLAB_CACHE`` (default ``~/.cache/katolab``). Per-path dumps go next to a
run's report, either as ``.npz`` or as CSV written with 17 significant
digits plus a JSON sidecar; both read back bit-exactly.

File naming conventions:
- Basis: basis-nx{nx}-n{n_modes}-v{version}.npz
- Euler: euler-{key}.npz, key from (u0, nx, dt, T)
- Paths: path-{point}-seed{seed}.npz or .csv (+ .json)
"""

import hashlib
import json
import logging
import os
import tempfile
import zipfile
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

from katolab.euler import EulerSolution, solve_euler
from katolab.grid import Domain, VectorGridField, build_domain
from katolab.sde import TrajectoryRecord
from katolab.spectral import BASIS_FORMAT_VERSION, SpectralBasis, VelocityField, build_basis

logger = logging.getLogger(__name__)

CACHE_ENV = "KATOLAB_CACHE"

EULER_FORMAT_VERSION = 1

# Order matters: .npz is preferred over .csv
FILE_PATTERNS = {
    "basis": ["basis-nx{nx}-n{n_modes}-v{version}.npz"],
    "euler": ["euler-{key}.npz"],
    "path": ["path-{point}-seed{seed}.npz", "path-{point}-seed{seed}.csv"],
}

PathLike = Union[str, Path]

# Errors np.load raises on a truncated or foreign cache file
UNREADABLE_ERRORS = (zipfile.BadZipFile, EOFError, KeyError, ValueError, OSError)


def cache_dir(directory: Optional[PathLike] = None) -> Path:
    """Cache directory: the argument, else $KATOLAB_CACHE, else ~/.cache/katolab."""
    if directory is not None:
        return Path(directory)
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "katolab"


def find_file(directory: PathLike, file_type: str, **keys) -> Optional[Path]:
    """Find a cached or dumped file matching the expected patterns.

    Args:
        directory: Directory to look in
        file_type: "basis", "euler" or "path"
        **keys: Pattern fields (nx, n_modes, version, key, point, seed)

    Returns:
        Path to file if found, None otherwise
    """
    directory = Path(directory)
    for pattern in FILE_PATTERNS.get(file_type, []):
        path = directory / pattern.format(**keys)
        if path.exists():
            return path
    return None


def _savez_atomic(path: Path, **arrays) -> None:
    """Write an .npz next to ``path`` and rename it into place."""
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            np.savez(handle, **arrays)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _basis_keys(nx: int, n_modes: int) -> dict:
    return {"nx": nx, "n_modes": n_modes, "version": BASIS_FORMAT_VERSION}


def save_basis(basis: SpectralBasis, directory: Optional[PathLike] = None) -> Path:
    directory = cache_dir(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / FILE_PATTERNS["basis"][0].format(**_basis_keys(basis.domain.nx, basis.n_modes))
    _savez_atomic(
        path,
        version=BASIS_FORMAT_VERSION,
        nx=basis.domain.nx,
        eigenvalues=basis.eigenvalues,
        fields=basis.fields,
        stream=basis.stream,
    )
    logger.debug("basis cached at %s", path)
    return path


def load_basis(nx: int, n_modes: int, directory: Optional[PathLike] = None) -> SpectralBasis:
    """Load a cached basis.

    Raises:
        FileNotFoundError: no cache entry for (nx, n_modes) at this format version
    """
    path = find_file(cache_dir(directory), "basis", **_basis_keys(nx, n_modes))
    if path is None:
        raise FileNotFoundError(
            f"no cached basis for nx={nx}, n_modes={n_modes} in {cache_dir(directory)}. "
            f"Expected patterns: {FILE_PATTERNS['basis']}"
        )
    with np.load(path) as data:
        if int(data["version"]) != BASIS_FORMAT_VERSION or int(data["nx"]) != nx:
            raise FileNotFoundError(f"stale basis cache entry {path}")
        return SpectralBasis(
            domain=build_domain(nx),
            eigenvalues=data["eigenvalues"].copy(),
            fields=data["fields"].copy(),
            stream=data["stream"].copy(),
        )


def load_or_build_basis(domain: Domain, n_modes: int, directory: Optional[PathLike] = None) -> SpectralBasis:
    """Cached basis if present, else solve the eigenproblem and cache it."""
    try:
        basis = load_basis(domain.nx, n_modes, directory)
    except FileNotFoundError:
        basis = None
    except UNREADABLE_ERRORS as exc:
        logger.warning("unreadable basis cache entry for nx=%d n_modes=%d, rebuilding: %s", domain.nx, n_modes, exc)
        basis = None
    if basis is None:
        basis = build_basis(domain, n_modes)
        save_basis(basis, directory)
        return basis
    logger.info("loaded cached basis nx=%d n_modes=%d", domain.nx, n_modes)
    return basis


def euler_key(u0: Union[VelocityField, VectorGridField], T: float, dt: float) -> str:
    """Cache key of an Euler solve: sha256 of (u0, grid, dt, T, format version)."""
    m = hashlib.sha256()
    m.update(f"v={EULER_FORMAT_VERSION};nx={u0.domain.nx};T={T!r};dt={dt!r};".encode())
    m.update(np.ascontiguousarray(u0.packed).tobytes())
    return m.hexdigest()[:24]


def save_euler(sol: EulerSolution, key: str, directory: Optional[PathLike] = None) -> Path:
    directory = cache_dir(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / FILE_PATTERNS["euler"][0].format(key=key)
    _savez_atomic(
        path,
        nx=sol.domain.nx,
        times=sol.times,
        stream_history=sol.stream_history,
        velocity_history=sol.velocity_history,
        initial_energy=sol.initial_energy,
        energy_history=sol.energy_history,
        gradient_history=sol.gradient_history,
        horizon_suspect=sol.horizon_suspect,
    )
    return path


def load_euler(key: str, directory: Optional[PathLike] = None) -> EulerSolution:
    path = find_file(cache_dir(directory), "euler", key=key)
    if path is None:
        raise FileNotFoundError(f"no cached Euler solution {key} in {cache_dir(directory)}")
    with np.load(path) as data:
        return EulerSolution(
            domain=build_domain(int(data["nx"])),
            times=data["times"].copy(),
            stream_history=data["stream_history"].copy(),
            velocity_history=data["velocity_history"].copy(),
            initial_energy=float(data["initial_energy"]),
            energy_history=data["energy_history"].copy(),
            gradient_history=data["gradient_history"].copy(),
            horizon_suspect=bool(data["horizon_suspect"]),
        )


def load_or_solve_euler(
    u0: Union[VelocityField, VectorGridField],
    T: float,
    dt: float,
    directory: Optional[PathLike] = None,
    progress: bool = False,
) -> EulerSolution:
    """Cached Euler solution for (u0, grid, dt, T), solving on a miss."""
    key = euler_key(u0, T, dt)
    try:
        sol = load_euler(key, directory)
    except FileNotFoundError:
        sol = None
    except UNREADABLE_ERRORS as exc:
        logger.warning("unreadable Euler cache entry %s, solving again: %s", key, exc)
        sol = None
    if sol is None:
        sol = solve_euler(u0.domain, u0, T, dt, progress=progress)
        save_euler(sol, key, directory)
        return sol
    logger.info("loaded cached Euler solution %s", key)
    return sol


def _meta(record: TrajectoryRecord) -> dict:
    return {
        "seed": record.seed,
        "nu": record.nu,
        "mu": record.mu,
        "truncated": record.truncated,
        "stop_step": record.stop_step,
        "stop_hit": record.stop_hit,
        "brownian_digest": record.brownian_digest,
    }


def save_path(record: TrajectoryRecord, directory: PathLike, point: str, fmt: str = "npz") -> Path:
    """Dump one path.

    Args:
        record: Path to dump
        directory: Target directory
        point: Sweep point label used in the file name
        fmt: "npz" or "csv"

    Returns:
        Path of the data file
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if fmt == "npz":
        path = directory / FILE_PATTERNS["path"][0].format(point=point, seed=record.seed)
        arrays = {
            "times": record.times,
            "coeff_history": record.coeff_history,
            "energy_history": record.energy_history,
            "meta": np.array(json.dumps(_meta(record))),
        }
        if record.increments is not None:
            arrays["increments"] = record.increments
        _savez_atomic(path, **arrays)
        return path
    if fmt == "csv":
        path = directory / FILE_PATTERNS["path"][1].format(point=point, seed=record.seed)
        frame = record.energy_frame()
        for k in range(record.n_galerkin):
            frame[f"c{k}"] = record.coeff_history[:, k]
        frame.to_csv(path, index=False, float_format="%.17g")
        path.with_suffix(".json").write_text(json.dumps(_meta(record), indent=2, sort_keys=True) + "\n")
        return path
    raise ValueError(f"unknown path format {fmt!r}; expected 'npz' or 'csv'")


def load_path(path: PathLike) -> TrajectoryRecord:
    """Read a path dump written by :func:`save_path`.

    CSV dumps carry no Brownian increments.
    """
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as data:
            meta = json.loads(str(data["meta"]))
            increments = data["increments"].copy() if "increments" in data.files else None
            times = data["times"].copy()
            coeffs = data["coeff_history"].copy()
            energy = data["energy_history"].copy()
    elif path.suffix == ".csv":
        meta = json.loads(path.with_suffix(".json").read_text())
        frame = pd.read_csv(path, float_precision="round_trip")
        coeff_cols = sorted((c for c in frame.columns if c.startswith("c")), key=lambda c: int(c[1:]))
        times = frame["time"].to_numpy(dtype=float)
        coeffs = frame[coeff_cols].to_numpy(dtype=float)
        energy = frame[["l2_sq", "h1_sq", "dissipation"]].to_numpy(dtype=float)
        increments = None
    else:
        raise ValueError(f"unknown path dump {path}")
    return TrajectoryRecord(
        times=times,
        coeff_history=coeffs,
        energy_history=energy,
        stop_step=meta["stop_step"],
        stop_hit=meta["stop_hit"],
        seed=meta["seed"],
        brownian_digest=meta["brownian_digest"],
        nu=meta["nu"],
        mu=meta["mu"],
        truncated=meta["truncated"],
        increments=increments,
    )
