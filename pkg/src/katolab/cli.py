"""Command line entry point.

Usage:
    katolab sweep --config run.toml [--out DIR] [--paths] [--threads N] [--seed S]
    katolab verify --out DIR

Exit codes: 0 success, 1 a sweep point (or a verification) failed, 2 invalid
configuration.
"""

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from katolab import __version__
from katolab.config import ExperimentConfig, config_from_dict, parse_config
from katolab.diagnostics import StoredPaths, SweepResult, SweepSetup, run_alpha_sweep, run_nu_sweep
from katolab.errors import ConfigError, KatolabError, ResolutionError
from katolab.euler import EulerSolution, corrector_ladder
from katolab.grid import build_domain
from katolab.noise import AssumptionAudit, NoiseModel, audit_assumptions, build_noise_model, normalize_amplitudes
from katolab.report import RunManifest, assemble_report, corrector_checks, point_key
from katolab.sde import SdeConfig
from katolab.spectral import SpectralBasis, VelocityField
from katolab.store import find_file, load_or_build_basis, load_or_solve_euler, load_path, save_path

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2

LOG_LEVELS = [logging.WARNING, logging.INFO, logging.DEBUG]

# Audited sum of k_i that amplitudes are normalised down to
AUDIT_TARGET = 0.5
DEFAULT_AUDIT_SAMPLES = 200


@dataclass(frozen=True)
class Prepared:
    """Inputs shared by every sweep of a run."""
    basis: SpectralBasis
    model: Optional[NoiseModel]
    audit: Optional[AssumptionAudit]
    u0: VelocityField
    euler: EulerSolution


def initial_state(cfg: ExperimentConfig, basis: SpectralBasis) -> VelocityField:
    coeffs = np.zeros(basis.n_modes)
    for mode, amplitude in zip(cfg.initial.modes, cfg.initial.amplitudes):
        coeffs[mode - 1] = amplitude
    return VelocityField(basis, coeffs)


def prepare_noise(
    cfg: ExperimentConfig,
    basis: SpectralBasis,
    samples: Optional[int] = None,
    progress: bool = False,
) -> Tuple[Optional[NoiseModel], Optional[AssumptionAudit]]:
    """Noise model, audited and normalised unless the audit is switched off."""
    noise = cfg.noise
    if noise.n_noise == 0:
        return None, None
    model = build_noise_model(basis, noise.kind, noise.n_noise, noise.a0, noise.decay, noise.seed)
    samples = noise.audit_samples if samples is None else samples
    if samples == 0:
        return model, None
    audit = audit_assumptions(model, samples=samples, seed=noise.seed, progress=progress)
    if audit.sum_k > AUDIT_TARGET:
        model = normalize_amplitudes(model, audit, target=AUDIT_TARGET)
        audit = audit_assumptions(model, samples=samples, seed=noise.seed, progress=progress)
    return model, audit


def prepare_euler(cfg: ExperimentConfig, u0: VelocityField, progress: bool = False) -> EulerSolution:
    try:
        return load_or_solve_euler(u0, cfg.sde.T, cfg.euler.dt, progress=progress)
    except ValueError as exc:
        if isinstance(exc, KatolabError):
            raise
        raise ConfigError([f"[initial] {exc}"]) from exc


def prepare(cfg: ExperimentConfig, progress: bool = False) -> Prepared:
    """Basis (cached), audited noise, initial state and Euler reference (cached)."""
    basis = load_or_build_basis(build_domain(cfg.domain.nx), cfg.basis.n_modes)
    model, audit = prepare_noise(cfg, basis, progress=progress)
    u0 = initial_state(cfg, basis)
    euler = prepare_euler(cfg, u0, progress=progress)
    return Prepared(basis, model, audit, u0, euler)


def sweep_setup(cfg: ExperimentConfig, run: Prepared) -> SweepSetup:
    sde = cfg.sde
    template = SdeConfig(
        nu=sde.nu[0],
        n_galerkin=sde.n_galerkin,
        dt=sde.dt,
        T=sde.T,
        M=sde.M,
        seed=sde.seed,
        truncate=sde.truncate,
        nonlinear=sde.nonlinear,
    )
    return SweepSetup(
        basis=run.basis,
        model=run.model,
        euler=run.euler,
        u0=run.u0,
        sde=template,
        c_tildes=cfg.diagnostics.c_tilde,
        n_test_fields=cfg.diagnostics.n_test_fields,
        n_paths=sde.paths,
    )


def sweep_grids(cfg: ExperimentConfig) -> Dict[str, List[Tuple[float, float]]]:
    """(nu, alpha) points per sweep name.

    The nu sweep runs at alpha = 1 when the alpha ladder holds it, else at its
    first entry. A second alpha value adds the alpha sweep.
    """
    nus, alphas = cfg.sde.nu, cfg.sde.alpha
    alpha = 1.0 if 1.0 in alphas else alphas[0]
    grids = {"nu_sweep": [(nu, alpha) for nu in nus]}
    if len(alphas) > 1:
        grids["alpha_sweep"] = [(nu, a) for a in alphas for nu in nus]
    return grids


def point_label(nu: float, alpha: float) -> str:
    return f"nu{nu!r}-alpha{alpha!r}"


def run_sweeps(
    cfg: ExperimentConfig,
    setup: SweepSetup,
    threads: int = 1,
    keep_paths: bool = False,
    progress: bool = False,
    stored: Optional[Dict[str, StoredPaths]] = None,
) -> Dict[str, SweepResult]:
    stored = stored or {}
    grids = sweep_grids(cfg)
    alpha = grids["nu_sweep"][0][1]
    sweeps = {
        "nu_sweep": run_nu_sweep(
            setup, cfg.sde.nu, alpha, threads=threads, keep_paths=keep_paths,
            progress=progress, stored=stored.get("nu_sweep"),
        )
    }
    if "alpha_sweep" in grids:
        sweeps["alpha_sweep"] = run_alpha_sweep(
            setup, cfg.sde.nu, cfg.sde.alpha, threads=threads, keep_paths=keep_paths,
            progress=progress, stored=stored.get("alpha_sweep"),
        )
    return sweeps


def run_corrector(cfg: ExperimentConfig, euler: EulerSolution):
    """Corrector ladder over the nu ladder, or None when it cannot be fitted."""
    if len(cfg.sde.nu) < 2:
        return None
    try:
        return corrector_ladder(euler, cfg.sde.nu, cfg.diagnostics.c_tilde[0])
    except ResolutionError as exc:
        logger.warning("corrector ladder skipped: %s", exc)
        return None


def build_report(cfg: ExperimentConfig, run: Prepared, sweeps: Dict[str, SweepResult]):
    return assemble_report(
        config_digest=cfg.digest(),
        basis_digest=run.basis.digest,
        sweeps=sweeps,
        euler_digest=run.euler.digest,
        corrector=run_corrector(cfg, run.euler),
        audit=run.audit,
    )


def _load_config(args) -> ExperimentConfig:
    if args.config is None:
        raise ConfigError(["--config is required for this command"])
    cfg = parse_config(args.config)
    return cfg.with_overrides(out=args.out, paths=args.paths or None, seed=args.seed)


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_audit(args) -> int:
    cfg = _load_config(args)
    basis = load_or_build_basis(build_domain(cfg.domain.nx), cfg.basis.n_modes)
    samples = cfg.noise.audit_samples or DEFAULT_AUDIT_SAMPLES
    model, audit = prepare_noise(cfg, basis, samples=samples, progress=args.progress)
    if audit is None:
        print("no noise modes configured; nothing to audit")
        return EXIT_OK
    out = _out_dir(cfg)
    audit.summary().to_csv(out / "audit.csv", float_format="%.17g")
    (out / "audit.json").write_text(_audit_json(audit, model) + "\n")
    print(audit.summary().to_string())
    print(f"sum_k = {audit.sum_k:.4g}, held-out violations = {audit.violations}")
    return EXIT_OK if audit.passed else EXIT_FAILURE


def _audit_json(audit: AssumptionAudit, model: NoiseModel) -> str:
    data = audit.to_dict()
    data["amplitudes"] = [float(a) for a in model.amplitudes]
    return json.dumps(data, sort_keys=True, indent=2)


def cmd_euler(args) -> int:
    cfg = _load_config(args)
    basis = load_or_build_basis(build_domain(cfg.domain.nx), cfg.basis.n_modes)
    sol = prepare_euler(cfg, initial_state(cfg, basis), progress=args.progress)
    out = _out_dir(cfg)
    frame = _euler_frame(sol)
    frame.to_csv(out / "euler.csv", index=False, float_format="%.17g")
    print(f"Euler reference on nx={sol.domain.nx}: {sol.n_times} times, dt={sol.dt:g}")
    print(f"relative energy defect {sol.energy_defect:.3e}, max |grad u| {sol.gradient_history.max():.4g}")
    if sol.horizon_suspect:
        print("horizon suspect: velocity gradient grew more than tenfold")
    print(f"digest {sol.digest}")
    return EXIT_OK


def _euler_frame(sol: EulerSolution):
    return pd.DataFrame({
        "time": sol.times,
        "energy": sol.energy_history,
        "max_gradient": sol.gradient_history,
    })


def cmd_corrector(args) -> int:
    cfg = _load_config(args)
    if len(cfg.sde.nu) < 2:
        raise ConfigError(["[sde] nu needs at least two values for the corrector ladder"])
    basis = load_or_build_basis(build_domain(cfg.domain.nx), cfg.basis.n_modes)
    sol = prepare_euler(cfg, initial_state(cfg, basis), progress=args.progress)
    try:
        ladder = corrector_ladder(sol, cfg.sde.nu, cfg.diagnostics.c_tilde[0])
    except ResolutionError as exc:
        raise ConfigError([str(exc)]) from exc
    out = _out_dir(cfg)
    ladder.table.to_csv(out / "corrector.csv", index=False, float_format="%.17g")
    print(ladder.table.to_string(index=False))
    for check in corrector_checks(ladder):
        print(f"{check.name}: {check.verdict.value} ({check.detail})")
    return EXIT_OK


def _seeds(cfg: ExperimentConfig, setup: SweepSetup) -> Dict[str, List[int]]:
    return {
        point_key(name, nu, alpha): setup.seeds
        for name, grid in sweep_grids(cfg).items()
        for nu, alpha in grid
    }


def _dump_paths(cfg: ExperimentConfig, out: Path, sweeps: Dict[str, SweepResult]) -> List[str]:
    written = []
    for name, sweep in sorted(sweeps.items()):
        for (nu, alpha), records in sorted(sweep.paths.items()):
            for record in records:
                path = save_path(record, out / "paths" / name, point_label(nu, alpha), cfg.output.format)
                written.append(path.relative_to(out).as_posix())
    return written


def cmd_sweep(args) -> int:
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    clock = time.perf_counter()
    cfg = _load_config(args)
    run = prepare(cfg, progress=args.progress)
    setup = sweep_setup(cfg, run)
    keep = cfg.output.paths
    sweeps = run_sweeps(cfg, setup, threads=args.threads, keep_paths=keep, progress=args.progress)
    report = build_report(cfg, run, sweeps)
    out = _out_dir(cfg)
    report.write(out)
    paths = _dump_paths(cfg, out, sweeps) if keep else []
    manifest = RunManifest(
        config_digest=cfg.digest(),
        basis_digest=run.basis.digest,
        euler_digest=run.euler.digest,
        report_digest=report.digest,
        seeds=_seeds(cfg, setup),
        version=__version__,
        config=cfg.to_dict(),
        paths=paths,
        started=started,
        wall_seconds=time.perf_counter() - clock,
    )
    manifest.write(out)

    print(report.to_frame().to_string(index=False))
    print(f"report digest {report.digest}")
    if report.failures:
        for failure in report.failures:
            print(f"point failed: nu={failure['nu']} alpha={failure['alpha']} "
                  f"seed={failure['seed']}: {failure['message']}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def _stored_paths(cfg: ExperimentConfig, setup: SweepSetup, out: Path) -> Dict[str, StoredPaths]:
    """Dumped paths per sweep; points with any missing seed are left out."""
    stored: Dict[str, StoredPaths] = {}
    for name, grid in sweep_grids(cfg).items():
        points: StoredPaths = {}
        for nu, alpha in grid:
            files = [
                find_file(out / "paths" / name, "path", point=point_label(nu, alpha), seed=seed)
                for seed in setup.seeds
            ]
            if all(f is not None for f in files):
                points[(nu, alpha)] = [load_path(f) for f in files]
        stored[name] = points
    return stored


def cmd_verify(args) -> int:
    if args.out is None:
        raise ConfigError(["verify needs --out pointing at a finished run"])
    out = Path(args.out)
    manifest = RunManifest.read(out)
    cfg = config_from_dict(manifest.config)
    if args.config is not None:
        given = parse_config(args.config).with_overrides(out=args.out, paths=args.paths or None, seed=args.seed)
        if given.digest() != manifest.config_digest:
            raise ConfigError([f"{args.config} does not match the config recorded in {out}/manifest.json"])
    run = prepare(cfg, progress=args.progress)
    setup = sweep_setup(cfg, run)
    stored = _stored_paths(cfg, setup, out)
    n_stored = sum(len(points) for points in stored.values())
    logger.info("verifying from %d stored points; the rest are re-simulated", n_stored)
    sweeps = run_sweeps(cfg, setup, threads=args.threads, progress=args.progress, stored=stored)
    report = build_report(cfg, run, sweeps)
    if report.digest != manifest.report_digest:
        print(f"digest mismatch: manifest {manifest.report_digest}, recomputed {report.digest}", file=sys.stderr)
        return EXIT_FAILURE
    on_disk = out / "report.json"
    if on_disk.exists() and on_disk.read_text() != report.to_json() + "\n":
        print(f"{on_disk} differs from the recomputed report", file=sys.stderr)
        return EXIT_FAILURE
    print(f"digest match {report.digest}")
    return EXIT_OK


COMMANDS = {
    "audit": (cmd_audit, "fit and check the noise assumptions"),
    "euler": (cmd_euler, "solve the Euler reference only"),
    "corrector": (cmd_corrector, "corrector estimates along the nu ladder"),
    "sweep": (cmd_sweep, "full pipeline: sweeps, report and manifest"),
    "verify": (cmd_verify, "re-derive a report from its manifest and stored paths"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="katolab",
        description="Stochastic Navier-Stokes viscosity sweeps against the Kato criterion",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, default=None, help="TOML experiment config")
        p.add_argument("--out", type=str, default=None, help="output directory (overrides [output] directory)")
        p.add_argument("--paths", action="store_true", help="dump every path (overrides [output] paths)")
        p.add_argument("--threads", type=int, default=1, help="worker threads over sweep points")
        p.add_argument("--seed", type=int, default=None, help="base seed (overrides [sde] seed)")
        p.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")
        p.add_argument("--no-progress", dest="progress", action="store_false", help="disable progress bars")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=LOG_LEVELS[min(args.verbose, len(LOG_LEVELS) - 1)],
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    handler, _ = COMMANDS[args.command]
    try:
        return handler(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"configuration error:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KatolabError as exc:
        logger.error("%s failed: %s", args.command, exc)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
