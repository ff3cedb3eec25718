"""Kato-criterion quantities over SDE ensembles and viscosity sweeps.

For each sweep point (nu, alpha) an ensemble of paths with seeds
``base_seed + r`` is simulated with mu = nu^alpha and compared with the Euler
reference:

- item 1: E sup_t ||u_t - ubar_t||^2
- item 2: max_t |E <u_t - ubar_t, phi>| for each test field phi
- item 3: nu E int ||grad u||^2 over the domain
- item 4: nu E int ||grad u||^2 over the strip of width c_tilde * nu

Items 3 and 4 share one per-time integrand and differ only in the quadrature
weights, so item 4 never exceeds item 3 and grows with c_tilde, path by path.
"""

import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats
from tqdm import tqdm

from katolab.errors import ConfigError, IntegrationError, ResolutionError
from katolab.euler import EulerSolution, build_corrector
from katolab.grid import BoundaryStrip, _check_same_grid, boundary_strip, gradient_energy
from katolab.noise import NoiseModel
from katolab.sde import SdeConfig, TrajectoryRecord, simulate
from katolab.spectral import SpectralBasis, VelocityField

logger = logging.getLogger(__name__)

ALPHA_RANGE = (0.5, 2.0)
MIN_SLOPE_POINTS = 4

# Slack, in standard errors, for the weak-vs-strong ordering
WEAK_STRONG_SLACK = 3.0

StoredPaths = Dict[Tuple[float, float], List[TrajectoryRecord]]


class Estimate(NamedTuple):
    mean: float
    stderr: float


class FieldPanel(NamedTuple):
    """Named unit-norm test fields, packed one per row."""
    names: List[str]
    fields: np.ndarray


def field_panel(
    basis: SpectralBasis,
    n_fields: int = 8,
    euler: Optional[EulerSolution] = None,
    nu: Optional[float] = None,
    c_tilde: float = 1.0,
) -> FieldPanel:
    """Leading eigenfields plus, when resolvable, the normalised corrector at t = 0.

    Args:
        basis: Basis supplying the eigenfields
        n_fields: Number of eigenfields
        euler: Euler solution for the boundary-layer field
        nu: Viscosity of the corrector
        c_tilde: Strip constant of the corrector

    Returns:
        FieldPanel
    """
    n_fields = min(n_fields, basis.n_modes)
    names = [f"a{k + 1}" for k in range(n_fields)]
    rows = [basis.fields[k] for k in range(n_fields)]
    if euler is not None and nu is not None:
        try:
            v = build_corrector(euler, nu, c_tilde).v_history[0]
        except ResolutionError as exc:
            logger.warning("boundary-layer test field skipped: %s", exc)
        else:
            norm = np.sqrt(basis.domain.inner(v, v))
            if norm > 0:
                names.append("corrector")
                rows.append(v / norm)
            else:
                logger.warning("boundary-layer test field skipped: corrector vanishes at t=0")
    return FieldPanel(names, np.array(rows))


def _trapezoid(values: np.ndarray, times: np.ndarray) -> float:
    if len(times) < 2:
        return 0.0
    return float(np.sum(0.5 * np.diff(times) * (values[1:] + values[:-1])))


@dataclass(frozen=True, eq=False)
class PathQuantities:
    """Per-path ingredients of the criterion quantities.

    Attributes:
        seed: Path seed
        times: SDE times
        item1: sup_t ||u_t - ubar_t||^2
        item3: nu int ||grad u||^2 over the domain
        item4: nu int ||grad u||^2 over each strip, keyed by c_tilde
        pairings: <u_t - ubar_t, phi> per time and test field
        sup_energy: sup_t ||u_t||^2
        dissipation: int ||u||_1^2
        terminal_energy: ||u_T||^2
        stopped: The stopping time was reached before T
    """
    seed: int
    times: np.ndarray
    item1: float
    item3: float
    item4: Dict[float, float]
    pairings: np.ndarray
    sup_energy: float
    dissipation: float
    terminal_energy: float
    stopped: bool

    @property
    def dominated(self) -> bool:
        return all(v <= self.item3 for v in self.item4.values())

    @property
    def c_monotone(self) -> bool:
        vals = [self.item4[c] for c in sorted(self.item4)]
        return all(a <= b for a, b in zip(vals, vals[1:]))

    @property
    def cauchy_schwarz(self) -> bool:
        """sup_t <u - ubar, phi>^2 <= sup_t ||u - ubar||^2 for unit phi."""
        if self.pairings.size == 0:
            return True
        return float(np.max(self.pairings ** 2)) <= self.item1 * (1.0 + 1e-10) + 1e-300


def per_path_quantities(
    traj: TrajectoryRecord,
    euler: EulerSolution,
    basis: SpectralBasis,
    strips: Dict[float, BoundaryStrip],
    panel: FieldPanel,
) -> PathQuantities:
    """Reduce one path against the Euler reference.

    The Euler velocity is interpolated linearly to the path times.

    Args:
        traj: SDE path
        euler: Euler solution covering the path horizon
        basis: Basis of the path coefficients
        strips: Strips keyed by c_tilde
        panel: Test fields

    Returns:
        PathQuantities
    """
    domain = basis.domain
    _check_same_grid(domain, euler.domain)
    for strip in strips.values():
        _check_same_grid(domain, strip.domain)
    nu = traj.nu
    u = basis.reconstruct(traj.coeff_history)
    diff = u - euler.interpolate(traj.times)
    gu, gv = domain.unpack(u)
    full = gradient_energy(domain, gu, gv)
    energy = traj.energy_history
    return PathQuantities(
        seed=traj.seed,
        times=traj.times,
        item1=float(np.max(domain.inner(diff, diff))),
        item3=nu * _trapezoid(full, traj.times),
        item4={
            c: nu * _trapezoid(gradient_energy(domain, gu, gv, strip=strip), traj.times)
            for c, strip in strips.items()
        },
        pairings=domain.h ** 2 * (diff @ panel.fields.T) if len(panel.names) else np.zeros((len(traj.times), 0)),
        sup_energy=float(np.max(energy[:, 0])),
        dissipation=float(energy[-1, 2]),
        terminal_energy=float(energy[-1, 0]),
        stopped=traj.stop_step is not None,
    )


Selector = Union[str, Callable[[PathQuantities], float]]


def ensemble_estimate(paths: Sequence, selector: Optional[Selector] = None) -> Estimate:
    """Sample mean and standard error over paths.

    Values are accumulated in ascending seed order, so the result does not
    depend on the order paths finished in.

    Args:
        paths: PathQuantities (with ``selector``) or plain numbers
        selector: Attribute name or callable picking one value per path

    Returns:
        Estimate(mean, stderr) with stderr = std(ddof=1) / sqrt(n)

    Raises:
        ValueError: fewer than two paths
    """
    if len(paths) == 0:
        raise ValueError("empty ensemble")
    if len(paths) < 2:
        raise ValueError("ensemble estimate needs at least two paths")
    if selector is not None:
        pick = (lambda p: getattr(p, selector)) if isinstance(selector, str) else selector
        paths = sorted(paths, key=lambda p: p.seed)
        values = np.array([pick(p) for p in paths], dtype=float)
    else:
        values = np.asarray(paths, dtype=float)
    shift = values - values[0]
    mean_shift = float(np.mean(shift))
    var = float(np.sum((shift - mean_shift) ** 2) / (len(values) - 1))
    return Estimate(float(values[0] + mean_shift), float(np.sqrt(var / len(values))))


@dataclass(frozen=True)
class SlopeFit:
    """Least-squares slope of log(y) against log(x) with a 95% interval."""
    slope: float
    intercept: float
    lo: float
    hi: float
    n_points: int

    def contains(self, value: float) -> bool:
        return self.lo <= value <= self.hi

    def to_dict(self) -> dict:
        return {
            "slope": self.slope, "intercept": self.intercept,
            "lo": self.lo, "hi": self.hi, "n_points": self.n_points,
        }


def fit_slope(x: Sequence[float], y: Sequence[float], confidence: float = 0.95) -> Optional[SlopeFit]:
    """Log-log slope, or None with fewer than four positive points."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = (x > 0) & (y > 0) & np.isfinite(y)
    if ok.sum() < MIN_SLOPE_POINTS:
        return None
    fit = stats.linregress(np.log(x[ok]), np.log(y[ok]))
    half = stats.t.ppf(0.5 + confidence / 2, ok.sum() - 2) * fit.stderr
    return SlopeFit(float(fit.slope), float(fit.intercept), float(fit.slope - half), float(fit.slope + half), int(ok.sum()))


def decreasing_at_confidence(estimates: Sequence[Estimate], confidence: float = 0.95) -> bool:
    """Every consecutive pair decreases by more than its one-sided z margin."""
    z = stats.norm.ppf(confidence)
    for a, b in zip(estimates, estimates[1:]):
        margin = z * np.hypot(a.stderr, b.stderr)
        if not a.mean - b.mean > margin:
            return False
    return True


@dataclass(frozen=True, eq=False)
class CriterionQuantities:
    """Ensemble statistics of one sweep point.

    Attributes:
        nu: Viscosity
        alpha: Noise scaling exponent (mu = nu^alpha)
        mu: Noise scale
        n_paths: Ensemble size
        seed_lo: First seed
        seed_hi: Last seed
        item1: E sup ||u - ubar||^2
        item2: max_t |E <u_t - ubar_t, phi>| per test field
        item3: nu E int ||grad u||^2
        item4: nu E int ||grad u||^2 on the strip, per c_tilde
        scaled: nu^(2 alpha - 1) * item4, per c_tilde
        noise_bound: (1 + mu^2 / nu^2) * item4, per c_tilde
        kappa: E sup ||u||^2 - ||u0||^2
        dissipation: nu E int ||u||_1^2
        terminal_energy: E ||u_T||^2
        stop_probability: Fraction of paths that reached the stopping time
        chebyshev_bound: (E sup ||u||^2 + E int ||u||_1^2) / (M + ||u0||^2)
        dominated: item4 <= item3 on every path
        c_monotone: item4 non-decreasing in c_tilde on every path
        weak_strong: item2^2 <= item1 + 3 SE for every test field
        clamped: c_tilde values whose strip hit the h/2 clamp
    """
    nu: float
    alpha: float
    mu: float
    n_paths: int
    seed_lo: int
    seed_hi: int
    item1: Estimate
    item2: Dict[str, Estimate]
    item3: Estimate
    item4: Dict[float, Estimate]
    scaled: Dict[float, Estimate]
    noise_bound: Dict[float, Estimate]
    kappa: Estimate
    dissipation: Estimate
    terminal_energy: Estimate
    stop_probability: float
    chebyshev_bound: float
    dominated: bool
    c_monotone: bool
    weak_strong: bool
    clamped: Tuple[float, ...] = ()

    @property
    def critical(self) -> bool:
        """alpha = 1/2, where the scaled criterion alone is insufficient."""
        return self.alpha == 0.5

    @property
    def criterion_exponent(self) -> float:
        return 2.0 * (self.alpha - 0.5)

    @property
    def noise_factor(self) -> float:
        return 1.0 + self.mu ** 2 / self.nu ** 2

    @property
    def noise_ratio(self) -> float:
        """mu nu^(-1/2)."""
        return self.mu / np.sqrt(self.nu)

    def rows(self) -> List[dict]:
        """Long-format rows (one per c_tilde and quantity)."""
        base = {"nu": self.nu, "alpha": self.alpha, "n_paths": self.n_paths,
                "seed_lo": self.seed_lo, "seed_hi": self.seed_hi}
        out = []

        def add(quantity, est, c_tilde=None):
            out.append({**base, "c_tilde": c_tilde, "quantity": quantity,
                        "mean": est.mean, "stderr": est.stderr})

        add("item1", self.item1)
        for name, est in self.item2.items():
            add(f"item2[{name}]", est)
        add("item3", self.item3)
        for c in sorted(self.item4):
            add("item4", self.item4[c], c)
            add("scaled_criterion", self.scaled[c], c)
            add("noise_bound", self.noise_bound[c], c)
        add("kappa", self.kappa)
        add("dissipation", self.dissipation)
        add("terminal_energy", self.terminal_energy)
        add("stop_probability", Estimate(self.stop_probability, 0.0))
        add("chebyshev_bound", Estimate(self.chebyshev_bound, 0.0))
        return out

    def to_dict(self) -> dict:
        def est(e):
            return {"mean": e.mean, "stderr": e.stderr}
        return {
            "nu": self.nu, "alpha": self.alpha, "mu": self.mu,
            "n_paths": self.n_paths, "seed_lo": self.seed_lo, "seed_hi": self.seed_hi,
            "item1": est(self.item1),
            "item2": {k: est(v) for k, v in self.item2.items()},
            "item3": est(self.item3),
            "item4": {repr(c): est(v) for c, v in sorted(self.item4.items())},
            "scaled_criterion": {repr(c): est(v) for c, v in sorted(self.scaled.items())},
            "criterion_exponent": self.criterion_exponent,
            "noise_factor": self.noise_factor,
            "noise_bound": {repr(c): est(v) for c, v in sorted(self.noise_bound.items())},
            "noise_ratio": self.noise_ratio,
            "kappa": est(self.kappa),
            "dissipation": est(self.dissipation),
            "terminal_energy": est(self.terminal_energy),
            "stop_probability": self.stop_probability,
            "chebyshev_bound": self.chebyshev_bound,
            "critical": self.critical,
            "dominated": self.dominated,
            "c_monotone": self.c_monotone,
            "weak_strong": self.weak_strong,
            "clamped": list(self.clamped),
        }


def summarize_point(
    paths: Sequence[PathQuantities],
    nu: float,
    alpha: float,
    mu: float,
    e0: float,
    M: float,
    names: Sequence[str],
    clamped: Tuple[float, ...] = (),
) -> CriterionQuantities:
    """Aggregate per-path quantities of one sweep point.

    Args:
        paths: At least two PathQuantities
        nu: Viscosity
        alpha: Scaling exponent
        mu: Noise scale
        e0: ||u0||^2
        M: Stopping threshold
        names: Test field names, in panel order
        clamped: c_tilde values with clamped strips

    Returns:
        CriterionQuantities
    """
    paths = sorted(paths, key=lambda p: p.seed)
    item1 = ensemble_estimate(paths, "item1")

    item2 = {}
    for j, name in enumerate(names):
        series = np.array([p.pairings[:, j] for p in paths])
        means = series.mean(axis=0)
        k = int(np.argmax(np.abs(means)))
        est = ensemble_estimate(series[:, k])
        item2[name] = Estimate(abs(est.mean), est.stderr)

    c_tildes = sorted(paths[0].item4)
    item4 = {c: ensemble_estimate(paths, lambda p, c=c: p.item4[c]) for c in c_tildes}
    scale = nu ** (2.0 * alpha - 1.0)
    factor = 1.0 + mu ** 2 / nu ** 2
    sup_energy = ensemble_estimate(paths, "sup_energy")
    dissipation = ensemble_estimate(paths, "dissipation")

    weak_strong = all(
        est.mean ** 2 <= item1.mean + WEAK_STRONG_SLACK * item1.stderr for est in item2.values()
    )
    return CriterionQuantities(
        nu=nu,
        alpha=alpha,
        mu=mu,
        n_paths=len(paths),
        seed_lo=paths[0].seed,
        seed_hi=paths[-1].seed,
        item1=item1,
        item2=item2,
        item3=ensemble_estimate(paths, "item3"),
        item4=item4,
        scaled={c: Estimate(scale * e.mean, scale * e.stderr) for c, e in item4.items()},
        noise_bound={c: Estimate(factor * e.mean, factor * e.stderr) for c, e in item4.items()},
        kappa=Estimate(sup_energy.mean - e0, sup_energy.stderr),
        dissipation=Estimate(nu * dissipation.mean, nu * dissipation.stderr),
        terminal_energy=ensemble_estimate(paths, "terminal_energy"),
        stop_probability=float(np.mean([p.stopped for p in paths])),
        chebyshev_bound=(sup_energy.mean + dissipation.mean) / (M + e0),
        dominated=all(p.dominated for p in paths),
        c_monotone=all(p.c_monotone for p in paths),
        weak_strong=weak_strong,
        clamped=tuple(clamped),
    )


@dataclass(frozen=True, eq=False)
class SweepSetup:
    """Everything shared by the points of a sweep.

    Attributes:
        basis: Stokes basis
        model: Noise model at unit scale (None for no noise)
        euler: Euler reference, covering the SDE horizon
        u0: Initial state
        sde: Template run parameters; nu, mu and seed are set per path
        c_tildes: Strip constants
        n_test_fields: Eigenfields in the test panel
        n_paths: Paths per point
    """
    basis: SpectralBasis
    model: Optional[NoiseModel]
    euler: EulerSolution
    u0: VelocityField
    sde: SdeConfig
    c_tildes: Tuple[float, ...] = (1.0,)
    n_test_fields: int = 8
    n_paths: int = 64

    @property
    def base_seed(self) -> int:
        return self.sde.seed

    @property
    def seeds(self) -> List[int]:
        return [self.base_seed + r for r in range(self.n_paths)]

    @property
    def initial_energy(self) -> float:
        n = self.sde.n_galerkin or self.basis.n_modes
        c = self.u0.coeffs[:n]
        return float(c @ c)


@dataclass
class PointResult:
    """Outcome of one (nu, alpha) point."""
    nu: float
    alpha: float
    quantities: Optional[CriterionQuantities] = None
    paths: List[TrajectoryRecord] = field(default_factory=list)
    failure: Optional[dict] = None


def point_config(setup: SweepSetup, nu: float, alpha: float, seed: int) -> SdeConfig:
    return replace(setup.sde, nu=nu, mu=nu ** alpha, seed=seed)


def quantities_from_paths(
    setup: SweepSetup,
    nu: float,
    alpha: float,
    records: Sequence[TrajectoryRecord],
) -> CriterionQuantities:
    """Criterion quantities of one point from its stored paths."""
    domain = setup.basis.domain
    strips = {c: boundary_strip(domain, c * nu) for c in setup.c_tildes}
    panel = field_panel(setup.basis, setup.n_test_fields, setup.euler, nu, setup.c_tildes[0])
    paths = [per_path_quantities(r, setup.euler, setup.basis, strips, panel) for r in records]
    return summarize_point(
        paths, nu, alpha, nu ** alpha, setup.initial_energy, setup.sde.M, panel.names,
        clamped=tuple(c for c, s in strips.items() if s.clamped),
    )


def run_point(
    setup: SweepSetup,
    nu: float,
    alpha: float,
    keep_paths: bool = False,
    stored: Optional[Sequence[TrajectoryRecord]] = None,
) -> PointResult:
    """Simulate one ensemble and reduce it; failures are captured, not raised.

    ``stored`` replaces the simulation by previously dumped paths.
    """
    result = PointResult(nu, alpha)
    if stored is not None:
        records = list(stored)
        result.quantities = quantities_from_paths(setup, nu, alpha, records)
        if keep_paths:
            result.paths = records
        return result
    records = []
    for seed in setup.seeds:
        cfg = point_config(setup, nu, alpha, seed)
        try:
            records.append(simulate(cfg, setup.model, setup.u0, keep_increments=keep_paths))
        except (IntegrationError, ConfigError, FloatingPointError) as exc:
            logger.warning("sweep point nu=%g alpha=%g failed on seed %d: %s", nu, alpha, seed, exc)
            result.failure = {
                "nu": nu, "alpha": alpha, "seed": seed,
                "step": getattr(exc, "step", None),
                "error": type(exc).__name__, "message": str(exc),
            }
            return result
    result.quantities = quantities_from_paths(setup, nu, alpha, records)
    if keep_paths:
        result.paths = records
    logger.info("sweep point nu=%g alpha=%g done (%d paths)", nu, alpha, len(records))
    return result


@dataclass(frozen=True, eq=False)
class SweepResult:
    """Points of one sweep with slopes and trend checks.

    Attributes:
        axis: "nu_ladder" or "alpha_ladder"
        points: Successful points in ladder order
        failures: Failure records of points that did not complete
        slopes: Log-log slope fits keyed by quantity
        trends: Statistical trend checks keyed by name
        paths: Stored paths keyed by (nu, alpha), when kept
    """
    axis: str
    points: List[CriterionQuantities]
    failures: List[dict]
    slopes: Dict[str, Optional[SlopeFit]]
    trends: Dict[str, Optional[bool]]
    paths: Dict[Tuple[float, float], List[TrajectoryRecord]] = field(default_factory=dict, repr=False)

    def frame(self) -> pd.DataFrame:
        """Long format: nu, alpha, c_tilde, quantity, mean, stderr, n_paths, seed_lo, seed_hi."""
        rows = [row for point in self.points for row in point.rows()]
        columns = ["nu", "alpha", "c_tilde", "quantity", "mean", "stderr", "n_paths", "seed_lo", "seed_hi"]
        return pd.DataFrame(rows, columns=columns)

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "points": [p.to_dict() for p in self.points],
            "failures": list(self.failures),
            "slopes": {k: (None if v is None else v.to_dict()) for k, v in sorted(self.slopes.items())},
            "trends": dict(sorted(self.trends.items())),
        }


def _check_ladder(nus: Sequence[float]) -> None:
    errors = []
    if len(nus) == 0:
        errors.append("nu ladder is empty")
    for a, b in zip(nus, nus[1:]):
        if not b < a:
            errors.append(f"nu ladder must be strictly decreasing: {a} then {b}")
    for nu in nus:
        if not 0 < nu < 1:
            errors.append(f"nu must satisfy 0 < nu < 1, got {nu}")
    if errors:
        raise ConfigError(errors)


def _check_alphas(alphas: Sequence[float]) -> None:
    lo, hi = ALPHA_RANGE
    errors = [f"alpha must lie in [{lo}, {hi}], got {a}" for a in alphas if not lo <= a <= hi]
    if not alphas:
        errors.append("alpha ladder is empty")
    if errors:
        raise ConfigError(errors)


def _run_points(
    setup: SweepSetup,
    grid: List[Tuple[float, float]],
    threads: int,
    keep_paths: bool,
    progress: bool,
    stored: Optional[StoredPaths] = None,
) -> List[PointResult]:
    stored = stored or {}
    results: Dict[int, PointResult] = {}
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        futures = {
            pool.submit(run_point, setup, nu, a, keep_paths, stored.get((nu, a))): i
            for i, (nu, a) in enumerate(grid)
        }
        done = as_completed(futures)
        if progress:
            done = tqdm(done, total=len(futures), desc="sweep points")
        for fut in done:
            results[futures[fut]] = fut.result()
    return [results[i] for i in range(len(grid))]


def _slope_fits(points: List[CriterionQuantities], prefix: str = "") -> Dict[str, Optional[SlopeFit]]:
    nus = [p.nu for p in points]
    fits = {
        f"{prefix}item1": fit_slope(nus, [p.item1.mean for p in points]),
        f"{prefix}item3": fit_slope(nus, [p.item3.mean for p in points]),
    }
    if points:
        for c in sorted(points[0].item4):
            fits[f"{prefix}item4[c_tilde={c:g}]"] = fit_slope(nus, [p.item4[c].mean for p in points])
            fits[f"{prefix}scaled[c_tilde={c:g}]"] = fit_slope(nus, [p.scaled[c].mean for p in points])
    return fits


def _trend(estimates: List[Estimate]) -> Optional[bool]:
    return decreasing_at_confidence(estimates) if len(estimates) >= 2 else None


def _collect(axis, results, slopes, trends) -> SweepResult:
    return SweepResult(
        axis=axis,
        points=[r.quantities for r in results if r.quantities is not None],
        failures=[r.failure for r in results if r.failure is not None],
        slopes=slopes,
        trends=trends,
        paths={(r.nu, r.alpha): r.paths for r in results if r.paths},
    )


def run_nu_sweep(
    setup: SweepSetup,
    nus: Sequence[float],
    alpha: float = 1.0,
    threads: int = 1,
    keep_paths: bool = False,
    progress: bool = True,
    stored: Optional[StoredPaths] = None,
) -> SweepResult:
    """Criterion quantities along a decreasing viscosity ladder.

    Args:
        setup: Shared sweep inputs
        nus: Strictly decreasing viscosities
        alpha: Noise scaling exponent (mu = nu^alpha)
        threads: Worker threads over points
        keep_paths: Keep every path for dumping
        progress: Show a progress bar over points
        stored: Dumped paths keyed by (nu, alpha); those points are
            reduced from the dump instead of simulated

    Returns:
        SweepResult with slopes of items 1, 3 and 4 against nu and the
        trend checks ``item3_decreasing``, ``item4_decreasing`` and
        ``item1_follows_item4``
    """
    _check_ladder(list(nus))
    _check_alphas([alpha])
    results = _run_points(setup, [(nu, alpha) for nu in nus], threads, keep_paths, progress, stored)
    points = [r.quantities for r in results if r.quantities is not None]
    trends = {
        "item3_decreasing": _trend([p.item3 for p in points]),
        "item1_decreasing": _trend([p.item1 for p in points]),
    }
    for c in setup.c_tildes:
        trends[f"item4_decreasing[c_tilde={c:g}]"] = _trend([p.item4[c] for p in points])
    first = setup.c_tildes[0]
    if trends[f"item4_decreasing[c_tilde={first:g}]"]:
        trends["item1_follows_item4"] = trends["item1_decreasing"]
    else:
        trends["item1_follows_item4"] = None
    return _collect("nu_ladder", results, _slope_fits(points), trends)


def run_alpha_sweep(
    setup: SweepSetup,
    nus: Sequence[float],
    alphas: Sequence[float],
    threads: int = 1,
    keep_paths: bool = False,
    progress: bool = True,
    stored: Optional[StoredPaths] = None,
) -> SweepResult:
    """Criterion quantities over (nu, alpha) with mu = nu^alpha.

    alpha = 1/2 is accepted and flagged critical on its points.

    Returns:
        SweepResult with per-alpha slopes and trend checks
        ``scaled_decreasing[alpha=...]`` and ``item1_decreasing[alpha=...]``
    """
    _check_ladder(list(nus))
    _check_alphas(list(alphas))
    grid = [(nu, a) for a in alphas for nu in nus]
    results = _run_points(setup, grid, threads, keep_paths, progress, stored)
    slopes, trends = {}, {}
    first = setup.c_tildes[0]
    for a in alphas:
        points = [r.quantities for r in results if r.alpha == a and r.quantities is not None]
        slopes.update(_slope_fits(points, prefix=f"alpha={a:g}:"))
        trends[f"scaled_decreasing[alpha={a:g}]"] = _trend([p.scaled[first] for p in points])
        trends[f"item1_decreasing[alpha={a:g}]"] = _trend([p.item1 for p in points])
    return _collect("alpha_ladder", results, slopes, trends)
