"""Diagnostics report, CSV tables and run manifest.

The report JSON is canonical (sorted keys, NaN written as null) so that its
sha256 digest identifies the scientific output. Timing and host metadata go
to the manifest only.
"""

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from katolab.diagnostics import SweepResult
from katolab.euler import CorrectorLadder
from katolab.noise import AssumptionAudit

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1"

CSV_COLUMNS = ["nu", "alpha", "c_tilde", "quantity", "mean", "stderr", "n_paths", "seed_lo", "seed_hi"]

# (target slope, tolerance) of the corrector estimates against nu
CORRECTOR_SLOPES = {
    "sup_v": (0.5, 0.1),
    "sup_dt_v": (0.5, 0.15),
    "sup_w12": (-0.5, 0.1),
}


class Verdict(Enum):
    PASS = "PASS"
    FAIL = "FAIL"
    OBSERVED = "OBSERVED"
    NOT_OBSERVED = "NOT_OBSERVED"
    SKIPPED = "SKIPPED"


@dataclass(frozen=True)
class Check:
    name: str
    verdict: Verdict
    detail: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "verdict": self.verdict.value, "detail": self.detail}


def _clean(obj):
    """JSON-safe copy: NaN/inf become None, numpy scalars become Python ones."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


@dataclass(frozen=True, eq=False)
class DiagnosticsReport:
    """Scientific output of a run.

    Attributes:
        config_digest: sha256 of the canonical config
        basis_digest: Digest of the Stokes basis
        euler_digest: Digest of the Euler solution
        sweeps: Sweep results keyed by name
        checks: Verdicts against the acceptance thresholds
        corrector: Corrector ladder, if run
        audit: Assumption audit, if run
    """
    config_digest: str
    basis_digest: str
    euler_digest: Optional[str]
    sweeps: Dict[str, SweepResult]
    checks: List[Check]
    corrector: Optional[CorrectorLadder] = None
    audit: Optional[AssumptionAudit] = None

    @property
    def failures(self) -> List[dict]:
        return [f for s in self.sweeps.values() for f in s.failures]

    @property
    def passed(self) -> bool:
        return not self.failures and all(c.verdict != Verdict.FAIL for c in self.checks)

    def to_dict(self) -> dict:
        out = {
            "schema": SCHEMA_VERSION,
            "config_digest": self.config_digest,
            "basis_digest": self.basis_digest,
            "sweeps": {name: s.to_dict() for name, s in sorted(self.sweeps.items())},
            "checks": [c.to_dict() for c in self.checks],
        }
        if self.euler_digest is not None:
            out["euler_digest"] = self.euler_digest
        if self.corrector is not None:
            out["corrector"] = {
                "table": self.corrector.table.to_dict(orient="records"),
                "slopes": dict(self.corrector.slopes),
            }
        if self.audit is not None:
            out["audit"] = self.audit.to_dict()
        return _clean(out)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def to_frame(self) -> pd.DataFrame:
        """The verdict table."""
        return pd.DataFrame([c.to_dict() for c in self.checks], columns=["name", "verdict", "detail"])

    def write(self, directory: Path) -> List[Path]:
        """Write report.json and one CSV per sweep; returns the paths written."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        path = directory / "report.json"
        path.write_text(self.to_json() + "\n")
        written.append(path)
        for name, sweep in sorted(self.sweeps.items()):
            csv = directory / f"{name}.csv"
            sweep.frame().to_csv(csv, index=False, float_format="%.17g", columns=CSV_COLUMNS)
            written.append(csv)
        logger.info("report written to %s (digest %s)", directory, self.digest[:12])
        return written


def _sweep_checks(name: str, sweep: SweepResult) -> List[Check]:
    checks = []
    points = sweep.points
    if not points:
        return [Check(f"{name}:points", Verdict.FAIL, "no sweep point completed")]

    def exact(label, flags, detail):
        bad = [p.nu for p, ok in zip(points, flags) if not ok]
        verdict = Verdict.PASS if not bad else Verdict.FAIL
        checks.append(Check(f"{name}:{label}", verdict, detail if not bad else f"fails at nu={bad}"))

    exact("item4_le_item3", [p.dominated for p in points], "strip dissipation dominated on every path")
    exact("item4_monotone_c_tilde", [p.c_monotone for p in points], "non-decreasing in c_tilde on every path")
    exact("weak_le_strong", [p.weak_strong for p in points], "item2^2 <= item1 + 3 SE for every test field")

    for trend, value in sorted(sweep.trends.items()):
        if value is None:
            checks.append(Check(f"{name}:{trend}", Verdict.SKIPPED, "not enough points or no premise"))
        else:
            checks.append(Check(
                f"{name}:{trend}",
                Verdict.OBSERVED if value else Verdict.NOT_OBSERVED,
                "95% one-sided test along the ladder",
            ))
    critical = sorted({p.nu for p in points if p.critical})
    if critical:
        checks.append(Check(
            f"{name}:critical_alpha",
            Verdict.SKIPPED,
            "alpha = 1/2: the scaled criterion alone is insufficient, stronger conditions needed",
        ))
    clamped = sorted({p.nu for p in points if p.clamped})
    if clamped:
        checks.append(Check(f"{name}:strip_resolution", Verdict.SKIPPED, f"strip clamped to h/2 at nu={clamped}"))
    if sweep.failures:
        checks.append(Check(f"{name}:point_failures", Verdict.FAIL, f"{len(sweep.failures)} point(s) failed"))
    return checks


def corrector_checks(ladder: CorrectorLadder) -> List[Check]:
    checks = []
    for col, (target, tol) in CORRECTOR_SLOPES.items():
        slope = ladder.slopes.get(col, float("nan"))
        if not math.isfinite(slope):
            checks.append(Check(f"corrector:{col}", Verdict.SKIPPED, "slope not available"))
            continue
        ok = abs(slope - target) <= tol
        checks.append(Check(
            f"corrector:{col}",
            Verdict.PASS if ok else Verdict.FAIL,
            f"slope {slope:.3f}, expected {target} +/- {tol}",
        ))
    return checks


def _audit_checks(audit: AssumptionAudit) -> List[Check]:
    return [
        Check("audit:sum_k", Verdict.PASS if audit.sum_k <= 1.0 else Verdict.FAIL, f"sum_k = {audit.sum_k:.4g}"),
        Check("audit:held_out", Verdict.PASS if audit.violations == 0 else Verdict.FAIL,
              f"{audit.violations} held-out violations"),
    ]


def assemble_report(
    config_digest: str,
    basis_digest: str,
    sweeps: Dict[str, SweepResult],
    euler_digest: Optional[str] = None,
    corrector: Optional[CorrectorLadder] = None,
    audit: Optional[AssumptionAudit] = None,
) -> DiagnosticsReport:
    """Collect sweep results and verdicts into one report.

    Args:
        config_digest: Digest of the validated config
        basis_digest: Digest of the basis
        sweeps: Completed sweeps keyed by name (at least one)
        euler_digest: Digest of the Euler reference
        corrector: Corrector ladder
        audit: Noise assumption audit

    Returns:
        DiagnosticsReport
    """
    if not sweeps:
        raise ValueError("a report needs at least one sweep")
    checks: List[Check] = []
    for name, sweep in sorted(sweeps.items()):
        checks.extend(_sweep_checks(name, sweep))
    if corrector is not None:
        checks.extend(corrector_checks(corrector))
    if audit is not None:
        checks.extend(_audit_checks(audit))
    return DiagnosticsReport(
        config_digest=config_digest,
        basis_digest=basis_digest,
        euler_digest=euler_digest,
        sweeps=dict(sweeps),
        checks=checks,
        corrector=corrector,
        audit=audit,
    )


@dataclass
class RunManifest:
    """What produced a report.

    Attributes:
        config_digest: sha256 of the canonical config
        basis_digest: Digest of the basis cache entry
        euler_digest: Digest of the Euler cache entry
        report_digest: sha256 of report.json
        seeds: Seed list per sweep point, keyed "sweep:nu=...:alpha=..."
        version: katolab version
        config: Validated config with defaults filled
        paths: Per-path dump files, relative to the output directory
        started: ISO timestamp
        wall_seconds: Elapsed wall-clock time
    """
    config_digest: str
    basis_digest: str
    euler_digest: Optional[str]
    report_digest: str
    seeds: Dict[str, List[int]]
    version: str
    config: dict = field(default_factory=dict)
    paths: List[str] = field(default_factory=list)
    started: str = ""
    wall_seconds: float = 0.0

    def to_json(self) -> str:
        return json.dumps(_clean(self.__dict__), sort_keys=True, indent=2)

    def write(self, directory: Path) -> Path:
        path = Path(directory) / "manifest.json"
        path.write_text(self.to_json() + "\n")
        return path

    @classmethod
    def read(cls, directory: Path) -> "RunManifest":
        path = Path(directory) / "manifest.json"
        if not path.exists():
            raise FileNotFoundError(f"no manifest.json in {directory}")
        return cls(**json.loads(path.read_text()))


def point_key(sweep: str, nu: float, alpha: float) -> str:
    return f"{sweep}:nu={nu!r}:alpha={alpha!r}"
