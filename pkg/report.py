"""
Deterministic run artifacts: solution fields, diagnostics, Newton logs,
sweep tables and the run manifest.
"""
import hashlib
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from solver import SolveRecord
from statistical import SWEEP_COLUMNS

logger = logging.getLogger(__name__)


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _jsonable(value: Any) -> Any:
    """Plain JSON types; non-finite floats become null."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def dumps(payload: Any) -> str:
    return json.dumps(_jsonable(payload), sort_keys=True, indent=2) + "\n"


@dataclass
class RunManifest:
    config_hash: str
    problem: str
    schedule: List[float]
    eps0: Optional[float]
    subsolution_A: Optional[float]
    convergence: List[Dict] = field(default_factory=list)
    files: List[str] = field(default_factory=list)
    exit_code: int = 0
    wall_time: Optional[float] = None

    def to_dict(self) -> Dict:
        data = asdict(self)
        if self.wall_time is None:
            data.pop("wall_time")
        return data


class ReportWriter:
    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        self.files: List[str] = []
        os.makedirs(out_dir, exist_ok=True)

    def _path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def _write_text(self, name: str, text: str) -> str:
        with open(self._path(name), "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        self.files.append(name)
        logger.debug("wrote %s", name)
        return name

    def _write_frame(self, name: str, df: pd.DataFrame) -> str:
        df.to_csv(self._path(name), index=False, float_format="%.17g", lineterminator="\n")
        self.files.append(name)
        logger.debug("wrote %s", name)
        return name

    def write_json(self, name: str, payload: Any) -> str:
        return self._write_text(name, dumps(payload))

    def write_fields(self, records: List[SolveRecord]) -> List[str]:
        """One JSON and one CSV file per ε stage, numbered in schedule order."""
        names = []
        for j, rec in enumerate(records):
            stem = f"u_eps{j:02d}"
            names.append(self._write_text(f"{stem}.json", rec.u.to_json() + "\n"))
            names.append(self._write_frame(f"{stem}.csv", rec.u.to_frame()))
        return names

    def write_newton_log(self, records: List[SolveRecord], name: str = "newton_log.csv") -> str:
        rows = [entry.to_dict() for rec in records for entry in rec.trace]
        df = pd.DataFrame(rows, columns=["eps", "iteration", "residual_norm", "damping", "inadmissible"])
        return self._write_frame(name, df)

    def write_report(self, report, name: str = "report.json") -> str:
        return self.write_json(name, report.to_dict())

    def write_sweep(self, rows: List[Dict], summary: Dict) -> List[str]:
        df = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
        return [self._write_frame("sweep.csv", df), self.write_json("sweep_summary.json", summary)]

    def write_manifest(self, manifest: RunManifest, name: str = "manifest.json") -> str:
        # the manifest lists every file written before it, itself excluded
        manifest.files = list(self.files)
        return self.write_json(name, manifest.to_dict())


def convergence_summary(records: List[SolveRecord]) -> List[Dict]:
    return [
        {"eps": rec.eps, "iterations": rec.iterations, "final_residual": rec.final_residual}
        for rec in records
    ]
