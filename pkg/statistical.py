import math
from typing import Dict, List

import numpy as np
import pandas as pd
from sklearn.linear_model import LinearRegression

SWEEP_COLUMNS = [
    "gamma", "stage", "eps", "eps0", "c1_norm", "c2_interior", "c2_global", "c2_boundary",
    "iterations", "status", "error",
]


class SweepAnalyzer:
    def __init__(self, rows: List[Dict]):
        """
        Initialize with the cell rows produced by verify.estimate_sweep.
        """
        self.df = self._create_dataframe(rows)

    def _create_dataframe(self, rows: List[Dict]) -> pd.DataFrame:
        df = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
        if df.empty:
            return df
        return df.sort_values(["gamma", "stage"], kind="stable").reset_index(drop=True)

    def converged(self) -> pd.DataFrame:
        return self.df[self.df["status"] == "converged"]

    def converged_fraction(self) -> float:
        if self.df.empty:
            return 0.0
        return float((self.df["status"] == "converged").mean())

    def stability_ratios(self) -> pd.DataFrame:
        """
        Per γ: c2_global at the smallest ε over its value at the next smallest,
        the same for c1_norm, and c2_global/(1 + c2_boundary) at the smallest ε.
        """
        records = []
        for gamma, cells in self.converged().groupby("gamma", sort=True):
            cells = cells.sort_values("eps", ascending=False, kind="stable")
            last = cells.iloc[-1]
            entry = {
                "gamma": gamma,
                "cells": len(cells),
                "c2_stability_ratio": math.nan,
                "c1_stability_ratio": math.nan,
                "boundary_ratio": last["c2_global"] / (1.0 + last["c2_boundary"]),
            }
            if len(cells) >= 2:
                prev = cells.iloc[-2]
                entry["c2_stability_ratio"] = _ratio(last["c2_global"], prev["c2_global"])
                entry["c1_stability_ratio"] = _ratio(last["c1_norm"], prev["c1_norm"])
            records.append(entry)
        return pd.DataFrame(
            records, columns=["gamma", "cells", "c2_stability_ratio", "c1_stability_ratio", "boundary_ratio"]
        )

    def estimate_spread(self) -> Dict[str, float]:
        """Max relative deviation of c2_global from its median across ε, per γ."""
        spread = {}
        for gamma, cells in self.converged().groupby("gamma", sort=True):
            values = cells["c2_global"].to_numpy()
            median = float(np.median(values))
            spread[f"{gamma:g}"] = float(np.max(np.abs(values - median)) / max(abs(median), 1e-300))
        return spread

    def summary(self) -> Dict:
        ratios = self.stability_ratios()
        return {
            "cells": int(len(self.df)),
            "converged": int((self.df["status"] == "converged").sum()),
            "converged_fraction": self.converged_fraction(),
            "gammas": sorted(float(g) for g in self.df["gamma"].unique()),
            "stability": [
                {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in row.items()}
                for row in ratios.to_dict(orient="records")
            ],
            "c2_spread": self.estimate_spread(),
        }


def _ratio(a: float, b: float) -> float:
    return float(a / b) if b != 0 else math.inf


def observed_order(h: List[float], errors: List[float]) -> float:
    """Slope of log(error) against log(h), fitted by least squares."""
    h = np.asarray(h, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if h.size < 2 or h.size != errors.size or np.any(h <= 0) or np.any(errors <= 0):
        raise ValueError("need at least two positive (h, error) pairs")
    model = LinearRegression().fit(np.log(h).reshape(-1, 1), np.log(errors))
    return float(model.coef_[0])
