"""
CSV output of loading runs and comparison of two trajectory files.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, fields
from pathlib import Path
from typing import Iterable, List

import numpy as np
import pandas as pd

from .errors import ConfigurationError
from .event_simulator import MonteCarloResult
from .network_config import SignalSettings
from .network_loader import CumulativeCountRecord, TrajectoryRecord
from .signal_control import OptimizationResult, phase_labels

logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ["time_s", "link_id", "e_uq", "e_dq", "p_uq_full", "p_dq_empty", "q_in", "q_out", "lambda", "mu_eff"]
SIMULATION_COLUMNS = TRAJECTORY_COLUMNS + ["ci_half_width_uq", "ci_half_width_dq"]
BASELINE_COLUMNS = ["time_s", "link_id", "c_up", "c_down", "vehicles"]
COMPARED = ("e_uq", "e_dq")


def trajectory_frame(records: Iterable[TrajectoryRecord]) -> pd.DataFrame:
    frame = pd.DataFrame([asdict(record) for record in records], columns=[f.name for f in fields(TrajectoryRecord)])
    return frame.rename(columns={"arrival_rate": "lambda", "effective_service_rate": "mu_eff"})[TRAJECTORY_COLUMNS]


def simulation_frame(result: MonteCarloResult) -> pd.DataFrame:
    """Monte-Carlo means in the trajectory layout; lambda and mu_eff are not observed and stay empty."""
    n_times, n_links = result.mean_uq.shape
    frame = pd.DataFrame(
        {
            "time_s": np.repeat(result.times, n_links),
            "link_id": np.tile(np.asarray(result.link_ids, dtype=object), n_times),
            "e_uq": result.mean_uq.ravel(),
            "e_dq": result.mean_dq.ravel(),
            "p_uq_full": result.p_uq_full.ravel(),
            "p_dq_empty": result.p_dq_empty.ravel(),
            "q_in": result.q_in.ravel(),
            "q_out": result.q_out.ravel(),
            "lambda": np.nan,
            "mu_eff": np.nan,
            "ci_half_width_uq": result.half_width_uq.ravel(),
            "ci_half_width_dq": result.half_width_dq.ravel(),
        }
    )
    return frame[SIMULATION_COLUMNS]


def baseline_frame(records: Iterable[CumulativeCountRecord]) -> pd.DataFrame:
    rows = [
        {"time_s": r.time_s, "link_id": r.link_id, "c_up": r.c_up, "c_down": r.c_down, "vehicles": r.vehicles}
        for r in records
    ]
    return pd.DataFrame(rows, columns=BASELINE_COLUMNS)


def optimization_trace_frame(result: OptimizationResult, signals: SignalSettings) -> pd.DataFrame:
    labels = [f"x_{label}" for label in phase_labels(signals)]
    rows = [
        {"eval_index": e.eval_index, "objective": e.objective, **dict(zip(labels, e.plan.x))} for e in result.trace
    ]
    return pd.DataFrame(rows, columns=["eval_index", "objective", *labels])


def write_frame(frame: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.10g")
    logger.info("Wrote %d rows to %s", len(frame), path)
    return path


def read_trajectories(path: Path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"trajectory file not found: {path}")
    frame = pd.read_csv(path, dtype={"link_id": str})
    missing = [c for c in ("time_s", "link_id", *COMPARED) if c not in frame.columns]
    if missing:
        raise ConfigurationError(f"{path} lacks columns {missing}")
    return frame


def compare_trajectories(analytic: pd.DataFrame, simulated: pd.DataFrame) -> pd.DataFrame:
    """
    Per-link RMSE and maximum absolute error of E[UQ] and E[DQ] over the
    output times both tables share.
    """
    left_links = set(analytic["link_id"].astype(str))
    right_links = set(simulated["link_id"].astype(str))
    if left_links != right_links:
        raise ConfigurationError(
            f"link sets differ: only in first {sorted(left_links - right_links)}, "
            f"only in second {sorted(right_links - left_links)}"
        )
    keys = ["time_s", "link_id"]
    left = analytic.assign(link_id=analytic["link_id"].astype(str), time_s=analytic["time_s"].round(6))
    right = simulated.assign(link_id=simulated["link_id"].astype(str), time_s=simulated["time_s"].round(6))
    merged = left[keys + list(COMPARED)].merge(right[keys + list(COMPARED)], on=keys, suffixes=("_a", "_s"))
    if merged.empty:
        raise ConfigurationError("the two trajectory files share no output times")

    rows: List[dict] = []
    for link_id, group in merged.groupby("link_id", sort=False):
        row = {"link_id": link_id, "samples": len(group)}
        for column in COMPARED:
            diff = group[f"{column}_a"].to_numpy() - group[f"{column}_s"].to_numpy()
            row[f"rmse_{column}"] = float(np.sqrt(np.mean(diff**2)))
            row[f"max_abs_{column}"] = float(np.max(np.abs(diff)))
        rows.append(row)
    return pd.DataFrame(rows)
