"""
CSV and manifest output for simulations and sweeps.

All floats are written with 17 significant digits so a CSV parses back to the
same doubles, and lines end in LF on every platform.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from . import __version__
from .analyzer import error_signals
from .config import document_hash
from .controller import ALPHA_C, BETA_C, DriveSignal
from .errors import AggregationError
from .integrator import Trajectory, interpolate, resample
from .moments import SQ1, SQ2, sigma_series

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"

TIMESERIES_COLUMNS = (
    "t_s", "sigma1_x", "sigma1_p", "sigma2_x", "sigma2_p", "e_sigma", "e_nb",
    "re_sq1", "im_sq1", "re_sq2", "im_sq2", "s1", "s2",
    "re_alpha_c", "im_alpha_c", "re_beta_c", "im_beta_c",
)
MISMATCH_GRID_COLUMNS = ("delta_gamma", "delta_g", "e_avg", "t_sync_s", "regime", "status")
DETUNING_GRID_COLUMNS = ("delta_c_over_omega_c", "e_avg", "t_sync_s", "regime", "status")
REGIME_COLUMNS = ("delta_c_over_omega_c", "regime", "lyapunov_per_s", "levels", "status")
BIFURCATION_COLUMNS = ("delta_c_over_omega_c", "level")


def _write_frame(df: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    except OSError as e:
        raise OSError(f"cannot write {path}: {e}") from e
    logger.info("Wrote %s (%d rows)", path, len(df))
    return path


def timeseries_frame(moments: Trajectory, drive: DriveSignal, controller: Optional[Trajectory] = None,
                     output_dt: Optional[float] = None) -> pd.DataFrame:
    """
    Per-sample table of deviations, errors, squeezing, drive and controller
    amplitudes. With `output_dt` the moments are resampled onto a uniform grid
    first; controller columns are empty for synthetic drives.
    """
    if output_dt is not None:
        moments = resample(moments, output_dt)
    t = moments.times
    sig = sigma_series(moments.states)
    errors = error_signals(moments)
    s = drive(t)

    data = {
        "t_s": t,
        "sigma1_x": sig["sigma1_x"],
        "sigma1_p": sig["sigma1_p"],
        "sigma2_x": sig["sigma2_x"],
        "sigma2_p": sig["sigma2_p"],
        "e_sigma": errors.e_sigma,
        "e_nb": errors.e_nb,
        "re_sq1": moments.states[:, SQ1].real,
        "im_sq1": moments.states[:, SQ1].imag,
        "re_sq2": moments.states[:, SQ2].real,
        "im_sq2": moments.states[:, SQ2].imag,
        "s1": s[:, 0],
        "s2": s[:, 1],
    }
    if controller is not None:
        amp = interpolate(controller, t, components=(ALPHA_C, BETA_C))
        data.update(re_alpha_c=amp[:, 0].real, im_alpha_c=amp[:, 0].imag,
                    re_beta_c=amp[:, 1].real, im_beta_c=amp[:, 1].imag)
    else:
        nan = np.full(t.shape, np.nan)
        data.update(re_alpha_c=nan, im_alpha_c=nan, re_beta_c=nan, im_beta_c=nan)
    return pd.DataFrame(data, columns=list(TIMESERIES_COLUMNS))


def write_timeseries_csv(path: Union[str, Path], moments: Trajectory, drive: DriveSignal,
                         controller: Optional[Trajectory] = None, output_dt: Optional[float] = None) -> Path:
    """Write `timeseries_frame(...)` to `path`."""
    return _write_frame(timeseries_frame(moments, drive, controller, output_dt), path)


def _check_complete(grid) -> None:
    expected = int(np.prod(grid.shape)) if grid.axes else 0
    if len(grid.cells) != expected:
        raise AggregationError(f"grid has {len(grid.cells)} cells, expected {expected}")


def _t_sync(cell):
    if cell.report is None or cell.report.t_sync is None:
        return np.nan
    return cell.report.t_sync


def grid_frame(grid) -> pd.DataFrame:
    """One row per cell in row-major axis order."""
    _check_complete(grid)
    rows = []
    for cell in grid.cells:
        row = {
            "e_avg": cell.report.E_avg if cell.report is not None else np.nan,
            "t_sync_s": _t_sync(cell),
            "regime": str(cell.report.regime) if cell.report is not None else "undetermined",
            "status": cell.status,
        }
        if grid.kind == "detuning":
            row["delta_c_over_omega_c"] = cell.values[0]
        else:
            row["delta_gamma"], row["delta_g"] = cell.values
        rows.append(row)
    columns = DETUNING_GRID_COLUMNS if grid.kind == "detuning" else MISMATCH_GRID_COLUMNS
    return pd.DataFrame(rows, columns=list(columns))


def write_grid_csv(grid, path: Union[str, Path]) -> Path:
    return _write_frame(grid_frame(grid), path)


def _levels_text(levels) -> str:
    return ";".join(FLOAT_FORMAT % x for x in levels)


def write_regimes_csv(grid, path: Union[str, Path]) -> Path:
    """Label, Lyapunov estimate and maxima levels per detuning."""
    _check_complete(grid)
    rows = []
    for cell in grid.cells:
        report = cell.report
        rows.append({
            "delta_c_over_omega_c": cell.values[0],
            "regime": str(report.regime) if report is not None else "undetermined",
            "lyapunov_per_s": (report.regime.lyapunov_estimate
                               if report is not None and report.regime.lyapunov_estimate is not None else np.nan),
            "levels": _levels_text(report.regime.levels) if report is not None else "",
            "status": cell.status,
        })
    return _write_frame(pd.DataFrame(rows, columns=list(REGIME_COLUMNS)), path)


def write_bifurcation_csv(grid, path: Union[str, Path]) -> Path:
    """One row per (detuning, maxima level): the data of a bifurcation diagram."""
    _check_complete(grid)
    rows = [
        {"delta_c_over_omega_c": cell.values[0], "level": level}
        for cell in grid.cells if cell.report is not None
        for level in cell.report.regime.levels
    ]
    return _write_frame(pd.DataFrame(rows, columns=list(BIFURCATION_COLUMNS)), path)


def write_portrait_csv(portrait: np.ndarray, path: Union[str, Path],
                       times: Optional[np.ndarray] = None) -> Path:
    """
    Delay-embedded points as columns x0..x{dim-1}, where column k is the
    series delayed by k*tau. `times` (the row start times) adds a t_s column.
    """
    portrait = np.asarray(portrait, dtype=float)
    df = pd.DataFrame(portrait, columns=[f"x{k}" for k in range(portrait.shape[1])])
    if times is not None:
        df.insert(0, "t_s", np.asarray(times, dtype=float)[:portrait.shape[0]])
    return _write_frame(df, path)


@dataclass
class RunManifest:
    """
    Provenance written next to every output set. `created_utc` is the only
    field that differs between identical invocations.
    """

    command: str
    config_hash: str
    resolved_config: Dict[str, Any]
    version: str = __version__
    drive_digest: Optional[str] = None
    outputs: List[str] = field(default_factory=list)
    result: Dict[str, Any] = field(default_factory=dict)
    created_utc: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def content_hash(self) -> str:
        """Hash of every field except the timestamp."""
        data = self.to_dict()
        data.pop("created_utc")
        return document_hash(data)

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        data = self.to_dict()
        data["content_hash"] = self.content_hash()
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", newline="\n") as f:
                json.dump(data, f, indent=2, sort_keys=True, allow_nan=False)
                f.write("\n")
        except OSError as e:
            raise OSError(f"cannot write {path}: {e}") from e
        logger.info("Wrote %s", path)
        return path


class ResultLogger:
    """
    Writes one command's outputs into `out_dir` and records their names for
    the run manifest.
    """

    def __init__(self, out_dir: Union[str, Path]):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.outputs: List[str] = []

    def _record(self, path: Path) -> Path:
        self.outputs.append(path.name)
        return path

    def timeseries(self, outcome, output_dt: Optional[float] = None) -> Path:
        return self._record(write_timeseries_csv(self.out_dir / "timeseries.csv", outcome.moments,
                                                 outcome.drive, outcome.controller, output_dt))

    def portrait(self, portrait: np.ndarray, name: str = "portrait.csv") -> Path:
        return self._record(write_portrait_csv(portrait, self.out_dir / name))

    def grid(self, grid) -> List[Path]:
        """grid.csv for every sweep; regimes, bifurcation and portraits for detuning sweeps."""
        paths = [self._record(write_grid_csv(grid, self.out_dir / "grid.csv"))]
        if grid.kind == "detuning":
            paths.append(self._record(write_regimes_csv(grid, self.out_dir / "regimes.csv")))
            paths.append(self._record(write_bifurcation_csv(grid, self.out_dir / "bifurcation.csv")))
            for cell in grid.cells:
                if cell.portrait is not None:
                    paths.append(self.portrait(cell.portrait, f"portrait_{cell.index[0]}.csv"))
        return paths

    def manifest(self, command: str, cfg, drive_digest: Optional[str] = None) -> Path:
        resolved = cfg.base.resolved() if hasattr(cfg, "base") else cfg.resolved()
        manifest = RunManifest(command, cfg.config_hash(), resolved, drive_digest=drive_digest,
                               outputs=list(self.outputs))
        return manifest.write(self.out_dir / "manifest.json")


def summarize_grid(path: Union[str, Path]) -> Dict[str, Any]:
    """E_avg range and regime counts of a grid CSV."""
    df = pd.read_csv(path)
    missing = [c for c in ("e_avg", "regime", "status") if c not in df.columns]
    if missing:
        raise ValueError(f"{path} is not a grid CSV (missing columns {missing})")
    ok = df[df["status"] == "ok"]
    summary = {
        "cells": int(len(df)),
        "ok": int(len(ok)),
        "e_avg_min": float(ok["e_avg"].min()) if len(ok) else float("nan"),
        "e_avg_max": float(ok["e_avg"].max()) if len(ok) else float("nan"),
        "regimes": {str(k): int(v) for k, v in df["regime"].value_counts().sort_index().items()},
    }
    if len(ok):
        worst = ok.loc[ok["e_avg"].idxmax()]
        axis_cols = [c for c in df.columns if c not in ("e_avg", "t_sync_s", "regime", "status")]
        summary["worst_cell"] = {c: float(worst[c]) for c in axis_cols}
    return summary
