"""
Scenario pipeline (controller -> drive -> moments -> analysis) and the
detuning and mismatch sweeps built on it.

Sweep cells are independent tasks run in a multiprocessing pool; completion
order is irrelevant because every cell carries its grid index and results are
put in order by `aggregate`.
"""

import itertools
import logging
from dataclasses import dataclass, field, replace
from multiprocessing import Pool
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .analyzer import ErrorSeries, SyncAnalyzer, SyncReport
from .config import ScenarioConfig, SweepSpec, parse_config, scenario_document
from .controller import (ALPHA_C, BETA_C, DriveSignal, drive_from_trajectory, make_synthetic_drive,
                         normalize_drive, simulate_controller)
from .errors import AggregationError, ApdSyncError, ConfigError, NumericalError
from .integrator import Trajectory, interpolate
from .moments import N1, SQ1, initial_moments, physicality_violations, quadrature_deviations, simulate_moments

logger = logging.getLogger(__name__)

SharedDrive = Tuple[Optional[Trajectory], DriveSignal]


@dataclass(frozen=True, eq=False)
class ScenarioOutcome:
    """Everything one scenario run produces."""

    label: str
    controller: Optional[Trajectory]
    moments: Trajectory
    drive: DriveSignal
    report: SyncReport
    errors: ErrorSeries
    portrait: Optional[np.ndarray]


@dataclass(frozen=True)
class Provenance:
    config_hash: str
    version: str = __version__
    drive_digest: Optional[str] = None


@dataclass(frozen=True)
class GridCell:
    """One sweep cell. `report` is None when the cell failed."""

    index: Tuple[int, ...]
    values: Tuple[float, ...]
    report: Optional[SyncReport]
    status: str = "ok"
    portrait: Optional[np.ndarray] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class GridResult:
    """Cells in row-major order over `axes`."""

    kind: str
    axes: Tuple[Tuple[str, Tuple[float, ...]], ...]
    cells: Tuple[GridCell, ...]
    provenance: Optional[Provenance] = None

    @property
    def axis_names(self) -> Tuple[str, ...]:
        return tuple(name for name, _ in self.axes)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(len(values) for _, values in self.axes)

    def __len__(self):
        return len(self.cells)

    def cell(self, *index: int) -> GridCell:
        return self.cells[int(np.ravel_multi_index(index, self.shape))]


def grid_indices(axes: Sequence[Tuple[str, Sequence[float]]]) -> List[Tuple[int, ...]]:
    """All index tuples of the grid spanned by `axes`, row-major."""
    return list(itertools.product(*(range(len(values)) for _, values in axes)))


def aggregate(cells: Iterable[GridCell], axes, kind: str = "mismatch",
              provenance: Optional[Provenance] = None) -> GridResult:
    """
    Order cells by grid index, independent of the order they finished in.

    Raises:
        AggregationError: a grid index is missing, duplicated or out of range
    """
    axes = tuple((name, tuple(values)) for name, values in axes)
    expected = grid_indices(axes)
    by_index: Dict[Tuple[int, ...], GridCell] = {}
    for cell in cells:
        index = tuple(cell.index)
        if index in by_index:
            raise AggregationError(f"duplicate result for grid index {index}")
        by_index[index] = cell
    extra = sorted(set(by_index) - set(expected))
    if extra:
        raise AggregationError(f"grid index {extra[0]} is outside the grid shape {tuple(len(v) for _, v in axes)}")
    for index in expected:
        if index not in by_index:
            raise AggregationError(f"missing result for grid index {index}")
    return GridResult(kind, axes, tuple(by_index[i] for i in expected), provenance)


def build_drive(cfg: ScenarioConfig) -> SharedDrive:
    """
    Integrate the controller (or build the synthetic drive) for `cfg`.

    With `coupling: enhanced` the oscillators' g is the frequency shift at
    the mean drive, so s is divided by its mean over the second half of the
    run. The window depends only on t_end, so the cells of a mismatch grid
    and a direct run of any one cell see the same drive.
    """
    kind = cfg.drive["kind"]
    if kind == "controller":
        controller = simulate_controller(cfg.controller, None, cfg.run.t_end, cfg.run.integrator)
        drive = drive_from_trajectory(controller)
    else:
        controller = None
        params = {k: v for k, v in cfg.drive.items() if k not in ("kind", "coupling")}
        drive = make_synthetic_drive(kind, params)
    if cfg.drive.get("coupling", "bare") == "enhanced":
        drive = normalize_drive(drive, 0.5 * cfg.run.t_end, cfg.run.t_end)
    return controller, drive


def regime_observable(name: str, controller: Optional[Trajectory], moments: Trajectory,
                      drive: DriveSignal) -> Callable[[np.ndarray], np.ndarray]:
    """Vectorized scalar readout used to label the dynamical regime."""
    if name == "sigma1_x":
        def observable(t):
            y = interpolate(moments, t, components=(N1, SQ1))
            return quadrature_deviations(y[:, 0].real, y[:, 1])[0]
        return observable
    if name == "s1":
        return lambda t: drive(t)[:, 0]
    if controller is None:
        raise ConfigError(f"observable {name!r} needs the controller drive")
    if name == "abs_alpha_c_sq":
        def observable(t):
            a = interpolate(controller, t, components=(ALPHA_C,))[:, 0]
            return a.real ** 2 + a.imag ** 2
        return observable
    if name == "re_beta_c":
        return lambda t: interpolate(controller, t, components=(BETA_C,))[:, 0].real
    raise ConfigError(f"unknown regime observable {name!r}")


def simulate_scenario(cfg: ScenarioConfig, shared: Optional[SharedDrive] = None) -> ScenarioOutcome:
    """
    Run one scenario end to end.

    Args:
        cfg: resolved scenario
        shared: an already computed (controller trajectory, drive) pair to
            reuse instead of integrating the controller again

    Raises:
        ApdSyncError: annotated with the scenario label
    """
    try:
        controller, drive = shared if shared is not None else build_drive(cfg)
        m0 = initial_moments(cfg.sigma1_x0, cfg.sigma2_x0)
        moments = simulate_moments(m0, drive, cfg.osc1, cfg.osc2, cfg.run.t_end, cfg.run.integrator)

        analyzer = SyncAnalyzer(cfg.analysis, cfg.run.embedding)
        observable = regime_observable(cfg.analysis.regime_observable, controller, moments, drive)
        regime, portrait = analyzer.classify(observable, 0.0, cfg.run.t_end)
        report, errors = analyzer.report(moments, regime)
    except ApdSyncError as e:
        e.scenario = cfg.label
        e.args = (f"scenario {cfg.label!r}: {e}",)
        raise

    violations = physicality_violations(moments.states)
    if violations:
        logger.warning("Scenario %s: %s", cfg.label, "; ".join(violations))
        report = replace(report, status="unphysical: " + "; ".join(violations))

    logger.info("Scenario %s: E_avg=%.6g, t_sync=%s, regime=%s", cfg.label, report.E_avg,
                "never" if report.t_sync is None else f"{report.t_sync:.4e} s", report.regime)
    return ScenarioOutcome(cfg.label, controller, moments, drive, report, errors, portrait)


def run_scenario(cfg: ScenarioConfig) -> Tuple[Optional[Trajectory], Trajectory, SyncReport]:
    """Controller trajectory (None for synthetic drives), moment trajectory and report."""
    outcome = simulate_scenario(cfg)
    return outcome.controller, outcome.moments, outcome.report


# Set once per worker process by the pool initializer.
_worker_drive: Optional[SharedDrive] = None


def _init_worker(shared: Optional[SharedDrive]):
    global _worker_drive
    _worker_drive = shared


def _run_cell(task) -> GridCell:
    index, values, document, digest = task
    try:
        cfg = parse_config(document)
        if digest is not None and _worker_drive[1].digest() != digest:
            raise NumericalError("shared drive differs from the one recorded in provenance")
        outcome = simulate_scenario(cfg, shared=_worker_drive)
    except ApdSyncError as e:
        logger.warning("Cell %s failed: %s", index, e)
        return GridCell(tuple(index), tuple(values), None, f"failed: {e}")
    return GridCell(tuple(index), tuple(values), outcome.report, outcome.report.status, outcome.portrait)


def _run_cells(tasks: List[tuple], shared: Optional[SharedDrive], workers: int) -> List[GridCell]:
    if workers <= 1 or len(tasks) <= 1:
        _init_worker(shared)
        try:
            return [_run_cell(task) for task in tasks]
        finally:
            _init_worker(None)

    cells = []
    with Pool(min(workers, len(tasks)), initializer=_init_worker, initargs=(shared,)) as pool:
        for cell in pool.imap_unordered(_run_cell, tasks):
            cells.append(cell)
            logger.info("Cell %s done (%d/%d)", cell.index, len(cells), len(tasks))
    return cells


def sweep_detuning(spec: SweepSpec, workers: int = 1) -> GridResult:
    """
    One full scenario per Delta_c/Omega_c value. Each cell integrates its own
    controller; cells keep their delay-embedded portraits.
    """
    if spec.axis_names != ("Delta_c_over_Omega_c",):
        raise ConfigError(f"sweep_detuning needs the single axis Delta_c_over_Omega_c (got {spec.axis_names})")
    (_, values), = spec.axes
    tasks = [((i,), (x,), scenario_document(spec.base, Delta_c_over_Omega_c=x), None)
             for i, x in enumerate(values)]
    logger.info("Detuning sweep: %d cells on %d worker(s)", len(tasks), workers)
    cells = _run_cells(tasks, None, workers)
    return aggregate(cells, spec.axes, "detuning", Provenance(spec.config_hash()))


def sweep_mismatch(spec: SweepSpec, workers: int = 1) -> GridResult:
    """
    E_avg over the Delta_Gamma x Delta_G grid. The drive is computed once and
    every cell consumes the same one; its digest goes into the provenance.
    """
    if spec.axis_names != ("Delta_Gamma", "Delta_G"):
        raise ConfigError(f"sweep_mismatch needs the axes (Delta_Gamma, Delta_G) (got {spec.axis_names})")
    (_, gammas), (_, gs) = spec.axes
    if not gammas or not gs:
        return aggregate([], spec.axes, "mismatch", Provenance(spec.config_hash()))

    try:
        shared = build_drive(spec.base)
    except ApdSyncError as e:
        e.args = (f"scenario {spec.base.label!r}: {e}",)
        raise
    digest = shared[1].digest()
    logger.info("Shared drive %s (%s)", digest[:12], shared[1].kind)

    tasks = [((i, j), (dgam, dg), scenario_document(spec.base, Delta_Gamma=dgam, Delta_G=dg), digest)
             for i, dgam in enumerate(gammas) for j, dg in enumerate(gs)]
    logger.info("Mismatch sweep: %d cells on %d worker(s)", len(tasks), workers)
    cells = _run_cells(tasks, shared, workers)
    return aggregate(cells, spec.axes, "mismatch", Provenance(spec.config_hash(), drive_digest=digest))


def run_sweep(spec: SweepSpec, workers: int = 1) -> GridResult:
    if spec.kind == "detuning":
        return sweep_detuning(spec, workers)
    return sweep_mismatch(spec, workers)


def label_counts(grid: GridResult) -> Dict[str, int]:
    """Number of cells per regime label; failed cells count as 'failed'."""
    counts: Dict[str, int] = {}
    for cell in grid.cells:
        key = str(cell.report.regime) if cell.report is not None else "failed"
        counts[key] = counts.get(key, 0) + 1
    return counts
