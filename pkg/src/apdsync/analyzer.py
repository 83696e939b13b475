"""
Synchronization metrics, closed-form error oracles, delay embedding and
dynamical-regime classification.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.signal import find_peaks
from scipy.spatial.distance import cdist

from .errors import (AlignmentError, ConfigError, LengthError, NumericalError,
                     RangeError)
from .integrator import Trajectory
from .moments import N1, N2, SQ1, SQ2, SigmaPair, quadrature_deviations

logger = logging.getLogger(__name__)

OBSERVABLES = ("sigma1_x", "s1", "abs_alpha_c_sq", "re_beta_c")
LYAPUNOV_MODES = ("auto", "always", "never")


@dataclass(frozen=True, eq=False)
class ErrorSeries:
    times: np.ndarray
    e_nb: np.ndarray
    e_b2: np.ndarray
    e_sigma: np.ndarray
    e_sigma_p: np.ndarray


@dataclass(frozen=True)
class EmbeddingConfig:
    """Delay `tau` and sample spacing `resample_dt` in seconds."""

    tau: float
    dim: int
    resample_dt: float

    def __post_init__(self):
        problems = []
        if not self.tau > 0:
            problems.append(f"embedding tau must be > 0 (got {self.tau})")
        if not (isinstance(self.dim, (int, np.integer)) and self.dim >= 2):
            problems.append(f"embedding dim must be an integer >= 2 (got {self.dim})")
        if not self.resample_dt > 0:
            problems.append(f"embedding resample_dt must be > 0 (got {self.resample_dt})")
        if problems:
            raise ConfigError(problems)

    @property
    def lag(self) -> int:
        """Delay in samples; tau must be an integer multiple of resample_dt."""
        ratio = self.tau / self.resample_dt
        lag = int(round(ratio))
        if lag < 1 or abs(ratio - lag) > 1e-9 * max(ratio, 1.0):
            raise ConfigError(
                f"tau={self.tau} is not an integer multiple of resample_dt={self.resample_dt}; resample first"
            )
        return lag


@dataclass(frozen=True)
class RegimeLabel:
    """
    `kind` is one of period, chaotic, undetermined. `levels` are the cluster
    values of the tail maxima; `n_clusters` is their count even when it
    exceeded k_max.
    """

    kind: str
    k: Optional[int] = None
    lyapunov_estimate: Optional[float] = None
    levels: Tuple[float, ...] = ()
    n_clusters: int = 0

    def __post_init__(self):
        if self.kind not in ("period", "chaotic", "undetermined"):
            raise ValueError(f"unknown regime kind {self.kind!r}")
        if self.kind == "period" and not (self.k is not None and self.k >= 1):
            raise ValueError("a period label needs k >= 1")

    @classmethod
    def period(cls, k, **kw):
        return cls("period", k, **kw)

    @classmethod
    def chaotic(cls, **kw):
        return cls("chaotic", **kw)

    @classmethod
    def undetermined(cls, **kw):
        return cls("undetermined", **kw)

    def __str__(self):
        return f"period-{self.k}" if self.kind == "period" else self.kind


@dataclass(frozen=True)
class SyncReport:
    E_avg: float
    t_sync: Optional[float]
    regime: RegimeLabel
    final_sigmas: Tuple[SigmaPair, SigmaPair]
    status: str = "ok"


@dataclass(frozen=True)
class AnalysisSettings:
    """
    Thresholds and windows for one scenario's analysis. Times are seconds;
    `t0` is the start of the E_avg integrals.
    """

    t0: float
    steady_window: float
    peak_dt: float
    theiler_window: float
    lyapunov_fit: float
    sync_threshold: float = 1e-3
    peak_rel_tol: float = 1e-3
    flat_tol: float = 1e-8
    k_max: int = 8
    regime_observable: str = "s1"
    lyapunov: str = "auto"
    lyapunov_max_refs: int = 2000
    absolute_error: bool = False

    def __post_init__(self):
        problems = []
        for name in ("steady_window", "peak_dt", "theiler_window", "lyapunov_fit",
                     "sync_threshold", "peak_rel_tol", "flat_tol"):
            if not getattr(self, name) > 0:
                problems.append(f"analysis.{name} must be > 0 (got {getattr(self, name)})")
        if not self.t0 >= 0:
            problems.append(f"analysis.t0 must be >= 0 (got {self.t0})")
        if not self.k_max >= 1:
            problems.append(f"analysis.k_max must be >= 1 (got {self.k_max})")
        if self.regime_observable not in OBSERVABLES:
            problems.append(f"analysis.regime_observable must be one of {OBSERVABLES}")
        if self.lyapunov not in LYAPUNOV_MODES:
            problems.append(f"analysis.lyapunov must be one of {LYAPUNOV_MODES}")
        if problems:
            raise ConfigError(problems)


def _oscillator(traj: Trajectory, j: int):
    n_col, sq_col = (N1, SQ1) if j == 1 else (N2, SQ2)
    return traj.states[:, n_col].real, traj.states[:, sq_col]


def error_signals(traj1: Trajectory, traj2: Optional[Trajectory] = None,
                  first: int = 1, second: int = 2) -> ErrorSeries:
    """
    Pointwise differences between oscillator `first` of `traj1` and
    oscillator `second` of `traj2` (default: the same run).
    """
    traj2 = traj1 if traj2 is None else traj2
    if traj1.times.shape != traj2.times.shape or not np.array_equal(traj1.times, traj2.times):
        raise AlignmentError("moment trajectories are on different time grids; resample first")
    n_a, sq_a = _oscillator(traj1, first)
    n_b, sq_b = _oscillator(traj2, second)
    x_a, p_a = quadrature_deviations(n_a, sq_a)
    x_b, p_b = quadrature_deviations(n_b, sq_b)
    return ErrorSeries(traj1.times, n_a - n_b, sq_a - sq_b, x_a - x_b, p_a - p_b)


def analytic_error_nb(e0: float, Gamma: float, t):
    """e_nb(t) = e0 * exp(-Gamma t) for identical oscillators."""
    return e0 * np.exp(-Gamma * np.asarray(t, dtype=float))


def analytic_error_b2(e0: complex, Gamma: float, phase_integral, t):
    """
    e_b2(t) = e0 * exp(-Gamma t) * exp(-i * phase_integral), where
    phase_integral = int_0^t 2*Omega'(t') dt'. The modulus decays at Gamma.
    """
    t = np.asarray(t, dtype=float)
    return e0 * np.exp(-Gamma * t) * np.exp(-1j * np.asarray(phase_integral, dtype=float))


def phase_integral(times: np.ndarray, omega_prime: np.ndarray) -> np.ndarray:
    """Cumulative trapezoid of 2*Omega'(t) from times[0]."""
    return cumulative_trapezoid(2.0 * np.asarray(omega_prime, dtype=float), times, initial=0.0)


def _from_t0(times: np.ndarray, values: np.ndarray, t0: float):
    if t0 >= times[-1]:
        raise RangeError(f"t0={t0} is not before the series end {times[-1]}")
    t0 = max(t0, float(times[0]))
    mask = times > t0
    t_seg = np.concatenate([[t0], times[mask]])
    v_seg = np.concatenate([[np.interp(t0, times, values)], values[mask]])
    return t_seg, v_seg


def avg_sync_error(times: np.ndarray, e_sigma: np.ndarray, sigma1x: np.ndarray, t0: float,
                   absolute: bool = False) -> float:
    """
    E_avg = |int_{t0}^{t_end} e dt| / int_{t0}^{t_end} sigma1_x dt with
    trapezoidal quadrature on the sample grid. `absolute` integrates |e|
    instead.
    """
    times = np.asarray(times, dtype=float)
    e = np.abs(e_sigma) if absolute else np.asarray(e_sigma, dtype=float)
    t_seg, e_seg = _from_t0(times, e, t0)
    _, s_seg = _from_t0(times, np.asarray(sigma1x, dtype=float), t0)
    denominator = trapezoid(s_seg, t_seg)
    if not denominator > 0:
        raise NumericalError(f"integral of sigma1_x from t0={t0} is not positive")
    return float(abs(trapezoid(e_seg, t_seg)) / denominator)


def sync_time(times: np.ndarray, e_sigma: np.ndarray, sigma1x: np.ndarray,
              rel_threshold: float) -> Optional[float]:
    """Earliest time after which |e_sigma|/sigma1_x stays below `rel_threshold`."""
    if not rel_threshold > 0:
        raise ConfigError(f"rel_threshold must be > 0 (got {rel_threshold})")
    ratio = np.abs(e_sigma) / np.asarray(sigma1x, dtype=float)
    above = np.flatnonzero(~(ratio < rel_threshold))
    if above.size == 0:
        return float(times[0])
    if above[-1] == len(times) - 1:
        return None
    return float(times[above[-1] + 1])


def delay_embed(series: np.ndarray, cfg: EmbeddingConfig) -> np.ndarray:
    """
    Points (x(t_k), x(t_k + tau), ..., x(t_k + (dim-1) tau)) from a series
    sampled every `cfg.resample_dt`.

    Returns:
        np.ndarray: shape (N - (dim-1)*lag, dim)
    """
    x = np.asarray(series)
    lag = cfg.lag
    n_rows = x.shape[0] - (cfg.dim - 1) * lag
    if n_rows < 1:
        raise LengthError(
            f"series of {x.shape[0]} samples is too short for dim={cfg.dim}, lag={lag}"
        )
    indices = np.arange(n_rows)[:, None] + np.arange(cfg.dim)[None, :] * lag
    return x[indices]


def _refine_peaks(x: np.ndarray, peaks: np.ndarray) -> np.ndarray:
    # vertex of the parabola through each maximum and its neighbours
    y0, y1, y2 = x[peaks - 1], x[peaks], x[peaks + 1]
    curvature = y0 - 2.0 * y1 + y2
    with np.errstate(divide="ignore", invalid="ignore"):
        shift = np.where(curvature < 0, (y0 - y2) ** 2 / (8.0 * curvature), 0.0)
    return y1 - shift


def _cluster(values: np.ndarray, tol: float):
    order = np.sort(values)
    breaks = np.flatnonzero(np.diff(order) > tol) + 1
    return np.split(order, breaks)


def detect_period(series: np.ndarray, dt: float, steady_window: float, rel_tol: float = 1e-3,
                  k_max: int = 8, flat_tol: float = 1e-8) -> RegimeLabel:
    """
    Classify the tail `steady_window` of a uniformly sampled series by the
    number of distinct local-maximum levels.

    Levels are compared after normalizing by the tail's peak-to-peak range,
    which makes the label independent of the series' scale. More than
    `k_max` levels yields an undetermined label carrying `n_clusters`, for
    the caller to settle with a Lyapunov estimate.
    """
    x = np.asarray(series, dtype=float)
    n_win = int(round(steady_window / dt))
    if n_win + 1 > x.shape[0]:
        raise RangeError(f"series spans {(x.shape[0] - 1) * dt:.3e} s, shorter than steady_window={steady_window:.3e} s")
    tail = x[-(n_win + 1):]
    lo, hi = float(tail.min()), float(tail.max())
    span = hi - lo
    scale = max(abs(lo), abs(hi))

    if span <= flat_tol * scale or span == 0.0:
        return RegimeLabel.period(1, levels=(hi,), n_clusters=1)

    peaks, _ = find_peaks(tail)
    if peaks.size == 0:
        return RegimeLabel.undetermined()

    heights = _refine_peaks(tail, peaks)
    clusters = _cluster((heights - lo) / span, rel_tol)
    levels = tuple(float(lo + span * c.mean()) for c in clusters)
    if len(clusters) <= k_max:
        return RegimeLabel.period(len(clusters), levels=levels, n_clusters=len(clusters))
    return RegimeLabel.undetermined(levels=levels, n_clusters=len(clusters))


def lyapunov_divergence(embedded: np.ndarray, theiler: int, fit_steps: int,
                        max_refs: int = 2000, chunk: int = 256) -> np.ndarray:
    """
    Mean log separation of nearest-neighbour pairs after k = 0..fit_steps
    samples. Neighbours closer in time than `theiler` samples are excluded.
    """
    X = np.asarray(embedded, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    m = X.shape[0] - fit_steps
    if m <= 2 * theiler + 1:
        raise LengthError(f"{X.shape[0]} points are too few for theiler={theiler}, fit_steps={fit_steps}")

    stride = max(1, int(np.ceil(m / max_refs)))
    refs = np.arange(0, m, stride)
    candidates = X[:m]
    log_sum = np.zeros(fit_steps + 1)
    counts = np.zeros(fit_steps + 1)
    steps = np.arange(fit_steps + 1)

    for start in range(0, refs.size, chunk):
        rows = refs[start:start + chunk]
        d = cdist(X[rows], candidates)
        near = np.abs(rows[:, None] - np.arange(m)[None, :]) <= theiler
        d[near] = np.inf
        d[d == 0.0] = np.inf
        nn = np.argmin(d, axis=1)
        ok = np.isfinite(d[np.arange(rows.size), nn])
        rows, nn = rows[ok], nn[ok]
        if rows.size == 0:
            continue
        sep = np.linalg.norm(X[rows[:, None] + steps] - X[nn[:, None] + steps], axis=-1)
        valid = sep > 0
        log_sum += np.where(valid, np.log(np.where(valid, sep, 1.0)), 0.0).sum(axis=0)
        counts += valid.sum(axis=0)

    if np.any(counts == 0):
        raise LengthError("no nearest-neighbour pairs outside the Theiler window")
    return log_sum / counts


def estimate_lyapunov(embedded: np.ndarray, resample_dt: float, theiler: int = 50,
                      fit_steps: int = 30, max_refs: int = 2000, min_points: int = 1000) -> float:
    """
    Largest Lyapunov exponent (1/s) by nearest-neighbour divergence: the
    slope of the mean log separation over the first `fit_steps` samples.
    """
    X = np.asarray(embedded, dtype=float)
    if X.shape[0] < min_points:
        raise LengthError(f"need at least {min_points} embedded points (got {X.shape[0]})")
    curve = lyapunov_divergence(X, theiler, fit_steps, max_refs)
    t = np.arange(fit_steps + 1) * resample_dt
    slope = np.polyfit(t, curve, 1)[0]
    return float(slope)


def uniform_grid(t_start: float, t_end: float, dt: float) -> np.ndarray:
    """Grid t_start, t_start + dt, ... not exceeding t_end."""
    n = int(np.floor((t_end - t_start) / dt * (1 + 1e-12))) + 1
    grid = t_start + dt * np.arange(n)
    return grid[grid <= t_end]


class SyncAnalyzer:
    """
    Computes the synchronization report for one scenario from its moment
    trajectory and a classification observable.
    """

    def __init__(self, settings: AnalysisSettings, embedding: EmbeddingConfig):
        self.settings = settings
        self.embedding = embedding

    def classify(self, observable: Callable[[np.ndarray], np.ndarray], t_start: float,
                 t_end: float) -> Tuple[RegimeLabel, Optional[np.ndarray]]:
        """
        Label the steady tail of `observable` (a vectorized function of time
        valid on [t_start, t_end]). Returns the label and the embedded
        portrait of the tail.
        """
        s = self.settings
        window = min(s.steady_window, t_end - t_start)
        if window < s.steady_window:
            logger.info("Run shorter than steady_window; classifying the last %.3e s", window)
        grid = uniform_grid(t_end - window, t_end, s.peak_dt)
        label = detect_period(observable(grid), s.peak_dt, (grid.size - 1) * s.peak_dt,
                              s.peak_rel_tol, s.k_max, s.flat_tol)

        emb_grid = uniform_grid(t_end - window, t_end, self.embedding.resample_dt)
        try:
            portrait = delay_embed(observable(emb_grid), self.embedding)
        except LengthError as e:
            logger.warning("No portrait: %s", e)
            portrait = None

        overflow = label.kind == "undetermined" and label.n_clusters > s.k_max
        if s.lyapunov == "never" or (s.lyapunov == "auto" and not overflow) or portrait is None:
            return label, portrait

        try:
            lam = estimate_lyapunov(
                portrait, self.embedding.resample_dt,
                theiler=max(1, int(round(s.theiler_window / self.embedding.resample_dt))),
                fit_steps=max(2, int(round(s.lyapunov_fit / self.embedding.resample_dt))),
                max_refs=s.lyapunov_max_refs,
            )
        except LengthError as e:
            logger.warning("Lyapunov estimate skipped: %s", e)
            return label, portrait

        logger.info("Lyapunov estimate %.4g 1/s (%d maxima levels)", lam, label.n_clusters)
        if overflow:
            kind = "chaotic" if lam > 0 else "undetermined"
            label = RegimeLabel(kind, None, lam, label.levels, label.n_clusters)
        else:
            label = RegimeLabel(label.kind, label.k, lam, label.levels, label.n_clusters)
        return label, portrait

    def report(self, moments: Trajectory, regime: RegimeLabel) -> Tuple[SyncReport, ErrorSeries]:
        """E_avg, synchronization time and final deviations for a moment run."""
        s = self.settings
        errors = error_signals(moments)
        sigma1_x = quadrature_deviations(*_oscillator(moments, 1))[0]
        e_avg = avg_sync_error(errors.times, errors.e_sigma, sigma1_x, s.t0, absolute=s.absolute_error)
        # both quadratures have to agree
        gap = np.maximum(np.abs(errors.e_sigma), np.abs(errors.e_sigma_p))
        t_sync = sync_time(errors.times, gap, sigma1_x, s.sync_threshold)

        n1, sq1 = _oscillator(moments, 1)
        n2, sq2 = _oscillator(moments, 2)
        x1, p1 = quadrature_deviations(n1[-1:], sq1[-1:])
        x2, p2 = quadrature_deviations(n2[-1:], sq2[-1:])
        final = (SigmaPair(float(x1[0]), float(p1[0])), SigmaPair(float(x2[0]), float(p2[0])))
        return SyncReport(e_avg, t_sync, regime, final), errors
