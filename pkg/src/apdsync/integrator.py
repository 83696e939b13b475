"""
Deterministic ODE integration over flat complex state vectors.

Two schemes are provided: classical fixed-step RK4 for reproducible figure
runs and the Dormand-Prince 5(4) embedded pair for tolerance-controlled runs.
Both return a Trajectory that stores node derivatives, so dense output by
cubic Hermite interpolation needs no further right-hand-side calls.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, IntegrationError, RangeError, StiffnessError

logger = logging.getLogger(__name__)

RHS = Callable[[float, np.ndarray], np.ndarray]

# Dormand-Prince 5(4) tableau
_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
# 5th-order weights minus embedded 4th-order weights
_DP_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)

_SAFETY = 0.9
_FAC_MIN = 0.2
_FAC_MAX = 5.0


@dataclass(frozen=True)
class ToleranceSettings:
    """Error control for the adaptive scheme. Step sizes are in seconds."""

    rtol: float
    atol: float
    dt_init: float
    dt_min: float
    dt_max: float

    def __post_init__(self):
        problems = []
        if not self.rtol > 0:
            problems.append(f"rtol must be > 0 (got {self.rtol})")
        if not self.atol >= 0:
            problems.append(f"atol must be >= 0 (got {self.atol})")
        if not 0 < self.dt_min <= self.dt_init <= self.dt_max:
            problems.append(
                "step sizes must satisfy 0 < dt_min <= dt_init <= dt_max "
                f"(got {self.dt_min}, {self.dt_init}, {self.dt_max})"
            )
        if problems:
            raise ConfigError(problems)


@dataclass(frozen=True)
class IntegratorSettings:
    """Scheme selection: `fixed` uses `dt`, `adaptive` uses `tol`."""

    method: str
    dt: float
    tol: ToleranceSettings

    def __post_init__(self):
        if self.method not in ("fixed", "adaptive"):
            raise ConfigError(f"integrator method must be 'fixed' or 'adaptive' (got {self.method!r})")
        if not self.dt > 0:
            raise ConfigError(f"integrator dt must be > 0 (got {self.dt})")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    Time-stamped states with the right-hand side evaluated at every node.

    Arrays are made read-only on construction so one trajectory can be shared
    between threads and worker processes.
    """

    times: np.ndarray
    states: np.ndarray
    derivs: np.ndarray
    stats: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        times = np.ascontiguousarray(self.times, dtype=float)
        states = np.ascontiguousarray(self.states, dtype=complex)
        derivs = np.ascontiguousarray(self.derivs, dtype=complex)
        if states.ndim != 2 or states.shape != derivs.shape or states.shape[0] != times.shape[0]:
            raise ValueError(
                f"trajectory arrays misaligned: times {times.shape}, "
                f"states {states.shape}, derivs {derivs.shape}"
            )
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise ValueError("trajectory times must be strictly increasing")
        for arr in (times, states, derivs):
            arr.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "derivs", derivs)

    def __len__(self):
        return self.times.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])


def _check_finite(values: np.ndarray, t: float, what: str):
    if not np.all(np.isfinite(values)):
        raise IntegrationError(f"non-finite {what}", t=t)


def _eval(rhs: RHS, t: float, y: np.ndarray) -> np.ndarray:
    dy = np.asarray(rhs(t, y), dtype=complex)
    _check_finite(dy, t, "derivative")
    return dy


def _rk4(rhs: RHS, y: np.ndarray, t: float, dt: float, k1: np.ndarray) -> np.ndarray:
    half = 0.5 * dt
    k2 = _eval(rhs, t + half, y + half * k1)
    k3 = _eval(rhs, t + half, y + half * k2)
    k4 = _eval(rhs, t + dt, y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step_rk4(rhs: RHS, y: np.ndarray, t: float, dt: float) -> np.ndarray:
    """
    Advance `y` by one classical fourth-order Runge-Kutta step.

    Args:
        rhs: vector field `rhs(t, y)`
        y: state at `t`
        t: start time (s)
        dt: step (s), must be positive

    Returns:
        np.ndarray: state at `t + dt`
    """
    if not dt > 0:
        raise ConfigError(f"dt must be > 0 (got {dt})")
    y = np.asarray(y, dtype=complex)
    return _rk4(rhs, y, t, dt, _eval(rhs, t, y))


def _fixed_grid(t0: float, t1: float, dt: float) -> np.ndarray:
    n_full = int(np.floor((t1 - t0) / dt))
    grid = t0 + dt * np.arange(n_full + 1)
    # snap a last node that lands on t1 up to rounding; otherwise shorten the final step
    if t1 - grid[-1] > 1e-9 * dt:
        grid = np.append(grid, t1)
    else:
        grid[-1] = t1
    if grid.size > 1 and grid[-1] <= grid[-2]:
        grid = np.delete(grid, -2)
    return grid


def integrate_fixed(rhs: RHS, y0: Sequence[complex], t0: float, t1: float, dt: float) -> Trajectory:
    """
    Integrate with fixed-step RK4, sampling t0, t0+dt, ..., t1.

    The final step is shortened to land on t1 exactly. `t1 == t0` returns a
    single-sample trajectory.
    """
    if not dt > 0:
        raise ConfigError(f"dt must be > 0 (got {dt})")
    if t1 < t0:
        raise ConfigError(f"t1 must not precede t0 (got t0={t0}, t1={t1})")

    y = np.array(y0, dtype=complex)
    _check_finite(y, t0, "initial state")
    if t1 == t0:
        return Trajectory(np.array([t0]), y[None, :], _eval(rhs, t0, y)[None, :], {"accepted": 0, "rejected": 0})

    grid = _fixed_grid(t0, t1, dt)
    states = np.empty((grid.size, y.size), dtype=complex)
    derivs = np.empty_like(states)
    states[0] = y
    derivs[0] = _eval(rhs, t0, y)
    for k in range(grid.size - 1):
        t = grid[k]
        y = _rk4(rhs, states[k], t, grid[k + 1] - t, derivs[k])
        _check_finite(y, grid[k + 1], "state")
        states[k + 1] = y
        derivs[k + 1] = _eval(rhs, grid[k + 1], y)

    logger.debug("fixed RK4: %d steps over [%g, %g]", grid.size - 1, t0, t1)
    return Trajectory(grid, states, derivs, {"accepted": grid.size - 1, "rejected": 0})


def _error_norm(err: np.ndarray, y: np.ndarray, y_new: np.ndarray, tol: ToleranceSettings) -> float:
    # component-wise control on real and imaginary parts separately
    err_ri = np.concatenate([err.real, err.imag])
    y_ri = np.concatenate([np.abs(y.real), np.abs(y.imag)])
    y_new_ri = np.concatenate([np.abs(y_new.real), np.abs(y_new.imag)])
    scale = tol.atol + tol.rtol * np.maximum(y_ri, y_new_ri)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(scale > 0, np.abs(err_ri) / scale, np.where(err_ri == 0, 0.0, np.inf))
    return float(np.max(ratio)) if ratio.size else 0.0


def _dopri_step(rhs: RHS, y: np.ndarray, t: float, h: float, k1: np.ndarray):
    ks = [k1]
    for i in range(1, 7):
        yi = y + h * sum(a * k for a, k in zip(_DP_A[i], ks) if a != 0.0)
        ks.append(_eval(rhs, t + _DP_C[i] * h, yi))
    # stage 7 is evaluated at the 5th-order solution (FSAL)
    y_new = y + h * sum(a * k for a, k in zip(_DP_A[6], ks) if a != 0.0)
    err = h * sum(e * k for e, k in zip(_DP_E, ks) if e != 0.0)
    return y_new, err, ks[6]


def integrate_adaptive(
    rhs: RHS, y0: Sequence[complex], t0: float, t1: float, tol: ToleranceSettings
) -> Trajectory:
    """
    Integrate with the Dormand-Prince 5(4) pair under per-component error
    control |err_k| <= atol + rtol*|y_k|. Only accepted steps are stored.

    Raises:
        StiffnessError: the controller asks for a step below `tol.dt_min`.
        IntegrationError: a derivative or state became non-finite.
    """
    if t1 < t0:
        raise ConfigError(f"t1 must not precede t0 (got t0={t0}, t1={t1})")

    y = np.array(y0, dtype=complex)
    _check_finite(y, t0, "initial state")
    f = _eval(rhs, t0, y)
    times, states, derivs = [t0], [y], [f]
    accepted = rejected = 0

    t = t0
    h = min(tol.dt_init, tol.dt_max)
    while t < t1:
        last = t + h >= t1
        if last:
            h = t1 - t
        if t + h == t:
            raise StiffnessError(t, h, tol.dt_min)

        y_new, err, f_new = _dopri_step(rhs, y, t, h, f)
        err_norm = _error_norm(err, y, y_new, tol)

        if err_norm <= 1.0:
            _check_finite(y_new, t + h, "state")
            t = t1 if last else t + h
            y, f = y_new, f_new
            times.append(t)
            states.append(y)
            derivs.append(f)
            accepted += 1
            factor = _FAC_MAX if err_norm == 0.0 else min(_FAC_MAX, _SAFETY * err_norm ** -0.2)
            h = max(min(h * factor, tol.dt_max), tol.dt_min)
        else:
            rejected += 1
            factor = max(_FAC_MIN, _SAFETY * err_norm ** -0.2) if np.isfinite(err_norm) else _FAC_MIN
            h = h * factor
            if h < tol.dt_min:
                raise StiffnessError(t, h, tol.dt_min)

    logger.debug("adaptive DOPRI5: %d accepted, %d rejected over [%g, %g]", accepted, rejected, t0, t1)
    return Trajectory(np.array(times), np.array(states), np.array(derivs),
                      {"accepted": accepted, "rejected": rejected})


def integrate(rhs: RHS, y0: Sequence[complex], t0: float, t1: float, settings: IntegratorSettings) -> Trajectory:
    """Dispatch to the scheme named by `settings.method`."""
    if settings.method == "fixed":
        return integrate_fixed(rhs, y0, t0, t1, settings.dt)
    return integrate_adaptive(rhs, y0, t0, t1, settings.tol)


def _hermite(traj: Trajectory, t_query, components: Optional[Sequence[int]], derivative: bool):
    tq = np.asarray(t_query, dtype=float)
    times = traj.times
    if tq.size and (np.min(tq) < times[0] or np.max(tq) > times[-1]):
        raise RangeError(
            f"query outside trajectory range [{times[0]!r}, {times[-1]!r}]"
        )
    cols = slice(None) if components is None else list(components)
    states = traj.states[:, cols]
    derivs = traj.derivs[:, cols]

    if times.size == 1:
        src = derivs if derivative else states
        out = np.broadcast_to(src[0], tq.shape + src.shape[1:]).copy()
        return out

    idx = np.clip(np.searchsorted(times, tq, side="right") - 1, 0, times.size - 2)
    h = times[idx + 1] - times[idx]
    s = (tq - times[idx]) / h
    y0, y1 = states[idx], states[idx + 1]
    d0, d1 = derivs[idx], derivs[idx + 1]
    s = s[..., None]
    h = h[..., None]
    s2 = s * s
    s3 = s2 * s
    if not derivative:
        h00 = 2 * s3 - 3 * s2 + 1
        h10 = s3 - 2 * s2 + s
        h01 = -2 * s3 + 3 * s2
        h11 = s3 - s2
        return h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1
    g00 = (6 * s2 - 6 * s) / h
    g10 = 3 * s2 - 4 * s + 1
    g01 = (-6 * s2 + 6 * s) / h
    g11 = 3 * s2 - 2 * s
    return g00 * y0 + g10 * d0 + g01 * y1 + g11 * d1


def interpolate(traj: Trajectory, t_query: Union[float, np.ndarray],
                components: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    Cubic Hermite dense output, exact at the nodes.

    Args:
        traj: trajectory with node derivatives
        t_query: scalar or array of times inside [times[0], times[-1]]
        components: optional subset of state components

    Returns:
        np.ndarray: shape `(dim,)` for a scalar query, `(n, dim)` for an array
    """
    return _hermite(traj, t_query, components, derivative=False)


def resample(traj: Trajectory, dt: float, t_start: Optional[float] = None) -> Trajectory:
    """Uniform-grid copy of `traj` from `t_start` (default its start) in steps of `dt`."""
    if not dt > 0:
        raise ConfigError(f"resample dt must be > 0 (got {dt})")
    t_start = traj.t0 if t_start is None else t_start
    n = int(np.floor((traj.t_end - t_start) / dt * (1 + 1e-12))) + 1
    grid = t_start + dt * np.arange(n)
    grid = grid[grid <= traj.t_end]
    return Trajectory(grid, _hermite(traj, grid, None, False), _hermite(traj, grid, None, True), dict(traj.stats))
