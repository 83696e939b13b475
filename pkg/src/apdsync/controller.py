"""
Classical mean-field controller: the driven optomechanical cavity (alpha_c,
beta_c) and the two intermediary cavities (alpha_1, alpha_2) it feeds.

The controller's only output to the quantum side is the pair of drive
signals s_j(t) = |alpha_j(t)|^2.
"""

import hashlib
import logging
from dataclasses import dataclass, fields
from typing import Dict, Optional

import numpy as np
from scipy.integrate import trapezoid

from .errors import ConfigError, NumericalError
from .integrator import IntegratorSettings, Trajectory, integrate, interpolate

logger = logging.getLogger(__name__)

ALPHA_C, BETA_C, ALPHA_1, ALPHA_2 = range(4)


@dataclass(frozen=True)
class ControllerParams:
    """All fields are angular frequencies in rad/s."""

    Delta_c: float
    gamma_c: float
    g_c: float
    Gamma_c: float
    Omega_c: float
    eps_c: float
    Delta_1: float
    Delta_2: float
    gamma_1: float
    gamma_2: float
    eps_1: float
    eps_2: float

    def __post_init__(self):
        problems = []
        for f in fields(self):
            if not np.isfinite(getattr(self, f.name)):
                problems.append(f"controller.{f.name} must be finite")
        for name in ("gamma_c", "Gamma_c", "gamma_1", "gamma_2", "Omega_c"):
            if not getattr(self, name) > 0:
                problems.append(f"controller.{name} must be > 0 (got {getattr(self, name)})")
        for name in ("eps_c", "eps_1", "eps_2"):
            if not getattr(self, name) >= 0:
                problems.append(f"controller.{name} must be >= 0 (got {getattr(self, name)})")
        if problems:
            raise ConfigError(problems)

    @property
    def period(self) -> float:
        """Controller mechanical period 2*pi/Omega_c in seconds."""
        return 2.0 * np.pi / self.Omega_c


@dataclass(frozen=True)
class ControllerState:
    alpha_c: complex = 0j
    beta_c: complex = 0j
    alpha_1: complex = 0j
    alpha_2: complex = 0j

    def to_vector(self) -> np.ndarray:
        return np.array([self.alpha_c, self.beta_c, self.alpha_1, self.alpha_2], dtype=complex)

    @classmethod
    def from_vector(cls, y) -> "ControllerState":
        y = np.asarray(y, dtype=complex)
        return cls(complex(y[ALPHA_C]), complex(y[BETA_C]), complex(y[ALPHA_1]), complex(y[ALPHA_2]))


def controller_rhs(state, p: ControllerParams, t: float = 0.0):
    """
    Mean-field equations of motion of the controller.

    `state` may be a ControllerState (a ControllerState of derivatives is
    returned), a length-4 vector, or a (4, N) array of column states.
    """
    if isinstance(state, ControllerState):
        return ControllerState.from_vector(controller_rhs(state.to_vector(), p, t))

    y = np.asarray(state, dtype=complex)
    a_c, b_c, a_1, a_2 = y[ALPHA_C], y[BETA_C], y[ALPHA_1], y[ALPHA_2]
    dy = np.empty_like(y)
    dy[ALPHA_C] = (-1j * p.Delta_c - 0.5 * p.gamma_c) * a_c - 1j * p.g_c * a_c * (2.0 * b_c.real) + p.eps_c
    dy[BETA_C] = (-1j * p.Omega_c - 0.5 * p.Gamma_c) * b_c - 1j * p.g_c * (a_c.real ** 2 + a_c.imag ** 2)
    dy[ALPHA_1] = (-1j * p.Delta_1 - 0.5 * p.gamma_1) * a_1 - np.sqrt(p.gamma_1 * p.gamma_c) * a_c + p.eps_1
    dy[ALPHA_2] = (-1j * p.Delta_2 - 0.5 * p.gamma_2) * a_2 - np.sqrt(p.gamma_2 * p.gamma_c) * a_c + p.eps_2
    return dy


def linear_steady_state(p: ControllerParams) -> ControllerState:
    """Fixed point of the controller equations when g_c = 0."""
    if p.g_c != 0:
        raise ConfigError("linear_steady_state requires g_c = 0")
    a_c = p.eps_c / (1j * p.Delta_c + 0.5 * p.gamma_c)
    a_1 = (p.eps_1 - np.sqrt(p.gamma_1 * p.gamma_c) * a_c) / (1j * p.Delta_1 + 0.5 * p.gamma_1)
    a_2 = (p.eps_2 - np.sqrt(p.gamma_2 * p.gamma_c) * a_c) / (1j * p.Delta_2 + 0.5 * p.gamma_2)
    return ControllerState(complex(a_c), 0j, complex(a_1), complex(a_2))


def simulate_controller(p: ControllerParams, initial: Optional[ControllerState], t_end: float,
                        integ: IntegratorSettings) -> Trajectory:
    """
    Integrate the controller from t = 0 to `t_end`.

    Args:
        p: controller parameters (rad/s)
        initial: starting amplitudes; None means all zeros
        t_end: end time (s)
        integ: integrator settings

    Returns:
        Trajectory: columns (alpha_c, beta_c, alpha_1, alpha_2)
    """
    if not t_end > 0:
        raise ConfigError(f"t_end must be > 0 (got {t_end})")
    initial = initial or ControllerState()
    logger.info("Integrating controller to t=%.3e s (%s, Delta_c/Omega_c=%.4g)",
                t_end, integ.method, p.Delta_c / p.Omega_c)
    traj = integrate(lambda t, y: controller_rhs(y, p, t), initial.to_vector(), 0.0, t_end, integ)
    logger.info("Controller done: %d samples (%d rejected steps)", len(traj), traj.stats.get("rejected", 0))
    return traj


class DriveSignal:
    """
    Pair of non-negative drive values (s_1(t), s_2(t)) shared by the two
    oscillators. Instances are immutable.
    """

    kind = "abstract"

    def __call__(self, t):
        """Return shape (2,) for scalar t or (n, 2) for an array of times."""
        raise NotImplementedError

    @property
    def t_range(self):
        return (-np.inf, np.inf)

    def _fingerprint(self) -> bytes:
        raise NotImplementedError

    def digest(self) -> str:
        """SHA-256 of the data that fully determines this drive."""
        return hashlib.sha256(self.kind.encode() + self._fingerprint()).hexdigest()


class TrajectoryDrive(DriveSignal):
    """s_j(t) = |alpha_j(t)|^2 by dense interpolation of a controller run."""

    kind = "controller"

    def __init__(self, traj: Trajectory):
        if traj.dim != 4:
            raise ValueError(f"controller trajectory must have 4 components (got {traj.dim})")
        self.traj = traj

    def __call__(self, t):
        a = interpolate(self.traj, t, components=(ALPHA_1, ALPHA_2))
        return a.real ** 2 + a.imag ** 2

    @property
    def t_range(self):
        return (self.traj.t0, self.traj.t_end)

    def _fingerprint(self) -> bytes:
        return self.traj.times.tobytes() + self.traj.states.tobytes() + self.traj.derivs.tobytes()


class SyntheticDrive(DriveSignal):
    """Closed-form common drive, identical for both oscillators."""

    def __init__(self, kind: str, offset: float, amplitude: float = 0.0,
                 frequency: float = 0.0, phase: float = 0.0):
        self.kind = kind
        self.offset = float(offset)
        self.amplitude = float(amplitude)
        self.frequency = float(frequency)
        self.phase = float(phase)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        s = self.offset + self.amplitude * np.cos(self.frequency * t + self.phase)
        s = np.broadcast_to(s, t.shape)
        return np.stack([s, s], axis=-1)

    def _fingerprint(self) -> bytes:
        return np.array([self.offset, self.amplitude, self.frequency, self.phase]).tobytes()


class ScaledDrive(DriveSignal):
    """`base` multiplied by a constant factor on both channels."""

    def __init__(self, base: DriveSignal, factor: float):
        if not (np.isfinite(factor) and factor > 0):
            raise ValueError(f"drive scale factor must be finite and > 0 (got {factor})")
        self.base = base
        self.factor = float(factor)
        self.kind = base.kind

    def __call__(self, t):
        return self.factor * self.base(t)

    @property
    def t_range(self):
        return self.base.t_range

    def _fingerprint(self) -> bytes:
        return self.base._fingerprint() + np.float64(self.factor).tobytes()


def normalize_drive(drive: DriveSignal, t_start: float, t_end: float, samples: int = 20001) -> ScaledDrive:
    """
    Rescale `drive` so that s_1 averages to 1 over [t_start, t_end]. Both
    channels share the factor, so identical channels stay identical.

    Raises:
        NumericalError: s_1 has no positive mean on the window
    """
    t = np.linspace(t_start, t_end, samples)
    mean = float(trapezoid(drive(t)[:, 0], t)) / (t_end - t_start)
    if not mean > 0:
        raise NumericalError(f"drive mean over [{t_start:.3e}, {t_end:.3e}] s is {mean}, cannot normalize")
    logger.info("Drive mean %.6g over [%.3e, %.3e] s; coupling is the shift at that mean", mean, t_start, t_end)
    return ScaledDrive(drive, 1.0 / mean)


def drive_from_trajectory(traj: Trajectory) -> DriveSignal:
    """Expose a controller trajectory as the drive s_j(t) = |alpha_j(t)|^2."""
    return TrajectoryDrive(traj)


def make_synthetic_drive(kind: str, params: Dict[str, float]) -> DriveSignal:
    """
    Build a drive independent of the optomechanical controller.

    kind `constant`: params {value}
    kind `sinusoid`: params {offset, amplitude, frequency (rad/s), phase (optional)}
    """
    if kind == "constant":
        value = float(params.get("value", 0.0))
        if value < 0:
            raise ConfigError(f"constant drive must be >= 0 (got {value})")
        return SyntheticDrive("constant", value)
    if kind == "sinusoid":
        offset = float(params["offset"])
        amplitude = float(params["amplitude"])
        if amplitude < 0:
            raise ConfigError(f"sinusoid amplitude must be >= 0 (got {amplitude})")
        if offset < amplitude:
            raise ConfigError(f"sinusoid offset {offset} < amplitude {amplitude} makes the drive negative")
        return SyntheticDrive("sinusoid", offset, amplitude, float(params["frequency"]),
                              float(params.get("phase", 0.0)))
    raise ConfigError(f"unknown synthetic drive kind {kind!r}")
