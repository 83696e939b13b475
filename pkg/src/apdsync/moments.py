"""
Second-order moment dynamics of two dissipative quantum harmonic oscillators
whose frequencies are modulated by a common classical drive.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from .controller import DriveSignal
from .errors import (BelowVacuumError, ConfigError, RangeError,
                     UnphysicalFrequencyError, UnphysicalMomentError)
from .integrator import IntegratorSettings, Trajectory, integrate

logger = logging.getLogger(__name__)

N1, N2, C12, A12, SQ1, SQ2 = range(6)
VACUUM_SIGMA = math.sqrt(0.5)

# exp(x) overflows doubles beyond ~709.78; the occupation there is below 1e-300
_MAX_EXPONENT = 700.0


@dataclass(frozen=True)
class PhysicalConstants:
    hbar: float = 1.054571817e-34
    k_B: float = 1.380649e-23


CODATA = PhysicalConstants()


@dataclass(frozen=True)
class OscillatorParams:
    """Omega, Gamma, g in rad/s (g per unit drive), T in kelvin."""

    Omega: float
    Gamma: float
    g: float
    T: float

    def __post_init__(self):
        problems = []
        if not self.Omega > 0:
            problems.append(f"Omega must be > 0 (got {self.Omega})")
        if not self.Gamma > 0:
            problems.append(f"Gamma must be > 0 (got {self.Gamma})")
        if not self.g >= 0:
            problems.append(f"g must be >= 0 (got {self.g})")
        if not self.T >= 0:
            problems.append(f"T must be >= 0 (got {self.T})")
        if problems:
            raise ConfigError(problems)

    def mismatched(self, delta_gamma: float, delta_g: float) -> "OscillatorParams":
        """Copy with Gamma*(1 - delta_gamma) and g*(1 - delta_g)."""
        return OscillatorParams(self.Omega, self.Gamma * (1.0 - delta_gamma), self.g * (1.0 - delta_g), self.T)


@dataclass(frozen=True)
class MomentState:
    n1: float = 0.0
    n2: float = 0.0
    c12: complex = 0j
    a12: complex = 0j
    sq1: complex = 0j
    sq2: complex = 0j

    def to_vector(self) -> np.ndarray:
        return np.array([self.n1, self.n2, self.c12, self.a12, self.sq1, self.sq2], dtype=complex)

    @classmethod
    def from_vector(cls, y) -> "MomentState":
        y = np.asarray(y, dtype=complex)
        return cls(float(y[N1].real), float(y[N2].real), complex(y[C12]), complex(y[A12]),
                   complex(y[SQ1]), complex(y[SQ2]))

    def is_physical(self) -> bool:
        return (
            self.n1 >= 0
            and self.n2 >= 0
            and abs(self.sq1) <= math.sqrt(self.n1 * (self.n1 + 1))
            and abs(self.sq2) <= math.sqrt(self.n2 * (self.n2 + 1))
            and abs(self.c12) ** 2 <= self.n1 * self.n2
        )


@dataclass(frozen=True)
class SigmaPair:
    sigma_x: float
    sigma_p: float


def effective_frequency(p: OscillatorParams, s) -> float:
    """Modified mechanical frequency Omega' = Omega + g*s."""
    if np.any(np.asarray(s) < 0):
        raise UnphysicalFrequencyError(f"drive value must be >= 0 (got {s})")
    omega = p.Omega + p.g * s
    if np.any(np.asarray(omega) <= 0):
        raise UnphysicalFrequencyError(f"effective frequency {omega} is not positive")
    return omega


def thermal_occupation(const: PhysicalConstants, Omega_prime: float, T: float) -> float:
    """Bose-Einstein occupation 1/(exp(hbar*Omega'/(k_B*T)) - 1); exactly 0 at T = 0."""
    if not Omega_prime > 0:
        raise UnphysicalFrequencyError(f"effective frequency {Omega_prime} is not positive")
    if T == 0:
        return 0.0
    x = const.hbar * Omega_prime / (const.k_B * T)
    if x > _MAX_EXPONENT:
        return 0.0
    return 1.0 / math.expm1(x)


def moments_rhs(m, Op1: float, Op2: float, p1: OscillatorParams, p2: OscillatorParams,
                nth1: float, nth2: float):
    """
    Time derivative of the six moments at fixed Omega'_1, Omega'_2 and
    thermal occupations. Accepts a MomentState or a length-6 vector and
    returns the same kind.
    """
    if isinstance(m, MomentState):
        return MomentState.from_vector(moments_rhs(m.to_vector(), Op1, Op2, p1, p2, nth1, nth2))

    y = np.asarray(m, dtype=complex)
    mean_decay = 0.5 * (p1.Gamma + p2.Gamma)
    dy = np.empty_like(y)
    dy[N1] = -p1.Gamma * y[N1] + p1.Gamma * nth1
    dy[N2] = -p2.Gamma * y[N2] + p2.Gamma * nth2
    dy[C12] = (-1j * (Op2 - Op1) - mean_decay) * y[C12]
    dy[A12] = (-1j * (Op1 + Op2) - mean_decay) * y[A12]
    dy[SQ1] = (-2j * Op1 - p1.Gamma) * y[SQ1]
    dy[SQ2] = (-2j * Op2 - p2.Gamma) * y[SQ2]
    return dy


def simulate_moments(m0: MomentState, drive: DriveSignal, p1: OscillatorParams, p2: OscillatorParams,
                     t_end: float, integ: IntegratorSettings,
                     const: PhysicalConstants = CODATA) -> Trajectory:
    """
    Integrate the moments from t = 0 to `t_end` under `drive`, re-evaluating
    the thermal occupations along Omega'_j(t) at every right-hand-side call.
    """
    if not m0.is_physical():
        raise UnphysicalMomentError(f"initial moments are not physical: {m0}")
    lo, hi = drive.t_range
    if lo > 0 or hi < t_end:
        raise RangeError(f"drive covers [{lo}, {hi}] but moments need [0, {t_end}]")

    def rhs(t, y):
        s1, s2 = drive(t)
        op1 = effective_frequency(p1, s1)
        op2 = effective_frequency(p2, s2)
        nth1 = thermal_occupation(const, op1, p1.T)
        nth2 = thermal_occupation(const, op2, p2.T)
        return moments_rhs(y, op1, op2, p1, p2, nth1, nth2)

    traj = integrate(rhs, m0.to_vector(), 0.0, t_end, integ)
    logger.debug("Moments done: %d samples", len(traj))
    return traj


def quadrature_deviations(n: np.ndarray, sq: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    rx = 0.5 + n + sq.real
    rp = 0.5 + n - sq.real
    if np.any(rx < 0) or np.any(rp < 0):
        raise UnphysicalMomentError("negative radicand in quadrature deviation; moments were initialized unphysically")
    return np.sqrt(rx), np.sqrt(rp)


def std_devs(m: MomentState) -> Tuple[SigmaPair, SigmaPair]:
    """Quadrature deviations (sigma_x, sigma_p) of both oscillators."""
    x1, p1 = quadrature_deviations(np.float64(m.n1), np.complex128(m.sq1))
    x2, p2 = quadrature_deviations(np.float64(m.n2), np.complex128(m.sq2))
    return SigmaPair(float(x1), float(p1)), SigmaPair(float(x2), float(p2))


def sigma_series(states: np.ndarray) -> Dict[str, np.ndarray]:
    """Vectorized std_devs over an (n, 6) array of moment vectors."""
    states = np.asarray(states)
    x1, p1 = quadrature_deviations(states[:, N1].real, states[:, SQ1])
    x2, p2 = quadrature_deviations(states[:, N2].real, states[:, SQ2])
    return {"sigma1_x": x1, "sigma1_p": p1, "sigma2_x": x2, "sigma2_p": p2}


def init_from_sigma(sigma_x0: float) -> Tuple[float, complex]:
    """Single-oscillator (n, <b^2>) with <b^2> = 0 reproducing sigma_x0."""
    if sigma_x0 < VACUUM_SIGMA:
        raise BelowVacuumError(f"sigma_x0={sigma_x0} is below the vacuum value sqrt(1/2)")
    return max(sigma_x0 * sigma_x0 - 0.5, 0.0), 0j


def initial_moments(sigma1_x0: float, sigma2_x0: float) -> MomentState:
    """Two-oscillator state with no squeezing and no cross-correlations."""
    n1, sq1 = init_from_sigma(sigma1_x0)
    n2, sq2 = init_from_sigma(sigma2_x0)
    return MomentState(n1=n1, n2=n2, sq1=sq1, sq2=sq2)


def physicality_violations(states: np.ndarray, tol: float = 1e-12) -> List[str]:
    """Describe samples breaking n >= 0 or the Heisenberg bound; empty if none."""
    states = np.asarray(states)
    problems = []
    for label, col in (("n1", N1), ("n2", N2)):
        bad = np.flatnonzero(states[:, col].real < -tol)
        if bad.size:
            problems.append(f"{label} < 0 at {bad.size} samples (first index {bad[0]})")
    try:
        sig = sigma_series(states)
    except UnphysicalMomentError as e:
        return problems + [str(e)]
    for j in (1, 2):
        prod = sig[f"sigma{j}_x"] * sig[f"sigma{j}_p"]
        bad = np.flatnonzero(prod < 0.5 - tol)
        if bad.size:
            problems.append(f"sigma{j}_x*sigma{j}_p < 1/2 at {bad.size} samples (first index {bad[0]})")
    return problems
