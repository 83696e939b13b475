import copy
import math
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from apdsync.config import ghz_to_rad_s  # noqa: E402
from apdsync.controller import ControllerParams  # noqa: E402
from apdsync.moments import OscillatorParams  # noqa: E402

CONFIG_DIR = Path(__file__).parent.parent / "config"

SQRT_1_5 = math.sqrt(1.5)
SQRT_10_5 = math.sqrt(10.5)

# Synthetic-drive scenario small enough to run in well under a second.
SYNTHETIC_DOCUMENT = {
    "units": "GHz_over_2pi",
    "label": "synthetic",
    "oscillators": {
        "osc1": {"Omega": 0.01, "Gamma": 0.1, "g": 1.0e-5, "T": 0.002},
        "osc2": {"Omega": 0.01, "Gamma": 0.1, "g": 1.0e-5, "T": 0.002},
    },
    "initial": {"sigma1_x": SQRT_1_5, "sigma2_x": SQRT_10_5},
    "drive": {"kind": "sinusoid", "offset": 200.0, "amplitude": 100.0, "frequency": 0.003},
    "run": {"t_end": 2.0e-7},
    "analysis": {"t0": 5.0e-8},
}


@pytest.fixture
def config_dir():
    return CONFIG_DIR


@pytest.fixture
def synthetic_document():
    return copy.deepcopy(SYNTHETIC_DOCUMENT)


@pytest.fixture
def caption_controller():
    """Orbit-figure controller at Delta_c/Omega_c = -0.95, in rad/s."""
    ghz = dict(Delta_c=-0.95, gamma_c=1.0, g_c=0.001, Gamma_c=0.001, Omega_c=1.0, eps_c=418.0,
               Delta_1=-0.02, Delta_2=-0.02, gamma_1=0.01, gamma_2=0.01, eps_1=0.0, eps_2=0.0)
    return ControllerParams(**{k: ghz_to_rad_s(v) for k, v in ghz.items()})


@pytest.fixture
def caption_oscillator():
    return OscillatorParams(Omega=ghz_to_rad_s(0.01), Gamma=ghz_to_rad_s(0.1), g=ghz_to_rad_s(1.0e-5), T=0.002)
