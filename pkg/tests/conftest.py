"""
Pytest configuration and shared fixtures for the levigrav test suite.

This module provides the published operating point (particle, mode, circuit,
wheel) as fixtures, plus an isolated output directory for command tests.
"""

import pytest
import sys
import os

# Add parent directory to path for imports
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from calibration import MEASURED_CIRCUIT, MEASURED_VOLTAGE_SENSITIVITY, calibrate
from core_model import MEASURED_PARTICLE, derive_mode, measured_mode
from gravity_source import Wheel
from suspension import Suspension


@pytest.fixture(scope='session')
def particle():
    """The levitated particle at the published operating point."""
    return MEASURED_PARTICLE


@pytest.fixture(scope='session')
def mode():
    """The 26.7 Hz science mode from the mode table."""
    return measured_mode(26.7)


@pytest.fixture(scope='session')
def fast_mode(particle):
    """A strongly damped 26.7 Hz mode that reaches equilibrium in seconds."""
    return derive_mode(26.7, 2.0, particle.total_mass)


@pytest.fixture(scope='session')
def circuit():
    """The published detection circuit."""
    return MEASURED_CIRCUIT


@pytest.fixture(scope='session')
def calibration(circuit, mode):
    """Calibration run backwards from the measured 0.16 MV/m."""
    return calibrate(circuit, mode, MEASURED_VOLTAGE_SENSITIVITY, 0.07)


@pytest.fixture(scope='session')
def wheel():
    """The default three-mass wheel 0.48 m below the particle."""
    return Wheel.with_standoff(0.48)


@pytest.fixture(scope='session')
def coarse_wheel():
    """Same wheel with each mass collapsed to a single point, for quick sweeps."""
    return Wheel.with_standoff(0.48, grid_level=0)


@pytest.fixture(scope='session')
def suspension():
    """Lossless 2.7 Hz platform suspension."""
    return Suspension()


@pytest.fixture
def output_dir(tmp_path, monkeypatch):
    """Route the default command output directory into a temporary path."""
    out = tmp_path / 'out'
    monkeypatch.setenv('LEVIGRAV_OUTPUT_DIR', str(out))
    return out


def pytest_configure(config):
    """Configure pytest with custom markers."""
    config.addinivalue_line(
        "markers", "slow: marks tests as slow (deselect with '-m \"not slow\"')"
    )
    config.addinivalue_line(
        "markers", "integration: marks tests as integration tests"
    )
    config.addinivalue_line(
        "markers", "unit: marks tests as unit tests"
    )
    config.addinivalue_line(
        "markers", "simulation: marks tests that synthesize traces"
    )
    config.addinivalue_line(
        "markers", "io: marks file format and command-line tests"
    )
