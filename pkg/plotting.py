"""
SVG figures for command outputs. Presentation only; nothing here is checked
against the data it draws.
"""

import io
import logging
from pathlib import Path
from typing import Optional, Union

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from estimation import ExpFit
from force_pipeline import Spectrum, SpectrumKind
from gravity_source import SweepResult
from trace_io import atomic_write_bytes

plt.style.use('ggplot')
plt.rcParams['svg.hashsalt'] = 'levigrav'

logger = logging.getLogger(__name__)

Y_LABELS = {
    SpectrumKind.DISPLACEMENT: "Displacement ASD (m/√Hz)",
    SpectrumKind.FORCE: "Force ASD (N/√Hz)",
    SpectrumKind.RAW_VOLTS: "Voltage ASD (V/√Hz)",
}


def _save(fig, path: Union[str, Path]) -> Path:
    buffer = io.BytesIO()
    fig.savefig(buffer, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.info(f"Saved figure {path}")
    return atomic_write_bytes(path, buffer.getvalue())


def plot_spectrum(spectrum: Spectrum, path: Union[str, Path],
                  drive_frequency: Optional[float] = None) -> Path:
    fig = plt.figure(figsize=(7.2, 4.8), dpi=65)
    offsets = (spectrum.frequencies - spectrum.frequencies[len(spectrum.frequencies) // 2]) * 1e3
    plt.semilogy(offsets, np.maximum(spectrum.amplitude_density, 1e-300), color='#1F77B4',
                 label=spectrum.kind.value)
    if drive_frequency is not None:
        bin_index = spectrum.nearest_bin(drive_frequency)
        plt.semilogy(offsets[bin_index], spectrum.amplitude_density[bin_index], 'o',
                     color='#4B73B1', label='drive')
    plt.xlabel("Offset from centre (mHz)")
    plt.ylabel(Y_LABELS[spectrum.kind])
    plt.legend(loc=4)
    return _save(fig, path)


def plot_sweep(result: SweepResult, path: Union[str, Path]) -> Path:
    frame = result.to_frame()
    fig = plt.figure(figsize=(7.2, 4.8), dpi=65)
    x = frame["displacement_m"] * 100
    plt.fill_between(x, frame["envelope_low_N"] * 1e18, frame["envelope_high_N"] * 1e18,
                     color='#1F77B4', alpha=0.3, label='systematic envelope')
    plt.plot(x, frame["amplitude_N"] * 1e18, color='#4B73B1', label='nominal')
    plt.xlabel(f"{result.axis.value.capitalize()} position (cm)")
    plt.ylabel("Drive amplitude (aN)")
    plt.legend(loc=1)
    return _save(fig, path)


def plot_ringdown(times: np.ndarray, envelope: np.ndarray, fit: ExpFit,
                  path: Union[str, Path]) -> Path:
    fig = plt.figure(figsize=(7.2, 4.8), dpi=65)
    plt.plot(times, envelope, label='envelope', linestyle=':', color='#1F77B4')
    plt.plot(times, fit.amplitude * np.exp(-np.asarray(times) * fit.decay_rate),
             label=f'fit, tau={fit.decay_time:.4g} s', color='#4B73B1')
    plt.xlabel("Time (s)")
    plt.ylabel("Amplitude")
    plt.legend(loc=1)
    return _save(fig, path)
