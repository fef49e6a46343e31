"""
Demodulated trace -> calibrated displacement spectrum -> force spectrum -> force estimate.

Spectra are one-sided amplitude spectral densities of the real signal carried
by the complex envelope. With Z_k = FFT(z)/N and bin width b = 1/T,
ASD_k = sqrt(2/b)·|Z_k|, so a real tone of amplitude A that fills one bin
reads A/sqrt(2b) and Σ ASD²·b equals the mean square of the real signal.
"""

import math
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import signal

from calibration import CalibrationResult
from core_model import CONSTANTS, OscillatorMode
from errors import CalibrationMissingError, DomainError, require_non_negative, require_positive
from estimation import ExpFit, fit_exponential
from trace_synth import DemodTrace

logger = logging.getLogger(__name__)

MIN_RINGDOWN_SAMPLES = 100
DEFAULT_BAND = 8e-3


class SpectrumKind(Enum):
    DISPLACEMENT = "displacement"
    FORCE = "force"
    RAW_VOLTS = "raw-volts"


DENSITY_UNITS = {
    SpectrumKind.DISPLACEMENT: "m_per_rtHz",
    SpectrumKind.FORCE: "N_per_rtHz",
    SpectrumKind.RAW_VOLTS: "V_per_rtHz",
}


@dataclass(frozen=True, eq=False)
class Spectrum:
    frequencies: np.ndarray
    amplitude_density: np.ndarray
    kind: SpectrumKind
    bin_width: float
    coefficients: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if len(self.frequencies) != len(self.amplitude_density):
            raise DomainError("Spectrum frequencies and densities differ in length")
        if np.any(self.amplitude_density < 0):
            raise DomainError("Amplitude densities must be non-negative")

    def nearest_bin(self, frequency: float) -> int:
        return int(np.argmin(np.abs(self.frequencies - frequency)))

    def band_mask(self, center: float, width: float) -> np.ndarray:
        return np.abs(self.frequencies - center) <= width / 2

    def mean_square(self) -> float:
        """Σ ASD²·b, the mean square of the real signal."""
        return float(np.sum(self.amplitude_density ** 2) * self.bin_width)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "frequency_Hz": self.frequencies,
            f"density_{DENSITY_UNITS[self.kind]}": self.amplitude_density,
        })


@dataclass(frozen=True, eq=False)
class PipelineReport:
    ringdown_fit: ExpFit
    detuning_applied: float
    crop: Tuple[int, int]
    force_density_at_drive: float
    integrated_force: float
    mode_temperature: float
    force_noise_floor: float
    force_amplitude_at_drive: float
    x_rms: float
    band: float
    drive_frequency: float
    linewidth: float
    calibration_relative_error: float = 0.0
    displacement: Spectrum = field(repr=False, default=None)
    force: Spectrum = field(repr=False, default=None)

    def to_dict(self) -> Dict:
        fit = self.ringdown_fit
        return {
            "ringdown_fit": {
                "amplitude_m": fit.amplitude,
                "decay_time_s": fit.decay_time,
                "amplitude_stderr_m": fit.amplitude_stderr,
                "decay_time_stderr_s": fit.decay_time_stderr,
                "residual_rms_m": fit.residual_rms,
                "decaying": fit.decaying,
                "stderr_available": fit.stderr_available,
            },
            "detuning_applied_Hz": self.detuning_applied,
            "crop": {"start": self.crop[0], "length": self.crop[1]},
            "drive_frequency_Hz": self.drive_frequency,
            "band_Hz": self.band,
            "linewidth_Hz": self.linewidth,
            "force_density_at_drive_N_per_rtHz": self.force_density_at_drive,
            "force_amplitude_at_drive_N": self.force_amplitude_at_drive,
            "integrated_force_N": self.integrated_force,
            "force_noise_floor_N_per_rtHz": self.force_noise_floor,
            "x_rms_m": self.x_rms,
            "mode_temperature_K": self.mode_temperature,
            "calibration_relative_error": self.calibration_relative_error,
            "force_amplitude_at_drive_stderr_N": self.force_amplitude_at_drive_stderr,
            "integrated_force_stderr_N": self.integrated_force_stderr,
            "mode_temperature_stderr_K": self.mode_temperature_stderr,
        }

    @property
    def force_amplitude_at_drive_stderr(self) -> float:
        return self.force_amplitude_at_drive * self.calibration_relative_error

    @property
    def integrated_force_stderr(self) -> float:
        return self.integrated_force * self.calibration_relative_error

    @property
    def mode_temperature_stderr(self) -> float:
        """T goes as x², so it carries twice the calibration error."""
        return 2 * self.mode_temperature * self.calibration_relative_error


def _relative_times(trace: DemodTrace) -> np.ndarray:
    return np.arange(len(trace.samples)) / trace.output_rate


def subtract_ringdown(trace: DemodTrace) -> Tuple[DemodTrace, ExpFit]:
    """
    Remove one exponentially decaying coherent component.

    The decay rate comes from an exponential fit to |z|; the complex amplitude
    of e^(−t/τ) is then the least-squares projection of z onto it, so magnitude
    and phase are taken jointly. A non-decaying fit subtracts nothing.
    """
    z = trace.samples
    if len(z) < MIN_RINGDOWN_SAMPLES:
        raise DomainError(f"Ringdown subtraction needs at least {MIN_RINGDOWN_SAMPLES} samples, "
                          f"got {len(z)}")
    t = _relative_times(trace)
    magnitude = np.abs(z)
    if not np.any(magnitude > 0):
        fit = ExpFit(amplitude=0.0, decay_time=math.inf, amplitude_stderr=math.nan,
                     decay_time_stderr=math.nan, residual_rms=0.0, decaying=False,
                     stderr_available=False)
        logger.warning("Zero trace; nothing to subtract")
        return trace, fit

    fit = fit_exponential(t, magnitude)
    if not fit.decaying:
        return trace, fit
    envelope = np.exp(-t / fit.decay_time)
    coherent = np.sum(z * envelope) / np.sum(envelope ** 2)
    logger.info(f"Subtracted ringdown |A|={abs(coherent):.3e}, tau={fit.decay_time:.4e} s")
    return trace.with_samples(z - coherent * envelope), fit


def recenter(trace: DemodTrace, detuning: float) -> DemodTrace:
    """
    Shift the spectrum by −detuning, moving the lock-in frame to f_c + detuning.
    """
    if not abs(detuning) < trace.output_rate / 2:
        raise DomainError(f"|detuning| must be below {trace.output_rate / 2} Hz, got {detuning}")
    if detuning == 0:
        return trace
    rotation = np.exp(-2j * math.pi * detuning * trace.times)
    return trace.with_samples(trace.samples * rotation,
                              center_frequency=trace.center_frequency + detuning)


def crop_integer_cycles(trace: DemodTrace, reference_frequency: float) -> DemodTrace:
    """Longest prefix spanning a whole number of reference cycles."""
    require_positive(reference_frequency=reference_frequency)
    cycles = math.floor(trace.duration * reference_frequency + 1e-9)
    if cycles < 1:
        raise DomainError(f"Trace of {trace.duration} s spans less than one "
                          f"{reference_frequency} Hz cycle")
    keep = min(len(trace.samples), int(round(cycles / reference_frequency * trace.output_rate)))
    return trace.with_samples(trace.samples[:keep])


def _spectrum(samples: np.ndarray, trace: DemodTrace, kind: SpectrumKind,
              windowed: bool = False) -> Spectrum:
    n = len(samples)
    if n == 0:
        raise DomainError("Cannot take the spectrum of an empty trace")
    if windowed:
        window = signal.get_window("hann", n)
        samples = samples * window / np.mean(window)
    bin_width = trace.output_rate / n
    coefficients = np.fft.fftshift(np.fft.fft(samples)) / n
    offsets = np.fft.fftshift(np.fft.fftfreq(n, d=1 / trace.output_rate))
    return Spectrum(frequencies=trace.center_frequency + offsets,
                    amplitude_density=np.sqrt(2 / bin_width) * np.abs(coefficients),
                    kind=kind, bin_width=bin_width, coefficients=coefficients)


def _voltage_sensitivity(trace: DemodTrace, calibration: Optional[CalibrationResult]) -> float:
    if calibration is not None:
        return calibration.voltage_sensitivity
    tag = trace.calibration_tag or {}
    if "voltage_sensitivity_V_per_m" in tag:
        return float(tag["voltage_sensitivity_V_per_m"])
    raise CalibrationMissingError("Trace is in volts but carries no calibration; "
                                  "pass a CalibrationResult")


def calibration_relative_error(trace: DemodTrace,
                               calibration: Optional[CalibrationResult] = None) -> float:
    """Relative error the volts-to-metres conversion puts on every displacement and force."""
    if trace.units != "V" or calibration is None:
        return 0.0
    return calibration.relative_error


def to_displacement(trace: DemodTrace,
                    calibration: Optional[CalibrationResult] = None) -> DemodTrace:
    """Trace in metres, converting volts with dV/dx when needed."""
    if trace.units == "m":
        return trace
    if trace.units != "V":
        raise CalibrationMissingError(f"Cannot convert {trace.units!r} samples to displacement")
    sensitivity = _voltage_sensitivity(trace, calibration)
    require_positive(voltage_sensitivity=sensitivity)
    return trace.with_samples(trace.samples / sensitivity, units="m")


def spectrum(trace: DemodTrace, windowed: bool = False) -> Spectrum:
    """Uncalibrated spectrum in the trace's own units."""
    kind = SpectrumKind.DISPLACEMENT if trace.units == "m" else SpectrumKind.RAW_VOLTS
    return _spectrum(trace.samples, trace, kind, windowed)


def displacement_spectrum(trace: DemodTrace, calibration: Optional[CalibrationResult] = None,
                          windowed: bool = False) -> Spectrum:
    metres = to_displacement(trace, calibration)
    return _spectrum(metres.samples, metres, SpectrumKind.DISPLACEMENT, windowed)


def transfer_function(frequencies: np.ndarray, mode: OscillatorMode) -> np.ndarray:
    """H(f) = ω0²/(ω0² − ω² + iγω); |H(0)| = 1 and |H(f0)| = Q."""
    w0 = mode.angular_frequency
    w = 2 * math.pi * np.asarray(frequencies, dtype=float)
    return w0 ** 2 / (w0 ** 2 - w ** 2 + 1j * mode.damping_rate * w)


def force_spectrum(spec: Spectrum, mode: OscillatorMode) -> Spectrum:
    if spec.kind is not SpectrumKind.DISPLACEMENT:
        raise DomainError(f"force_spectrum needs a displacement spectrum, got {spec.kind.value}")
    h = transfer_function(spec.frequencies, mode)
    coefficients = None
    if spec.coefficients is not None:
        coefficients = spec.coefficients * mode.stiffness / h
    return Spectrum(frequencies=spec.frequencies,
                    amplitude_density=spec.amplitude_density * mode.stiffness / np.abs(h),
                    kind=SpectrumKind.FORCE, bin_width=spec.bin_width,
                    coefficients=coefficients)


def mode_temperature(x_rms: float, mode: OscillatorMode) -> float:
    """T_mode = k·x_rms²/k_B."""
    require_non_negative(x_rms=x_rms)
    return mode.stiffness * x_rms ** 2 / CONSTANTS.k_B


def trap_displacement_noise(force_density: float, mode: OscillatorMode) -> float:
    """Static-equivalent displacement density (m/√Hz) of a force density: F/k."""
    require_non_negative(force_density=force_density)
    return force_density / mode.stiffness


def _rms_displacement(trace: DemodTrace) -> float:
    return math.sqrt(2 * float(np.mean(np.abs(trace.samples) ** 2)))


def run_pipeline(trace: DemodTrace, mode: OscillatorMode,
                 calibration: Optional[CalibrationResult] = None,
                 reference_frequency: Optional[float] = None, detuning: float = 0.0,
                 band: float = DEFAULT_BAND, windowed: bool = False) -> PipelineReport:
    """
    subtract_ringdown -> recenter -> crop_integer_cycles -> displacement_spectrum
    -> force_spectrum, reading the drive at f_c + detuning.

    The reference frequency defaults to |detuning|, the beat of the drive in the
    lock-in frame. The mode temperature uses the calibrated trace before the
    ringdown subtraction.
    """
    require_positive(band=band)
    metres = to_displacement(trace, calibration)
    if metres.settle_samples:
        metres = metres.with_samples(metres.samples[metres.settle_samples:], settle_samples=0,
                                     start_time=metres.start_time
                                     + metres.settle_samples / metres.output_rate)
    x_rms = _rms_displacement(metres)
    temperature = mode_temperature(x_rms, mode)

    residual, fit = subtract_ringdown(metres)
    shifted = recenter(residual, detuning)
    reference = reference_frequency if reference_frequency is not None else abs(detuning)
    cropped = crop_integer_cycles(shifted, reference) if reference > 0 else shifted

    displacement = displacement_spectrum(cropped, windowed=windowed)
    force = force_spectrum(displacement, mode)

    drive_frequency = trace.center_frequency + detuning
    drive_bin = force.nearest_bin(drive_frequency)
    in_band = force.band_mask(drive_frequency, band)
    if not in_band.any():
        raise DomainError(f"Band {band} Hz holds no bins of width {force.bin_width:.3e} Hz")
    density_at_drive = float(force.amplitude_density[drive_bin])
    integrated = math.sqrt(2 * float(np.sum(force.amplitude_density[in_band] ** 2)) * force.bin_width)
    noise_bins = in_band.copy()
    noise_bins[drive_bin] = False
    floor = (math.sqrt(float(np.mean(force.amplitude_density[noise_bins] ** 2)))
             if noise_bins.any() else 0.0)

    report = PipelineReport(
        ringdown_fit=fit,
        detuning_applied=detuning,
        crop=(trace.settle_samples, len(cropped.samples)),
        force_density_at_drive=density_at_drive,
        integrated_force=integrated,
        mode_temperature=temperature,
        force_noise_floor=floor,
        force_amplitude_at_drive=density_at_drive * math.sqrt(2 * force.bin_width),
        x_rms=x_rms,
        band=band,
        drive_frequency=drive_frequency,
        linewidth=mode.linewidth,
        calibration_relative_error=calibration_relative_error(trace, calibration),
        displacement=displacement,
        force=force,
    )
    logger.info(f"Pipeline: F_drive={report.force_amplitude_at_drive:.3e} N, "
                f"F_band={integrated:.3e} N over {band * 1e3:.1f} mHz, "
                f"floor={floor:.3e} N/rtHz, T_mode={temperature:.3g} K")
    return report
