"""
Energy-coupling calibration of the SQUID readout.

A current in the pick-up circuit pushes on the particle with F = (dΦ/dx)·I, and
particle motion induces I = (dΦ/dx)·x/L_total back into the same circuit. Only
the combination β² = (dΦ/dx)²/(L_total·m·ω²) is observable: driving the mode on
resonance for a time T through the crosstalk current and comparing the induced
signal to the crosstalk gives β² = (I_induced/I_crosstalk)/Q_eff with Q_eff = π·f·T.
"""

import math
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from core_model import CONSTANTS, OscillatorMode
from errors import DomainError, require_non_negative, require_positive
from trace_synth import DemodTrace

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DetectionCircuit:
    l_pickup: float = 2.9e-7
    l_twisted_pair: float = 1e-7
    l_input: float = 4e-7
    l_calibration: float = 2e-9
    mutual_inductance_in_sq: float = CONSTANTS.Phi0 / 0.5e-6
    squid_gain: float = 0.43

    def __post_init__(self):
        require_non_negative(l_pickup=self.l_pickup, l_twisted_pair=self.l_twisted_pair,
                             l_input=self.l_input, l_calibration=self.l_calibration)
        require_positive(mutual_inductance_in_sq=self.mutual_inductance_in_sq,
                         squid_gain=self.squid_gain)
        if total_inductance(self) <= 0:
            raise DomainError("Detection circuit needs a non-zero total inductance")

    @property
    def volts_per_loop_flux(self) -> float:
        """SQUID output volts per weber threading the pick-up circuit."""
        return self.squid_gain / CONSTANTS.Phi0 * self.mutual_inductance_in_sq / total_inductance(self)


@dataclass(frozen=True)
class CalibrationResult:
    """
    One calibration of the readout chain.

    `relative_error` belongs to dV/dx, the factor that turns volts into metres;
    `flux_relative_error` belongs to dΦ/dx. β² goes as (dΦ/dx)² and carries
    twice the flux error.
    """

    beta_squared: float
    flux_sensitivity: float
    voltage_sensitivity: float
    relative_error: float = 0.0
    flux_relative_error: float = 0.0

    def __post_init__(self):
        require_non_negative(beta_squared=self.beta_squared,
                             flux_sensitivity=self.flux_sensitivity,
                             voltage_sensitivity=self.voltage_sensitivity,
                             relative_error=self.relative_error,
                             flux_relative_error=self.flux_relative_error)

    @property
    def beta_squared_relative_error(self) -> float:
        return 2 * self.flux_relative_error

    def to_header(self) -> Dict[str, float]:
        return {
            "beta_squared": self.beta_squared,
            "flux_sensitivity_Wb_per_m": self.flux_sensitivity,
            "voltage_sensitivity_V_per_m": self.voltage_sensitivity,
            "relative_error": self.relative_error,
            "flux_relative_error": self.flux_relative_error,
            "beta_squared_relative_error": self.beta_squared_relative_error,
        }

    @classmethod
    def from_header(cls, header: Dict[str, float]) -> "CalibrationResult":
        try:
            return cls(
                beta_squared=float(header["beta_squared"]),
                flux_sensitivity=float(header["flux_sensitivity_Wb_per_m"]),
                voltage_sensitivity=float(header["voltage_sensitivity_V_per_m"]),
                relative_error=float(header.get("relative_error", 0.0)),
                flux_relative_error=float(header.get("flux_relative_error",
                                                     header.get("relative_error", 0.0))),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DomainError(f"Malformed calibration header: {e}") from e


def total_inductance(circuit: DetectionCircuit) -> float:
    return circuit.l_pickup + circuit.l_twisted_pair + circuit.l_input + circuit.l_calibration


def beta_squared(induced_over_crosstalk: float, q_effective: float) -> float:
    require_positive(induced_over_crosstalk=induced_over_crosstalk, q_effective=q_effective)
    return induced_over_crosstalk / q_effective


def q_effective(frequency: float, drive_duration: float) -> float:
    require_positive(frequency=frequency, drive_duration=drive_duration)
    return math.pi * frequency * drive_duration


def flux_sensitivity(circuit: DetectionCircuit, mode: OscillatorMode,
                     beta_squared: float) -> float:
    """dΦ/dx (Wb/m) = sqrt(L_total·m·ω²·β²)."""
    require_non_negative(beta_squared=beta_squared)
    return math.sqrt(total_inductance(circuit) * mode.stiffness * beta_squared)


def flux_quanta_per_meter(flux_sensitivity: float) -> float:
    """Express a flux sensitivity in Φ0/m."""
    return flux_sensitivity / CONSTANTS.Phi0


def beta_squared_from_flux_sensitivity(circuit: DetectionCircuit, mode: OscillatorMode,
                                       flux_sensitivity: float) -> float:
    require_non_negative(flux_sensitivity=flux_sensitivity)
    return flux_sensitivity ** 2 / (total_inductance(circuit) * mode.stiffness)


def voltage_sensitivity(circuit: DetectionCircuit, flux_sensitivity: float) -> float:
    """dV/dx (V/m) = gain/Φ0 · M_in / L_total · dΦ/dx."""
    require_non_negative(flux_sensitivity=flux_sensitivity)
    return circuit.volts_per_loop_flux * flux_sensitivity


def flux_sensitivity_from_voltage(circuit: DetectionCircuit, voltage_sensitivity: float) -> float:
    require_non_negative(voltage_sensitivity=voltage_sensitivity)
    return voltage_sensitivity / circuit.volts_per_loop_flux


def crosstalk_voltage(circuit: DetectionCircuit, crosstalk_current: float) -> float:
    """SQUID output amplitude (V) from a current flowing through the input coil."""
    require_non_negative(crosstalk_current=crosstalk_current)
    return circuit.squid_gain * circuit.mutual_inductance_in_sq * crosstalk_current / CONSTANTS.Phi0


def ringup_ratio(trace: DemodTrace, crosstalk_voltage: float) -> Tuple[float, float]:
    """
    Induced-over-crosstalk ratio from a demodulated on-resonance ring-up in volts.

    The crosstalk is constant in the lock-in frame, so the induced amplitude is
    the change of the complex sample between the first settled sample and the
    last one; on resonance it grows in quadrature with the crosstalk. Returns
    (ratio, drive_duration).
    """
    require_positive(crosstalk_voltage=crosstalk_voltage)
    if trace.units != "V":
        raise DomainError(f"Ring-up trace must be in volts, got {trace.units!r}")
    start = trace.settle_samples
    if len(trace.samples) - start < 2:
        raise DomainError("Ring-up trace has fewer than two settled samples")
    induced = 2 * abs(trace.samples[-1] - trace.samples[start])
    duration = (len(trace.samples) - 1 - start) / trace.output_rate
    if induced <= 0:
        raise DomainError("Ring-up trace shows no induced signal")
    ratio = induced / crosstalk_voltage
    logger.info(f"Ring-up over {duration:.1f} s: induced/crosstalk={ratio:.4e}")
    return ratio, duration


def propagate_relative_error(*terms: float) -> float:
    """Independent relative errors added in quadrature."""
    require_non_negative(**{f"term_{i}": t for i, t in enumerate(terms)})
    return math.sqrt(sum(t ** 2 for t in terms))


def calibrate(circuit: DetectionCircuit, mode: OscillatorMode, voltage_sensitivity: float,
              relative_error: float = 0.0,
              circuit_relative_error: float = 0.0) -> CalibrationResult:
    """
    Run the chain backwards from a measured dV/dx.

    `relative_error` is the error of dV/dx; the circuit conversion to dΦ/dx
    adds `circuit_relative_error` in quadrature.
    """
    require_positive(voltage_sensitivity=voltage_sensitivity)
    flux = flux_sensitivity_from_voltage(circuit, voltage_sensitivity)
    beta2 = beta_squared_from_flux_sensitivity(circuit, mode, flux)
    logger.info(f"Calibration: dV/dx={voltage_sensitivity:.4e} V/m, "
                f"dPhi/dx={flux_quanta_per_meter(flux) * 1e-6:.2f} Phi0/um, beta^2={beta2:.3e}")
    return CalibrationResult(beta_squared=beta2, flux_sensitivity=flux,
                             voltage_sensitivity=voltage_sensitivity,
                             relative_error=relative_error,
                             flux_relative_error=propagate_relative_error(
                                 relative_error, circuit_relative_error))


def calibrate_from_ringup(circuit: DetectionCircuit, mode: OscillatorMode, trace: DemodTrace,
                          crosstalk_current: float, relative_error: float = 0.0,
                          circuit_relative_error: float = 0.0) -> CalibrationResult:
    """
    β² from a measured ring-up, then the forward chain to dΦ/dx and dV/dx.

    `relative_error` is the error of the resulting dΦ/dx; the circuit
    conversion to dV/dx adds `circuit_relative_error` in quadrature.
    """
    ratio, duration = ringup_ratio(trace, crosstalk_voltage(circuit, crosstalk_current))
    beta2 = beta_squared(ratio, q_effective(mode.frequency, duration))
    flux = flux_sensitivity(circuit, mode, beta2)
    return CalibrationResult(beta_squared=beta2, flux_sensitivity=flux,
                             voltage_sensitivity=voltage_sensitivity(circuit, flux),
                             relative_error=propagate_relative_error(relative_error,
                                                                     circuit_relative_error),
                             flux_relative_error=relative_error)


def zero_point_motion(mass: float, frequency: float, hbar: Optional[float] = None) -> float:
    """x_zpm = sqrt(ħ/(2·m·ω))."""
    require_positive(mass=mass, frequency=frequency)
    hbar = CONSTANTS.hbar if hbar is None else hbar
    require_non_negative(hbar=hbar)
    return math.sqrt(hbar / (2 * mass * 2 * math.pi * frequency))


def zero_point_flux_and_g0(flux_sensitivity: float, x_zpm: float,
                           lc_slope: float) -> Tuple[float, float]:
    """Zero-point flux in Φ0 and the single-phonon coupling g0 (Hz) for a readout slope in Hz/Φ0."""
    require_non_negative(flux_sensitivity=flux_sensitivity, x_zpm=x_zpm, lc_slope=lc_slope)
    flux = flux_sensitivity * x_zpm / CONSTANTS.Phi0
    return flux, lc_slope * flux


MEASURED_CIRCUIT = DetectionCircuit()
MEASURED_VOLTAGE_SENSITIVITY = 0.16e6
MEASURED_RELATIVE_ERROR = 0.07
MEASURED_LC_SLOPE = 1e9
