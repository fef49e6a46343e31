"""
Response of the spring-suspended trap platform to the wheel's gravity.

The platform feels nearly the same gravitational pull as the particle. Driven
well above the suspension resonance it moves 180° out of phase, and since the
particle is measured relative to the trap, that motion eats into the
apparent drive.
"""

import cmath
import math
import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence

from errors import DomainError, SingularResponseError, require_non_negative, require_positive
from gravity_source import SourceMassCloud, Wheel, drive_component

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Suspension:
    platform_mass: float = 1.0
    resonance_frequency: float = 2.7
    quality_factor: float = math.inf

    def __post_init__(self):
        require_positive(platform_mass=self.platform_mass,
                         resonance_frequency=self.resonance_frequency,
                         quality_factor=self.quality_factor)


@dataclass(frozen=True)
class SuppressionReport:
    platform_phase: float
    residual_factor: complex
    effective_drive: complex

    @property
    def residual_magnitude(self) -> float:
        return abs(self.residual_factor)


def _denominator(drive_frequency: float, suspension: Suspension) -> complex:
    ws = 2 * math.pi * suspension.resonance_frequency
    w = 2 * math.pi * drive_frequency
    return complex(ws ** 2 - w ** 2, ws * w / suspension.quality_factor)


def platform_transmissibility(drive_frequency: float, suspension: Suspension) -> complex:
    """Platform displacement per unit force-per-mass, x/a = 1/(ωs² − ω² + i·ωs·ω/Q)."""
    require_positive(drive_frequency=drive_frequency)
    denominator = _denominator(drive_frequency, suspension)
    if denominator == 0:
        raise SingularResponseError(
            f"Lossless suspension driven on resonance at {drive_frequency} Hz")
    return 1 / denominator


def _trap_factor(drive_frequency: float, suspension: Suspension) -> complex:
    """Trap acceleration per unit platform drive: −ω²·T(ω)."""
    w = 2 * math.pi * drive_frequency
    return -w ** 2 * platform_transmissibility(drive_frequency, suspension)


def effective_drive(particle_accel: float, platform_accel: float, drive_frequency: float,
                    suspension: Suspension) -> SuppressionReport:
    """
    Drive on the particle relative to the trap:
    a_eff = a_p − a_t·ω²/(ω² − ωs² − i·ωs·ω/Q).
    """
    require_non_negative(particle_accel=particle_accel, platform_accel=platform_accel)
    transmissibility = platform_transmissibility(drive_frequency, suspension)
    a_eff = particle_accel - platform_accel * _trap_factor(drive_frequency, suspension)
    if particle_accel != 0:
        residual = a_eff / particle_accel
    else:
        residual = complex(math.nan, math.nan)
        logger.warning("Particle acceleration is zero; residual factor undefined")
    if suspension.quality_factor == math.inf:
        a_eff = complex(a_eff.real, 0.0)
        residual = complex(residual.real, 0.0)
    return SuppressionReport(
        platform_phase=cmath.phase(transmissibility),
        residual_factor=residual,
        effective_drive=a_eff,
    )


def coupling_ratio_for_residual(target: float, drive_frequency: float,
                                suspension: Suspension) -> float:
    """
    Ratio a_t/a_p whose lossless residual factor equals `target`, i.e.
    r = (1 − target)·(ω² − ωs²)/ω².
    """
    w2 = (2 * math.pi * drive_frequency) ** 2
    ws2 = (2 * math.pi * suspension.resonance_frequency) ** 2
    if w2 == ws2:
        raise SingularResponseError("Residual undefined on the suspension resonance")
    ratio = (1 - target) * (w2 - ws2) / w2
    logger.info(f"Residual {target} at {drive_frequency} Hz needs a_t/a_p={ratio:.4f} "
                f"(fs={suspension.resonance_frequency} Hz)")
    return ratio


def platform_acceleration(wheel: Wheel, centroid: Sequence[float],
                          mode_frequency: Optional[float] = None,
                          clouds: Optional[SourceMassCloud] = None) -> float:
    """
    Amplitude (m/s²) of the wheel's vertical gravitational pull at the platform
    centroid, i.e. the drive force on the platform divided by its mass.
    """
    if len(centroid) != 3:
        raise DomainError("centroid must be a 3-vector")
    shifted = replace(wheel, hub_position=tuple(
        h - c for h, c in zip(wheel.hub_position, centroid)))
    return drive_component(shifted, particle_mass=1.0, mode_frequency=mode_frequency,
                           clouds=clouds).amplitude
