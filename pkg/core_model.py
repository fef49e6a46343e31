"""
Physical constants, particle description and mechanical mode bookkeeping.

Everything here is immutable once built, so instances can be shared freely
between worker threads.
"""

import math
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from errors import DomainError, require_non_negative, require_positive

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PhysConstants:
    """CODATA values at 6 significant digits, SI units."""

    G: float = 6.67430e-11
    k_B: float = 1.38065e-23
    hbar: float = 1.05457e-34
    mu0: float = 1.25664e-6
    Phi0: float = 2.06783e-15
    g_acc: float = 9.80665


CONSTANTS = PhysConstants()


def dipole_moment(remnant_magnetization: float, magnet_volume: float) -> float:
    """Magnetic moment (A·m²) of a uniformly magnetised volume, m = B_r·V/µ0."""
    require_non_negative(remnant_magnetization=remnant_magnetization,
                         magnet_volume=magnet_volume)
    return remnant_magnetization * magnet_volume / CONSTANTS.mu0


@dataclass(frozen=True)
class Particle:
    """Levitated magnet chain plus glass bead; the bead only adds mass."""

    total_mass: float = 0.43e-6
    magnet_edge: float = 0.25e-3
    magnet_count: int = 3
    bead_radius: float = 0.25e-3
    remnant_magnetization: float = 1.4

    def __post_init__(self):
        require_positive(total_mass=self.total_mass, magnet_edge=self.magnet_edge)
        require_non_negative(bead_radius=self.bead_radius,
                             remnant_magnetization=self.remnant_magnetization)
        if self.magnet_count < 1:
            raise DomainError(f"magnet_count must be >= 1, got {self.magnet_count}")

    @property
    def magnet_volume(self) -> float:
        return self.magnet_count * self.magnet_edge ** 3

    @property
    def dipole_moment(self) -> float:
        return dipole_moment(self.remnant_magnetization, self.magnet_volume)

    @property
    def weight(self) -> float:
        return self.total_mass * CONSTANTS.g_acc


@dataclass(frozen=True)
class OscillatorMode:
    """
    One mechanical resonance.

    q_factor = π·f·τ, damping_rate γ = 2/τ (amplitude decays as e^(-t/τ)),
    stiffness k = m·(2πf)². An infinite decay time gives the lossless mode.
    """

    frequency: float
    decay_time: float
    q_factor: float
    damping_rate: float
    stiffness: float
    effective_mass: float

    @property
    def angular_frequency(self) -> float:
        return 2 * math.pi * self.frequency

    @property
    def lossless(self) -> bool:
        return math.isinf(self.decay_time)

    @property
    def linewidth(self) -> float:
        """Full linewidth in Hz, f/Q = γ/2π."""
        return self.damping_rate / (2 * math.pi)

    @classmethod
    def from_quality_factor(cls, frequency: float, q_factor: float,
                            effective_mass: float) -> "OscillatorMode":
        require_positive(q_factor=q_factor, frequency=frequency)
        return derive_mode(frequency, q_factor / (math.pi * frequency), effective_mass)

    def to_dict(self) -> Dict[str, float]:
        return {
            "frequency_Hz": self.frequency,
            "decay_time_s": self.decay_time,
            "q_factor": self.q_factor,
            "damping_rate_per_s": self.damping_rate,
            "stiffness_N_per_m": self.stiffness,
            "effective_mass_kg": self.effective_mass,
        }


def derive_mode(frequency: float, decay_time: float, effective_mass: float) -> OscillatorMode:
    """Build a fully populated OscillatorMode from (f, τ, m)."""
    require_positive(frequency=frequency, decay_time=decay_time,
                     effective_mass=effective_mass)
    omega = 2 * math.pi * frequency
    if math.isinf(decay_time):
        q_factor, damping_rate = math.inf, 0.0
    else:
        q_factor = math.pi * frequency * decay_time
        damping_rate = 2.0 / decay_time
    return OscillatorMode(
        frequency=frequency,
        decay_time=decay_time,
        q_factor=q_factor,
        damping_rate=damping_rate,
        stiffness=effective_mass * omega ** 2,
        effective_mass=effective_mass,
    )


@dataclass(frozen=True)
class ModeEntry:
    frequency: float
    decay_time: float
    q_factor: float

    @property
    def computed_q(self) -> float:
        return math.pi * self.frequency * self.decay_time

    def relative_q_error(self) -> float:
        return abs(self.computed_q - self.q_factor) / self.q_factor


@dataclass(frozen=True)
class ModeTable:
    """Ordered (f, τ, Q) entries; Q is stored as given so tables stay verbatim."""

    entries: Tuple[ModeEntry, ...] = field(default_factory=tuple)

    def __post_init__(self):
        for entry in self.entries:
            require_positive(frequency=entry.frequency, decay_time=entry.decay_time,
                             q_factor=entry.q_factor)
        ordered = tuple(sorted(self.entries, key=lambda e: e.frequency))
        object.__setattr__(self, "entries", ordered)

    @classmethod
    def from_rows(cls, rows) -> "ModeTable":
        return cls(tuple(ModeEntry(float(f), float(tau), float(q)) for f, tau, q in rows))

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def check_consistency(self, tolerance: float = 0.01) -> List[ModeEntry]:
        """Entries whose stated Q differs from π·f·τ by more than `tolerance`."""
        flagged = [e for e in self.entries if e.relative_q_error() > tolerance]
        for entry in flagged:
            logger.warning(
                f"Mode {entry.frequency} Hz: stated Q={entry.q_factor:.3e} vs "
                f"pi*f*tau={entry.computed_q:.3e}")
        return flagged

    def modes(self, effective_mass: float) -> List[OscillatorMode]:
        return [derive_mode(e.frequency, e.decay_time, effective_mass) for e in self.entries]

    def find(self, frequency: float, tolerance: float = 0.5) -> Optional[ModeEntry]:
        """Entry closest to `frequency` within `tolerance` Hz."""
        if not self.entries:
            return None
        best = min(self.entries, key=lambda e: abs(e.frequency - frequency))
        return best if abs(best.frequency - frequency) <= tolerance else None

    def to_header(self) -> List[Dict[str, float]]:
        return [{"frequency_Hz": e.frequency, "decay_time_s": e.decay_time,
                 "q_factor": e.q_factor} for e in self.entries]

    @classmethod
    def from_header(cls, rows: List[Dict[str, float]]) -> "ModeTable":
        try:
            return cls.from_rows((r["frequency_Hz"], r["decay_time_s"], r["q_factor"])
                                 for r in rows)
        except (KeyError, TypeError) as e:
            raise DomainError(f"Malformed mode table entry: {e}") from e


# Tabulated resonator modes of the levitated particle: (f Hz, tau s, Q).
MEASURED_MODE_TABLE = ModeTable.from_rows([
    (15.9, 3.65e4, 1.82e6),
    (26.7, 1.09e5, 9.13e6),
    (40.6, 1.43e4, 1.82e6),
    (55.1, 3.37e4, 5.84e6),
    (129.0, 2.14e3, 8.70e5),
    (147.0, 1.52e3, 6.98e5),
])

# Quality factor quoted a second time for the 26.7 Hz mode.
ALTERNATE_Q_26_7_HZ = 9.06e6

MEASURED_PARTICLE = Particle()


def measured_mode(frequency: float = 26.7) -> OscillatorMode:
    """Mode from the tabulated values with the measured particle mass."""
    entry = MEASURED_MODE_TABLE.find(frequency)
    if entry is None:
        raise DomainError(f"No tabulated mode near {frequency} Hz")
    return derive_mode(entry.frequency, entry.decay_time, MEASURED_PARTICLE.total_mass)
