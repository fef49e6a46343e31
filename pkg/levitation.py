"""
Point dipole above an infinite superconducting plane.

The Meissner image of a horizontal dipole at height z sits at depth z below
the plane, giving a repulsive force F(z) = 3·µ0·m²/(32π·z⁴). Equilibrium is
where F balances the particle weight; linearising the z⁻⁴ law there gives
k_z = 4·W/z0 and f_z = sqrt(4·g/z0)/2π.
"""

import math
import logging
from dataclasses import dataclass
from typing import Callable

from scipy import optimize

from core_model import CONSTANTS, Particle
from errors import DomainError, NoEquilibriumError, require_non_negative, require_positive

logger = logging.getLogger(__name__)

DEFAULT_MAX_HEIGHT = 0.05
BISECT_XTOL = 1e-12


@dataclass(frozen=True)
class LevitationSolution:
    equilibrium_height: float
    z_frequency: float
    image_force_at_eq: float


def image_force(dipole_moment: float, height: float) -> float:
    """Upward image force (N) on a horizontal dipole at `height` above the plane."""
    require_positive(height=height)
    require_non_negative(dipole_moment=dipole_moment)
    return 3 * CONSTANTS.mu0 * dipole_moment ** 2 / (32 * math.pi * height ** 4)


def finite_difference_stiffness(force_law: Callable[[float], float], height: float,
                                relative_step: float = 1e-5) -> float:
    """k_z = -dF/dz by central difference."""
    h = relative_step * height
    return -(force_law(height + h) - force_law(height - h)) / (2 * h)


def solve_equilibrium_bisect(force_law: Callable[[float], float], weight: float,
                             max_height: float = DEFAULT_MAX_HEIGHT,
                             min_height: float = 1e-6) -> float:
    """Height where a monotonically decreasing force law equals `weight`."""
    def balance(z):
        return force_law(z) - weight

    if balance(max_height) > 0:
        raise NoEquilibriumError(
            f"Force still exceeds weight at max height {max_height} m")
    if balance(min_height) < 0:
        raise NoEquilibriumError(
            f"Force below weight already at {min_height} m; particle rests on the plane")
    return optimize.bisect(balance, min_height, max_height, xtol=BISECT_XTOL, maxiter=500)


def solve_levitation(particle: Particle,
                     max_height: float = DEFAULT_MAX_HEIGHT) -> LevitationSolution:
    """Equilibrium height and z-mode frequency from the quartic-root closed form."""
    weight = particle.weight
    moment = particle.dipole_moment
    if moment <= 0:
        raise NoEquilibriumError("Particle has no dipole moment; nothing levitates it")
    if weight <= 0:
        raise NoEquilibriumError("Weightless particle has no finite equilibrium")

    z0 = (3 * CONSTANTS.mu0 * moment ** 2 / (32 * math.pi * weight)) ** 0.25
    if not math.isfinite(z0) or z0 > max_height:
        raise NoEquilibriumError(
            f"Equilibrium height {z0:.3e} m is above the allowed {max_height} m")

    z_frequency = math.sqrt(4 * CONSTANTS.g_acc / z0) / (2 * math.pi)
    logger.info(f"Levitation equilibrium z0={z0:.4e} m, f_z={z_frequency:.3f} Hz")
    return LevitationSolution(
        equilibrium_height=z0,
        z_frequency=z_frequency,
        image_force_at_eq=image_force(moment, z0),
    )


def z_frequency_from_stiffness(particle: Particle, height: float) -> float:
    """f_z from the finite-difference stiffness of the image force and k = mω²."""
    if height <= 0:
        raise DomainError(f"height must be > 0, got {height}")
    k_z = finite_difference_stiffness(lambda z: image_force(particle.dipole_moment, z), height)
    return math.sqrt(k_z / particle.total_mass) / (2 * math.pi)
