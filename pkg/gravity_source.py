"""
Newtonian gravity of the rotating mass wheel on the levitated particle.

Coordinates: particle at the origin, x longitudinal, y lateral, z vertical
(up). Each brass mass is a cylinder decomposed into equal point masses; the
wheel carries `mass_count` of them equally spaced on its rim. Wheel phase
zero puts mass 0 at the top of the rim, closest to the particle.
"""

import math
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core_model import CONSTANTS, MEASURED_PARTICLE
from errors import ConvergenceError, DomainError, require_non_negative, require_positive
from settings import thread_count

logger = logging.getLogger(__name__)

GUARD_RADIUS = 1e-3
QUADRATURE_NODES = 1024
QUADRATURE_MAX_NODES = 65536
QUADRATURE_RTOL = 1e-4
PHASE_CHUNK = 256

BRASS_DENSITY = 8500.0
LONGITUDINAL_SYSTEMATICS = (0.05, 0.03, 0.04)
VERTICAL_SYSTEMATICS = (0.02, 0.02, 0.02)


class SweepAxis(Enum):
    LONGITUDINAL = "longitudinal"
    VERTICAL = "vertical"


@dataclass(frozen=True)
class CylinderShape:
    radius: float = 0.042
    height: float = 0.05

    def nominal_mass(self, density: float = BRASS_DENSITY) -> float:
        return density * math.pi * self.radius ** 2 * self.height


def cylinder_shape(radius: float = 0.042, height: float = 0.05, density: float = BRASS_DENSITY,
                   target_mass: Optional[float] = None) -> CylinderShape:
    """Cylinder of the given proportions, scaled uniformly to weigh `target_mass` if set."""
    require_positive(radius=radius, height=height, density=density)
    shape = CylinderShape(radius=radius, height=height)
    if target_mass is None:
        return shape
    require_positive(target_mass=target_mass)
    scale = (target_mass / shape.nominal_mass(density)) ** (1 / 3)
    return CylinderShape(radius=radius * scale, height=height * scale)


@dataclass(frozen=True, eq=False)
class SourceMassCloud:
    """Point masses with offsets from the body centre in the body frame.

    Body frame: x radial on the wheel, y tangential, z along the wheel axle.
    """

    masses: np.ndarray
    offsets: np.ndarray

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.masses))

    def __len__(self) -> int:
        return len(self.masses)


def decompose(body_mass: float, body_shape: CylinderShape = CylinderShape(),
              grid_level: int = 2) -> SourceMassCloud:
    """
    Split a uniform cylinder into point masses by octree refinement.

    Level L divides the bounding box into 8**L cells and keeps the cells whose
    centre lies inside the cylinder; each kept cell carries an equal share of
    `body_mass`. Level 0 is a single point at the centre.
    """
    require_non_negative(body_mass=body_mass)
    require_positive(radius=body_shape.radius, height=body_shape.height)
    if grid_level < 0:
        raise DomainError(f"grid_level must be >= 0, got {grid_level}")

    cells = 2 ** grid_level
    across = (np.arange(cells) + 0.5) / cells - 0.5
    x = across * 2 * body_shape.radius
    z = across * body_shape.height
    gx, gy, gz = np.meshgrid(x, x, z, indexing="ij")
    inside = gx ** 2 + gy ** 2 <= body_shape.radius ** 2
    offsets = np.column_stack([gx[inside], gy[inside], gz[inside]])
    masses = np.full(len(offsets), body_mass / len(offsets))
    return SourceMassCloud(masses=masses, offsets=offsets)


def plane_basis(normal: Sequence[float]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(e1, e2, n) spanning the wheel plane; e2 points as close to up as possible."""
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    up = np.array([0.0, 0.0, 1.0])
    e2 = up - np.dot(up, n) * n
    if np.linalg.norm(e2) < 1e-9:
        e1 = np.array([1.0, 0.0, 0.0]) - n[0] * n
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(n, e1)
    else:
        e2 /= np.linalg.norm(e2)
        e1 = np.cross(e2, n)
    return e1, e2, n


@dataclass(frozen=True)
class Wheel:
    mass_count: int = 3
    mass_each: float = 2.45
    rim_radius: float = 0.25
    plane_normal: Tuple[float, float, float] = (1.0, 0.0, 0.0)
    rotation_frequency: float = 26.7 / 3
    hub_position: Tuple[float, float, float] = (0.0, 0.0, -0.73)
    initial_phase: float = 0.0
    mass_shape: CylinderShape = field(default_factory=CylinderShape)
    grid_level: int = 2

    def __post_init__(self):
        if self.mass_count < 1:
            raise DomainError(f"mass_count must be >= 1, got {self.mass_count}")
        require_positive(mass_each=self.mass_each, rim_radius=self.rim_radius,
                         rotation_frequency=self.rotation_frequency)
        norm = math.sqrt(sum(c * c for c in self.plane_normal))
        if abs(norm - 1.0) > 1e-9:
            raise DomainError(f"plane_normal must be unit length, |n|={norm}")

    @classmethod
    def with_standoff(cls, standoff: float = 0.48, rim_radius: float = 0.25,
                      longitudinal: float = 0.0, lateral: float = 0.0, **kwargs) -> "Wheel":
        """Wheel whose top-of-rim mass passes `standoff` metres below the particle."""
        require_positive(standoff=standoff)
        hub = (longitudinal, lateral, -(standoff + rim_radius))
        return cls(rim_radius=rim_radius, hub_position=hub, **kwargs)

    @property
    def standoff(self) -> float:
        return -self.hub_position[2] - self.rim_radius

    @property
    def signal_frequency(self) -> float:
        return self.mass_count * self.rotation_frequency

    def basis(self):
        return plane_basis(self.plane_normal)

    def cloud(self) -> SourceMassCloud:
        return decompose(self.mass_each, self.mass_shape, self.grid_level)

    def displaced(self, offset: Sequence[float]) -> "Wheel":
        hub = tuple(float(h + d) for h, d in zip(self.hub_position, offset))
        return replace(self, hub_position=hub)


@dataclass(frozen=True)
class DriveComponent:
    """
    Fourier component of F_z(t) at n·f_rot:
    F_z(t) ≈ mean_force + amplitude·cos(2π·n·f_rot·t + drive_phase).
    """

    amplitude: float
    phase_of_max_force: float
    drive_phase: float
    mass_count: int
    frequency: float
    mean_force: float
    vector_coefficients: Tuple[complex, complex, complex]
    nodes: int

    @property
    def signal_phase(self) -> float:
        """Wheel angle of maximal force times n, reduced mod 2π."""
        return (self.mass_count * self.phase_of_max_force) % (2 * math.pi)


@dataclass(frozen=True)
class SweepRow:
    displacement: float
    amplitude: float
    phase: float
    envelope_low: float
    envelope_high: float


@dataclass(frozen=True)
class SweepResult:
    axis: SweepAxis
    rows: Tuple[SweepRow, ...]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(r.displacement, r.amplitude, r.phase, r.envelope_low, r.envelope_high)
             for r in self.rows],
            columns=["displacement_m", "amplitude_N", "phase_rad",
                     "envelope_low_N", "envelope_high_N"])

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([r.amplitude for r in self.rows])


def point_mass_force(positions: np.ndarray, masses: np.ndarray,
                     particle_mass: float = MEASURED_PARTICLE.total_mass) -> np.ndarray:
    """Force on a particle at the origin from point masses, summed over the last axis."""
    positions = np.asarray(positions, dtype=float)
    distance = np.linalg.norm(positions, axis=-1)
    if distance.size and distance.min() <= GUARD_RADIUS:
        raise DomainError(
            f"Source point within {GUARD_RADIUS} m of the particle "
            f"(closest {distance.min():.3e} m)")
    weight = CONSTANTS.G * particle_mass * np.asarray(masses) / distance ** 3
    return np.sum(weight[..., None] * positions, axis=-2)


def _source_points(wheel: Wheel, cloud: SourceMassCloud, phases: np.ndarray) -> np.ndarray:
    """World positions, shape (phases, masses, points, 3)."""
    e1, e2, n = wheel.basis()
    k = np.arange(wheel.mass_count)
    alpha = (phases[:, None] + wheel.initial_phase
             + 2 * np.pi * k[None, :] / wheel.mass_count)
    s, c = np.sin(alpha)[..., None], np.cos(alpha)[..., None]
    radial = s * e1 + c * e2
    tangential = c * e1 - s * e2
    centers = np.asarray(wheel.hub_position) + wheel.rim_radius * radial
    o = cloud.offsets
    return (centers[:, :, None, :]
            + o[None, None, :, 0, None] * radial[:, :, None, :]
            + o[None, None, :, 1, None] * tangential[:, :, None, :]
            + o[None, None, :, 2, None] * n)


def force_series(wheel: Wheel, cloud: SourceMassCloud, phases: Sequence[float],
                 particle_mass: float = MEASURED_PARTICLE.total_mass) -> np.ndarray:
    """Force 3-vectors (N) for each wheel phase, shape (len(phases), 3)."""
    phases = np.atleast_1d(np.asarray(phases, dtype=float))
    out = np.empty((len(phases), 3))
    for start in range(0, len(phases), PHASE_CHUNK):
        chunk = phases[start:start + PHASE_CHUNK]
        points = _source_points(wheel, cloud, chunk)
        flat = points.reshape(len(chunk), -1, 3)
        masses = np.tile(cloud.masses, wheel.mass_count)
        out[start:start + len(chunk)] = point_mass_force(flat, masses, particle_mass)
    return out


def force_at(wheel: Wheel, clouds: SourceMassCloud, wheel_phase: float,
             particle_mass: float = MEASURED_PARTICLE.total_mass) -> np.ndarray:
    """F = Σ G·M_i·m·r̂_i/r_i² on the particle at one wheel phase."""
    return force_series(wheel, clouds, [wheel_phase], particle_mass)[0]


def time_series(wheel: Wheel, clouds: SourceMassCloud,
                particle_mass: float = MEASURED_PARTICLE.total_mass,
                samples: int = 4096) -> Tuple[np.ndarray, np.ndarray]:
    """(times, forces) over one full rotation, sampled uniformly."""
    times = np.arange(samples) / (samples * wheel.rotation_frequency)
    phases = 2 * np.pi * wheel.rotation_frequency * times
    return times, force_series(wheel, clouds, phases, particle_mass)


def _harmonic(wheel, clouds, particle_mass, nodes):
    phases = 2 * np.pi * np.arange(nodes) / nodes
    forces = force_series(wheel, clouds, phases, particle_mass)
    kernel = np.exp(-1j * wheel.mass_count * phases)
    coefficients = 2.0 * (kernel @ forces) / nodes
    return coefficients, float(np.mean(forces[:, 2]))


def drive_component(wheel: Wheel, particle_mass: float = MEASURED_PARTICLE.total_mass,
                    mode_frequency: Optional[float] = None,
                    clouds: Optional[SourceMassCloud] = None) -> DriveComponent:
    """
    Amplitude and phase of the z-force at n·f_rot by periodic trapezoid
    quadrature over one rotation, doubling nodes until the amplitude settles.
    """
    if mode_frequency is not None:
        require_positive(mode_frequency=mode_frequency)
        wheel = replace(wheel, rotation_frequency=mode_frequency / wheel.mass_count)
    if clouds is None:
        clouds = wheel.cloud()

    nodes = QUADRATURE_NODES
    coefficients, mean_force = _harmonic(wheel, clouds, particle_mass, nodes)
    while True:
        refined, mean_force = _harmonic(wheel, clouds, particle_mass, 2 * nodes)
        nodes *= 2
        previous, current = abs(coefficients[2]), abs(refined[2])
        scale = max(current, 1e-6 * abs(mean_force))
        coefficients = refined
        if abs(current - previous) <= QUADRATURE_RTOL * scale:
            break
        if nodes >= QUADRATURE_MAX_NODES:
            raise ConvergenceError(
                f"Drive quadrature not converged at {nodes} nodes "
                f"({previous:.4e} vs {current:.4e} N)")

    cz = coefficients[2]
    n = wheel.mass_count
    drive_phase = float(np.angle(cz)) % (2 * math.pi)
    frame_phase = (drive_phase - n * wheel.initial_phase) % (2 * math.pi)
    phase_of_max = ((-frame_phase) % (2 * math.pi)) / n
    return DriveComponent(
        amplitude=float(abs(cz)),
        phase_of_max_force=phase_of_max % (2 * math.pi / n),
        drive_phase=drive_phase,
        mass_count=n,
        frequency=wheel.signal_frequency,
        mean_force=mean_force,
        vector_coefficients=tuple(complex(c) for c in coefficients),
        nodes=nodes,
    )


def _positioned(wheel: Wheel, axis: SweepAxis, position: float) -> Wheel:
    hub = list(wheel.hub_position)
    if axis is SweepAxis.LONGITUDINAL:
        hub[0] = position
    else:
        require_positive(standoff=position)
        hub[2] = -(position + wheel.rim_radius)
    return replace(wheel, hub_position=tuple(hub))


def _corners(systematics: Sequence[float]) -> List[Tuple[float, float, float]]:
    sx, sy, sz = systematics
    return [(a * sx, b * sy, c * sz) for a in (-1, 1) for b in (-1, 1) for c in (-1, 1)]


def sweep(wheel: Wheel, axis: SweepAxis, positions: Sequence[float],
          systematics: Sequence[float] = (0.0, 0.0, 0.0),
          particle_mass: float = MEASURED_PARTICLE.total_mass,
          mode_frequency: Optional[float] = None,
          threads: Optional[int] = None) -> SweepResult:
    """
    Nominal drive plus the min/max amplitude over the 8 corners of the
    systematics box at each position.

    Longitudinal positions set the hub x offset; vertical positions are
    standoffs (particle to top-of-rim mass).
    """
    axis = SweepAxis(axis)
    positions = [float(p) for p in positions]
    if not positions:
        raise DomainError("sweep needs at least one position")
    clouds = wheel.cloud()
    corners = _corners(systematics)

    def evaluate(position: float) -> SweepRow:
        placed = _positioned(wheel, axis, position)
        nominal = drive_component(placed, particle_mass, mode_frequency, clouds)
        amplitudes = [nominal.amplitude]
        amplitudes += [drive_component(placed.displaced(c), particle_mass, mode_frequency,
                                       clouds).amplitude for c in corners]
        return SweepRow(
            displacement=position,
            amplitude=nominal.amplitude,
            phase=nominal.signal_phase,
            envelope_low=min(amplitudes),
            envelope_high=max(amplitudes),
        )

    workers = threads if threads is not None else thread_count()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        rows = tuple(pool.map(evaluate, positions))
    logger.info(f"Swept {len(rows)} {axis.value} positions, "
                f"amplitude {min(r.amplitude for r in rows):.3e}.."
                f"{max(r.amplitude for r in rows):.3e} N")
    return SweepResult(axis=axis, rows=rows)
