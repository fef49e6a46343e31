"""
Synthetic detector timetraces.

The mode obeys m·x'' = −k·x − (2m/τ)·x' − ξ·x³ + ΣF_drive(t) + F_noise(t).
Two generators are provided:

  simulate              carrier-level samples at `sample_rate`, kick-then-drift
                        stepping with the exact damped propagator between kicks
  simulate_demodulated  exact rotating-frame discretisation at a lock-in output
                        rate, for records many hours long

Noise comes from counter-based Philox streams keyed by (seed, chunk), so the
samples do not depend on how many threads generate them.
"""

import math
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Optional, Tuple, Union

import numpy as np
from scipy import signal

from core_model import CONSTANTS, OscillatorMode
from errors import (AliasingError, DomainError, IntegratorStabilityError,
                    require_non_negative, require_positive)
from settings import thread_count

logger = logging.getLogger(__name__)

MIN_SAMPLES_PER_CYCLE = 20
NOISE_CHUNK = 1 << 18
CIC_ORDER = 4
MIN_FIR_DECIMATION = 16
FIR_ZERO_CROSSINGS = 16
KAISER_BETA = 7.0
MAX_OUTPUT_FRACTION = 1.0 / 160.0
SEED_LIMIT = 1 << 64


class InitialState(Enum):
    REST = "rest"
    THERMAL = "thermal"
    STEADY = "steady"


@dataclass(frozen=True)
class DriveTone:
    amplitude: float
    frequency: float
    phase: float = 0.0


@dataclass(frozen=True)
class SimConfig:
    mode: OscillatorMode
    duffing_coefficient: float = 0.0
    noise_temperature: float = 0.0
    drive: Tuple[DriveTone, ...] = ()
    sample_rate: float = 1000.0
    seed: int = 0
    excess_force_noise: float = 0.0
    initial_state: InitialState = InitialState.REST
    initial_displacement: float = 0.0

    def __post_init__(self):
        require_non_negative(noise_temperature=self.noise_temperature,
                             excess_force_noise=self.excess_force_noise)
        require_positive(sample_rate=self.sample_rate)
        if not 0 <= self.seed < SEED_LIMIT:
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        object.__setattr__(self, "drive", tuple(self.drive))
        object.__setattr__(self, "initial_state", InitialState(self.initial_state))

    @property
    def force_psd(self) -> float:
        """One-sided white force PSD (N²/Hz): thermal 4·k_B·T·m·ω0/Q plus excess."""
        mode = self.mode
        thermal = 0.0
        if not mode.lossless:
            thermal = (4 * CONSTANTS.k_B * self.noise_temperature * mode.effective_mass
                       * mode.angular_frequency / mode.q_factor)
        return thermal + self.excess_force_noise ** 2

    @property
    def equilibrium_variance(self) -> float:
        """Stationary <x²> under the configured white force noise."""
        mode = self.mode
        if mode.lossless:
            return 0.0
        return self.force_psd / (4 * mode.effective_mass * mode.damping_rate * mode.stiffness)


@dataclass(frozen=True, eq=False)
class RawTrace:
    sample_rate: float
    samples: np.ndarray
    start_time: float = 0.0
    units: str = "m"
    sensitivity: Optional[float] = None

    def __post_init__(self):
        if len(self.samples) == 0:
            raise DomainError("RawTrace needs at least one sample")
        if not np.all(np.isfinite(self.samples)):
            raise DomainError("RawTrace samples must be finite")

    @property
    def times(self) -> np.ndarray:
        return self.start_time + np.arange(len(self.samples)) / self.sample_rate

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True, eq=False)
class DemodTrace:
    """
    Complex lock-in output I + iQ. A real tone A·cos(2π(f_c+δ)t + φ) appears
    as (A/2)·e^(i(2πδt + φ)).
    """

    center_frequency: float
    output_rate: float
    samples: np.ndarray
    calibration_tag: Optional[Dict[str, float]] = None
    start_time: float = 0.0
    units: str = "m"
    settle_samples: int = 0
    source_sample_rate: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=complex))
        if self.source_sample_rate is not None and self.output_rate > self.source_sample_rate:
            raise DomainError("output_rate cannot exceed the source sample rate")
        if not np.all(np.isfinite(self.samples)):
            raise DomainError("DemodTrace samples must be finite")

    @property
    def times(self) -> np.ndarray:
        return self.start_time + np.arange(len(self.samples)) / self.output_rate

    @property
    def duration(self) -> float:
        return len(self.samples) / self.output_rate

    def with_samples(self, samples: np.ndarray, **changes) -> "DemodTrace":
        return replace(self, samples=np.asarray(samples, dtype=complex), **changes)


def _generator(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed + (stream << 64)))


def _white_noise(seed: int, count: int, scale: float, complex_valued: bool = False,
                 threads: Optional[int] = None) -> np.ndarray:
    """Gaussian samples with standard deviation `scale`, generated chunk by chunk."""
    dtype = complex if complex_valued else float
    if count == 0 or scale == 0:
        return np.zeros(count, dtype=dtype)
    starts = list(range(0, count, NOISE_CHUNK))

    def chunk(index: int) -> np.ndarray:
        size = min(NOISE_CHUNK, count - starts[index])
        rng = _generator(seed, index + 1)
        if complex_valued:
            pair = rng.standard_normal((2, size))
            return scale * (pair[0] + 1j * pair[1]) / math.sqrt(2)
        return scale * rng.standard_normal(size)

    workers = threads if threads is not None else thread_count()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return np.concatenate(list(pool.map(chunk, range(len(starts)))))


def _damped_frequency(mode: OscillatorMode) -> float:
    half_gamma = mode.damping_rate / 2
    if half_gamma >= mode.angular_frequency:
        raise DomainError(f"Mode at {mode.frequency} Hz is not underdamped")
    return math.sqrt(mode.angular_frequency ** 2 - half_gamma ** 2)


def _steady_response(mode: OscillatorMode, tone: DriveTone) -> complex:
    """Complex steady-state displacement phasor X with x(t) = Re(X·e^(iωt))."""
    w = 2 * math.pi * tone.frequency
    chi = 1 / (mode.effective_mass * complex(mode.angular_frequency ** 2 - w ** 2,
                                             mode.damping_rate * w))
    return tone.amplitude * np.exp(1j * tone.phase) * chi


def _initial_state(config: SimConfig) -> Tuple[float, float]:
    """(x0, v0) at the start of a carrier-level run."""
    mode = config.mode
    x0, v0 = config.initial_displacement, 0.0
    if config.initial_state is InitialState.REST:
        return x0, v0
    sigma_x = math.sqrt(config.equilibrium_variance)
    if sigma_x == 0 and config.force_psd > 0:
        logger.warning("Lossless mode has no thermal equilibrium; starting from rest")
    draw = _generator(config.seed, 0).standard_normal(2)
    x0 += sigma_x * draw[0]
    v0 += sigma_x * mode.angular_frequency * draw[1]
    if config.initial_state is InitialState.STEADY:
        for tone in config.drive:
            phasor = _steady_response(mode, tone)
            x0 += phasor.real
            v0 += (1j * 2 * math.pi * tone.frequency * phasor).real
    return x0, v0


def _kick_noise_std(config: SimConfig, dt: float) -> float:
    """Per-step force standard deviation reproducing the continuous equilibrium exactly."""
    psd = config.force_psd
    tau = config.mode.decay_time
    if psd == 0:
        return 0.0
    if math.isinf(tau):
        return math.sqrt(psd / (2 * dt))
    return math.sqrt(psd * tau * -math.expm1(-2 * dt / tau) / (4 * dt ** 2))


def _drive_force(drive: Tuple[DriveTone, ...], times: np.ndarray) -> np.ndarray:
    force = np.zeros_like(times)
    for tone in drive:
        force += tone.amplitude * np.cos(2 * math.pi * tone.frequency * times + tone.phase)
    return force


def simulate(config: SimConfig, duration: float, start_time: float = 0.0,
             threads: Optional[int] = None) -> RawTrace:
    """
    Integrate the mode at `config.sample_rate` and return displacement in metres.

    Each step applies the velocity kick F·dt/m from drive, noise and the Duffing
    force, then propagates exactly through the damped linear dynamics. In the
    complex variable z = (v + γx/2)/ωd + i·x the propagation is z → p·z with
    p = exp((−γ/2 + i·ωd)·dt), so the linear case is a single first-order filter.
    """
    mode = config.mode
    require_positive(duration=duration)
    if duration < 10 / mode.frequency:
        raise DomainError(f"duration must cover 10 cycles ({10 / mode.frequency:.4g} s)")
    required = MIN_SAMPLES_PER_CYCLE * mode.frequency
    if config.sample_rate <= required:
        raise IntegratorStabilityError(
            f"sample_rate {config.sample_rate} Hz is too low for a {mode.frequency} Hz mode; "
            f"use more than {required:g} Hz", required_sample_rate=required)

    dt = 1.0 / config.sample_rate
    count = int(round(duration * config.sample_rate))
    times = start_time + np.arange(count) * dt
    wd = _damped_frequency(mode)
    p = np.exp(complex(-mode.damping_rate / 2, wd) * dt)
    q = dt / (mode.effective_mass * wd)

    force = _drive_force(config.drive, times)
    force += _white_noise(config.seed, count, _kick_noise_std(config, dt), threads=threads)

    x0, v0 = _initial_state(config)
    z0 = complex((v0 + mode.damping_rate * x0 / 2) / wd, x0)

    if config.duffing_coefficient == 0:
        excitation = np.empty(count, dtype=complex)
        excitation[0] = z0
        excitation[1:] = p * q * force[:-1]
        x = signal.lfilter([1.0], [1.0, -p], excitation).imag
    else:
        x = np.empty(count)
        z = z0
        xi = config.duffing_coefficient
        for n in range(count):
            xn = z.imag
            x[n] = xn
            z = p * (z + q * (force[n] - xi * xn ** 3))
        if not np.all(np.isfinite(x)):
            raise IntegratorStabilityError(
                "Duffing integration diverged; raise sample_rate",
                required_sample_rate=2 * config.sample_rate)

    logger.info(f"Simulated {count} samples at {config.sample_rate} Hz "
                f"(seed={config.seed}, T={config.noise_temperature} K)")
    return RawTrace(sample_rate=config.sample_rate, samples=x, start_time=start_time)


def simulate_demodulated(config: SimConfig, duration: float, center_frequency: float,
                         output_rate: float, start_time: float = 0.0,
                         threads: Optional[int] = None) -> DemodTrace:
    """
    Rotating-frame Langevin equation sampled at `output_rate`:
    a' = (−γ/2 + i(ω0 − ωc))·a − i·F̃/(4mω0) + i·3ξ|a|²a/(2mω0),
    with x(t) = 2·Re(a·e^(iωc·t)). Linear parts are integrated exactly.
    """
    mode = config.mode
    require_positive(duration=duration, center_frequency=center_frequency,
                     output_rate=output_rate)
    dt = 1.0 / output_rate
    count = int(round(duration * output_rate))
    if count < 1:
        raise DomainError("duration shorter than one output sample")
    times = start_time + np.arange(count) * dt

    w0 = mode.angular_frequency
    wc = 2 * math.pi * center_frequency
    gamma = mode.damping_rate
    lam = complex(-gamma / 2, w0 - wc)
    p = np.exp(lam * dt)
    b = 1.0 / (4 * mode.effective_mass * w0)

    steps = np.zeros(count, dtype=complex)
    a0 = complex(config.initial_displacement / 2, 0.0)
    for tone in config.drive:
        delta = 2 * math.pi * tone.frequency - wc
        gap = 1j * delta - lam
        coefficient = -1j * b * tone.amplitude * np.exp(1j * tone.phase)
        if abs(gap) * dt < 1e-12:
            per_step = coefficient * dt * np.exp(1j * delta * dt)
        else:
            per_step = coefficient * (np.exp(1j * delta * dt) - p) / gap
        steps += per_step * np.exp(1j * delta * (times - start_time))
        if config.initial_state is InitialState.STEADY and abs(gap) > 0:
            a0 += coefficient / gap

    psd = config.force_psd
    if gamma > 0:
        step_variance = 2 * psd * b ** 2 * -math.expm1(-gamma * dt) / gamma
        stationary = 2 * psd * b ** 2 / gamma
    else:
        step_variance = 2 * psd * b ** 2 * dt
        stationary = 0.0
    steps += _white_noise(config.seed, count, math.sqrt(step_variance),
                          complex_valued=True, threads=threads)
    if config.initial_state is not InitialState.REST and stationary > 0:
        draw = _generator(config.seed, 0).standard_normal(2)
        a0 += math.sqrt(stationary / 2) * complex(draw[0], draw[1])

    if config.duffing_coefficient == 0:
        excitation = np.empty(count, dtype=complex)
        excitation[0] = a0
        excitation[1:] = steps[:-1]
        samples = signal.lfilter([1.0], [1.0, -p], excitation)
    else:
        shift = 3 * config.duffing_coefficient / (2 * mode.effective_mass * w0)
        samples = np.empty(count, dtype=complex)
        a = a0
        for n in range(count):
            samples[n] = a
            a = p * np.exp(1j * shift * abs(a) ** 2 * dt) * a + steps[n]

    logger.info(f"Simulated {count} demodulated samples at {output_rate} Hz around "
                f"{center_frequency} Hz (seed={config.seed})")
    return DemodTrace(center_frequency=center_frequency, output_rate=output_rate,
                      samples=samples, start_time=start_time, units="m")


def to_squid_volts(trace: Union[RawTrace, DemodTrace],
                   sensitivity: float) -> Union[RawTrace, DemodTrace]:
    """Convert a displacement trace (m) to SQUID output volts with dV/dx (V/m)."""
    require_positive(sensitivity=sensitivity)
    if trace.units != "m":
        raise DomainError(f"Expected a trace in metres, got units {trace.units!r}")
    if isinstance(trace, DemodTrace):
        tag = dict(trace.calibration_tag or {})
        tag["voltage_sensitivity_V_per_m"] = sensitivity
        return trace.with_samples(trace.samples * sensitivity, units="V", calibration_tag=tag)
    return replace(trace, samples=trace.samples * sensitivity, units="V",
                   sensitivity=sensitivity)


def decimation_stages(sample_rate: float, output_rate: float) -> Tuple[int, int]:
    """
    Split the decimation fs/output_rate into (CIC factor, FIR factor).

    The FIR factor is the smallest divisor of the total that is at least
    MIN_FIR_DECIMATION, so the CIC droop at output_rate/8 stays below 1e-3;
    a total without such a divisor is left entirely to the FIR stage.
    """
    require_positive(sample_rate=sample_rate, output_rate=output_rate)
    ratio = sample_rate / output_rate
    factor = int(round(ratio))
    if factor < 1 or abs(ratio - factor) > 1e-9 * ratio:
        raise AliasingError(f"output_rate {output_rate} Hz must divide sample_rate {sample_rate} Hz")
    fir = next((m for m in range(MIN_FIR_DECIMATION, factor + 1) if factor % m == 0), factor)
    return factor // fir, fir


def cic_taps(factor: int, order: int = CIC_ORDER) -> np.ndarray:
    """Impulse response of `order` cascaded boxcars of length `factor`, unit DC gain."""
    taps = np.ones(1)
    for _ in range(order):
        taps = np.convolve(taps, np.ones(factor))
    return taps / float(factor) ** order


def fir_taps(fir_factor: int, output_rate: float) -> np.ndarray:
    """Kaiser-windowed sinc cut at output_rate/2, spanning FIR_ZERO_CROSSINGS each side."""
    return signal.firwin(2 * FIR_ZERO_CROSSINGS * fir_factor + 1, output_rate / 2,
                         window=("kaiser", KAISER_BETA), fs=fir_factor * output_rate)


def demodulate(trace: RawTrace, center_frequency: float, output_rate: float) -> DemodTrace:
    """
    Lock-in demodulation: mix with e^(−i2π·f_c·t), then decimate in two stages.

    A 4th-order CIC stage (cascaded boxcars) brings the rate down to
    fir_factor × output_rate; a Kaiser-windowed FIR with its cutoff at the
    output Nyquist frequency finishes the decimation, so broadband noise keeps
    its density. Both stages are causal; the first `settle_samples` outputs
    hold the filter transient.
    """
    fs = trace.sample_rate
    require_positive(center_frequency=center_frequency, output_rate=output_rate)
    if center_frequency >= fs / 2:
        raise AliasingError(f"center_frequency {center_frequency} Hz must be below "
                            f"Nyquist ({fs / 2} Hz)")
    cic_factor, fir_factor = decimation_stages(fs, output_rate)
    if output_rate > MAX_OUTPUT_FRACTION * center_frequency:
        raise AliasingError(
            f"output_rate {output_rate} Hz too high for a {center_frequency} Hz carrier; "
            f"use at most {center_frequency * MAX_OUTPUT_FRACTION:g} Hz")

    mixed = trace.samples * np.exp(-2j * math.pi * center_frequency * trace.times)
    intermediate = signal.upfirdn(cic_taps(cic_factor), mixed, down=cic_factor)
    decimated = signal.upfirdn(fir_taps(fir_factor, output_rate), intermediate, down=fir_factor)
    count = -(-len(mixed) // (cic_factor * fir_factor))

    span = CIC_ORDER * (cic_factor - 1) / fs + 2 * FIR_ZERO_CROSSINGS / output_rate
    settle = int(math.ceil(span * output_rate))
    logger.info(f"Demodulated at {center_frequency} Hz -> {output_rate} Hz "
                f"(CIC /{cic_factor}, FIR /{fir_factor}), filter transient {settle} samples")
    tag = None
    if trace.sensitivity is not None:
        tag = {"voltage_sensitivity_V_per_m": trace.sensitivity}
    return DemodTrace(center_frequency=center_frequency, output_rate=output_rate,
                      samples=decimated[:count], calibration_tag=tag,
                      start_time=trace.start_time, units=trace.units,
                      settle_samples=settle, source_sample_rate=fs)
