"""
Test helper utilities for the levigrav tests.

This module provides builders for synthetic traces, run configurations and
CSV inputs.
"""

import math

import numpy as np
import pandas as pd
import yaml

from calibration import crosstalk_voltage, voltage_sensitivity
from trace_synth import (DemodTrace, DriveTone, InitialState, SimConfig, simulate_demodulated,
                         to_squid_volts)


def tone_trace(amplitude=1e-9, offset=0.05, phase=0.0, count=1000, output_rate=1.0,
               center_frequency=26.7, units='m', **kwargs):
    """
    Demodulated trace of one real tone A·cos(2π(f_c + offset)t + φ).

    Args:
        amplitude: Real tone amplitude
        offset: Tone frequency relative to the lock-in centre (Hz)
        phase: Tone phase (rad)
        count: Number of output samples
        output_rate: Lock-in output rate (Hz)
        center_frequency: Lock-in centre frequency (Hz)
        units: Trace units

    Returns:
        DemodTrace carrying (A/2)·e^(i(2π·offset·t + φ))
    """
    t = np.arange(count) / output_rate
    samples = amplitude / 2 * np.exp(1j * (2 * math.pi * offset * t + phase))
    return DemodTrace(center_frequency=center_frequency, output_rate=output_rate,
                      samples=samples, units=units, **kwargs)


def ringdown_trace(amplitude=1e-9, decay_time=300.0, phase=0.7, count=1000, output_rate=1.0,
                   center_frequency=26.7):
    """
    Demodulated free ringdown sitting at the lock-in frequency.

    Args:
        amplitude: Complex envelope magnitude at t=0
        decay_time: Amplitude decay time (s)
        phase: Constant phase (rad)
        count: Number of output samples
        output_rate: Lock-in output rate (Hz)
        center_frequency: Lock-in centre frequency (Hz)

    Returns:
        DemodTrace in metres
    """
    t = np.arange(count) / output_rate
    samples = amplitude * np.exp(-t / decay_time + 1j * phase)
    return DemodTrace(center_frequency=center_frequency, output_rate=output_rate,
                      samples=samples, units='m')


def ringup_trace(circuit, mode, flux, current=1e-9, duration=1000.0, output_rate=1.0):
    """
    On-resonance ring-up in SQUID volts with the crosstalk riding on top.

    The mode is driven by flux·current, the force a calibration current puts on
    the particle, and the trace carries the constant crosstalk phasor.

    Args:
        circuit: DetectionCircuit
        mode: OscillatorMode being rung up
        flux: Flux sensitivity dΦ/dx (Wb/m)
        current: Calibration current amplitude (A)
        duration: Drive span after the first sample (s)
        output_rate: Lock-in output rate (Hz)

    Returns:
        DemodTrace in volts
    """
    tone = DriveTone(amplitude=flux * current, frequency=mode.frequency)
    config = SimConfig(mode=mode, drive=(tone,))
    trace = simulate_demodulated(config, duration + 1 / output_rate, mode.frequency,
                                 output_rate)
    volts = to_squid_volts(trace, voltage_sensitivity(circuit, flux))
    return volts.with_samples(volts.samples + crosstalk_voltage(circuit, current) / 2)


def drive_config(mode, amplitude=3e-17, detuning=1.3e-3, temperature=0.0, excess=0.0,
                 seed=0, initial_state=InitialState.STEADY):
    """
    SimConfig with a single drive tone near the mode.

    Args:
        mode: OscillatorMode to drive
        amplitude: Drive amplitude (N); 0 for no drive
        detuning: Drive frequency minus mode frequency (Hz)
        temperature: Bath temperature (K)
        excess: Excess white force noise (N/√Hz)
        seed: Noise seed
        initial_state: Starting state of the oscillator

    Returns:
        SimConfig
    """
    drive = ()
    if amplitude > 0:
        drive = (DriveTone(amplitude=amplitude, frequency=mode.frequency + detuning),)
    return SimConfig(mode=mode, noise_temperature=temperature, drive=drive, seed=seed,
                     excess_force_noise=excess, initial_state=initial_state)


def write_run_config(path, sections=None):
    """
    Write a YAML run configuration.

    Args:
        path: Destination file
        sections: Mapping of section name to overrides

    Returns:
        The path, as a string
    """
    with open(path, 'w') as handle:
        yaml.safe_dump(sections or {}, handle)
    return str(path)


def write_csv(path, columns):
    """
    Write a CSV file from a column mapping.

    Args:
        path: Destination file
        columns: Mapping of column name to values

    Returns:
        The path, as a string
    """
    pd.DataFrame(columns).to_csv(path, index=False)
    return str(path)


def load_yaml(path):
    """Read a YAML document."""
    with open(path, 'r') as handle:
        return yaml.safe_load(handle)
