"""
YAML run configuration.

Six sections mirror the module inputs. Every physical key ends in its unit;
unknown sections or keys are rejected with the full key path. An empty file
gives the published operating point.
"""

import copy
import json
import math
import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml

from calibration import DetectionCircuit
from core_model import CONSTANTS, OscillatorMode, Particle, derive_mode
from errors import ConfigError, ValidationError
from gravity_source import CylinderShape, Wheel
from suspension import Suspension
from trace_synth import DriveTone, InitialState, SimConfig

logger = logging.getLogger(__name__)

UNIT_SUFFIXES = (
    "_kg", "_m", "_T", "_H", "_A", "_Hz", "_s", "_K", "_N", "_V_per_phi0", "_A_per_phi0",
    "_V_per_m", "_N_per_m3", "_N_per_rtHz", "_rad", "_deg",
)

DIMENSIONLESS_KEYS = {
    "magnet_count", "mass_count", "grid_level", "plane_normal", "quality_factor",
    "relative_error", "circuit_relative_error", "seed", "initial_state", "baseband",
    "windowed",
}

DEFAULTS: Dict[str, Dict[str, Any]] = {
    "particle": {
        "total_mass_kg": 0.43e-6,
        "magnet_edge_m": 0.25e-3,
        "magnet_count": 3,
        "bead_radius_m": 0.25e-3,
        "remnant_magnetization_T": 1.4,
    },
    "circuit": {
        "l_pickup_H": 2.9e-7,
        "l_twisted_pair_H": 1e-7,
        "l_input_H": 4e-7,
        "l_calibration_H": 2e-9,
        "input_coupling_A_per_phi0": 0.5e-6,
        "squid_gain_V_per_phi0": 0.43,
        "voltage_sensitivity_V_per_m": 0.16e6,
        "relative_error": 0.07,
        "circuit_relative_error": 0.0,
        "crosstalk_current_A": 1e-9,
    },
    "wheel": {
        "mass_count": 3,
        "mass_each_kg": 2.45,
        "rim_radius_m": 0.25,
        "standoff_m": 0.48,
        "longitudinal_offset_m": 0.0,
        "lateral_offset_m": 0.0,
        "plane_normal": [1.0, 0.0, 0.0],
        "initial_phase_rad": 0.0,
        "grid_level": 2,
        "mass_radius_m": 0.042,
        "mass_height_m": 0.05,
    },
    "suspension": {
        "platform_mass_kg": 1.0,
        "resonance_frequency_Hz": 2.7,
        "quality_factor": math.inf,
        "platform_centroid_m": [0.0, 0.0, 0.0],
    },
    "simulation": {
        "mode_frequency_Hz": 26.7,
        "decay_time_s": 1.09e5,
        "duffing_coefficient_N_per_m3": 0.0,
        "noise_temperature_K": 3.0,
        "excess_force_noise_N_per_rtHz": 0.0,
        "drive_amplitude_N": 3.0e-17,
        "drive_detuning_Hz": 1.3e-3,
        "drive_phase_rad": 0.0,
        "sample_rate_Hz": 1000.0,
        "output_rate_Hz": 0.1,
        "duration_s": 28800.0,
        "seed": 0,
        "initial_state": "steady",
        "baseband": True,
    },
    "pipeline": {
        "band_Hz": 8e-3,
        "windowed": False,
        "reference_frequency_Hz": None,
        "detuning_Hz": None,
    },
}

_INTEGER_KEYS = {"magnet_count", "mass_count", "grid_level", "seed"}
_BOOLEAN_KEYS = {"baseband", "windowed"}
_STRING_KEYS = {"initial_state"}
_VECTOR_KEYS = {"plane_normal", "platform_centroid_m"}
_OPTIONAL_KEYS = {"reference_frequency_Hz", "detuning_Hz"}


def has_unit_suffix(key: str) -> bool:
    return any(key.endswith(suffix) for suffix in UNIT_SUFFIXES)


def _coerce(path: str, key: str, value: Any) -> Any:
    if value is None and key in _OPTIONAL_KEYS:
        return None
    try:
        if key in _BOOLEAN_KEYS:
            if not isinstance(value, bool):
                raise TypeError("expected true/false")
            return value
        if key in _STRING_KEYS:
            return InitialState(str(value)).value
        if key in _VECTOR_KEYS:
            vector = [float(v) for v in value]
            if len(vector) != 3:
                raise ValueError("expected three components")
            return vector
        if key in _INTEGER_KEYS:
            if isinstance(value, bool) or int(value) != value:
                raise ValueError("expected an integer")
            return int(value)
        if isinstance(value, bool):
            raise TypeError("expected a number")
        return float(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: invalid value {value!r} ({e})") from e


def _merge(document: Dict[str, Any]) -> Dict[str, Dict[str, Any]]:
    merged = copy.deepcopy(DEFAULTS)
    if document is None:
        return merged
    if not isinstance(document, dict):
        raise ConfigError("Run configuration must be a mapping of sections")
    for section, values in document.items():
        if section not in DEFAULTS:
            raise ConfigError(f"Unknown section {section!r}")
        if values is None:
            continue
        if not isinstance(values, dict):
            raise ConfigError(f"Section {section!r} must be a mapping")
        for key, value in values.items():
            path = f"{section}.{key}"
            if key not in DEFAULTS[section]:
                raise ConfigError(f"Unknown key {path!r}")
            merged[section][key] = _coerce(path, key, value)
    return merged


@dataclass(frozen=True)
class RunConfig:
    sections: Dict[str, Dict[str, Any]]

    @classmethod
    def from_dict(cls, document: Optional[Dict[str, Any]] = None) -> "RunConfig":
        return cls(_merge(document))

    @classmethod
    def load(cls, path: Union[str, Path, None]) -> "RunConfig":
        if path is None:
            return cls.from_dict(None)
        try:
            with open(path, "r") as handle:
                document = yaml.safe_load(handle)
        except OSError as e:
            raise ConfigError(f"Cannot read run configuration {path}: {e}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"Run configuration {path} is not valid YAML: {e}") from e
        logger.info(f"Loaded run configuration from {path}")
        return cls.from_dict(document)

    def __getitem__(self, section: str) -> Dict[str, Any]:
        return self.sections[section]

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        return copy.deepcopy(self.sections)

    def canonical_json(self) -> str:
        # inf is not JSON; keep it as a string so the rendering is stable
        def encode(value):
            if isinstance(value, float) and math.isinf(value):
                return "inf" if value > 0 else "-inf"
            return value

        rendered = {s: {k: encode(v) for k, v in values.items()}
                    for s, values in self.sections.items()}
        return json.dumps(rendered, sort_keys=True, separators=(",", ":"))

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def particle(self) -> Particle:
        p = self["particle"]
        return self._build(Particle, total_mass=p["total_mass_kg"], magnet_edge=p["magnet_edge_m"],
                           magnet_count=p["magnet_count"], bead_radius=p["bead_radius_m"],
                           remnant_magnetization=p["remnant_magnetization_T"])

    def circuit(self) -> DetectionCircuit:
        c = self["circuit"]
        if not c["input_coupling_A_per_phi0"] > 0:
            raise ConfigError("circuit.input_coupling_A_per_phi0 must be > 0")
        return self._build(DetectionCircuit, l_pickup=c["l_pickup_H"],
                           l_twisted_pair=c["l_twisted_pair_H"], l_input=c["l_input_H"],
                           l_calibration=c["l_calibration_H"],
                           mutual_inductance_in_sq=CONSTANTS.Phi0 / c["input_coupling_A_per_phi0"],
                           squid_gain=c["squid_gain_V_per_phi0"])

    def mode(self) -> OscillatorMode:
        s = self["simulation"]
        return self._build(derive_mode, frequency=s["mode_frequency_Hz"],
                           decay_time=s["decay_time_s"],
                           effective_mass=self["particle"]["total_mass_kg"])

    def wheel(self) -> Wheel:
        w = self["wheel"]
        norm = math.sqrt(sum(c * c for c in w["plane_normal"]))
        if norm == 0:
            raise ConfigError("wheel.plane_normal must be non-zero")
        normal = tuple(c / norm for c in w["plane_normal"])
        shape = CylinderShape(radius=w["mass_radius_m"], height=w["mass_height_m"])
        return self._build(Wheel.with_standoff, standoff=w["standoff_m"],
                           rim_radius=w["rim_radius_m"],
                           longitudinal=w["longitudinal_offset_m"],
                           lateral=w["lateral_offset_m"], mass_count=w["mass_count"],
                           mass_each=w["mass_each_kg"], plane_normal=normal,
                           rotation_frequency=self["simulation"]["mode_frequency_Hz"] / w["mass_count"],
                           initial_phase=w["initial_phase_rad"], mass_shape=shape,
                           grid_level=w["grid_level"])

    def suspension(self) -> Suspension:
        s = self["suspension"]
        return self._build(Suspension, platform_mass=s["platform_mass_kg"],
                           resonance_frequency=s["resonance_frequency_Hz"],
                           quality_factor=s["quality_factor"])

    @property
    def detuning(self) -> float:
        pipeline = self["pipeline"]
        if pipeline["detuning_Hz"] is not None:
            return pipeline["detuning_Hz"]
        return self["simulation"]["drive_detuning_Hz"]

    def sim_config(self, seed: Optional[int] = None) -> SimConfig:
        s = self["simulation"]
        drive = ()
        if s["drive_amplitude_N"] > 0:
            drive = (DriveTone(amplitude=s["drive_amplitude_N"],
                               frequency=s["mode_frequency_Hz"] + s["drive_detuning_Hz"],
                               phase=s["drive_phase_rad"]),)
        return self._build(SimConfig, mode=self.mode(),
                           duffing_coefficient=s["duffing_coefficient_N_per_m3"],
                           noise_temperature=s["noise_temperature_K"], drive=drive,
                           sample_rate=s["sample_rate_Hz"],
                           seed=s["seed"] if seed is None else seed,
                           excess_force_noise=s["excess_force_noise_N_per_rtHz"],
                           initial_state=InitialState(s["initial_state"]))

    @staticmethod
    def _build(factory, **kwargs):
        try:
            return factory(**kwargs)
        except ConfigError:
            raise
        except ValidationError as e:
            name = getattr(factory, "__qualname__", repr(factory))
            raise ConfigError(f"Invalid configuration for {name}: {e}") from e
