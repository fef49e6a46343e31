#!/usr/bin/env python3
"""
levigrav command line.

    python main.py simulate  --config run.yaml --out out/
    python main.py analyze   --trace out/trace.txt --out out/
    python main.py report    --config run.yaml --trace out/trace.txt

Exit codes: 0 success, 1 validation error, 2 numerical failure. Errors are
also written to standard error as one JSON record per failure.
"""

import sys
import json
import math
import logging
import argparse
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
import yaml

import plotting
from calibration import (MEASURED_LC_SLOPE, CalibrationResult, calibrate, calibrate_from_ringup,
                         flux_quanta_per_meter, zero_point_flux_and_g0, zero_point_motion)
from core_model import ALTERNATE_Q_26_7_HZ, MEASURED_MODE_TABLE, ModeTable
from errors import CalibrationMissingError, LevigravError, TraceFormatError
from estimation import fit_exponential, fit_scale_odr
from force_pipeline import run_pipeline
from gravity_source import (LONGITUDINAL_SYSTEMATICS, VERTICAL_SYSTEMATICS, SweepAxis,
                            drive_component, sweep)
from levitation import solve_levitation
from run_config import RunConfig
from settings import output_dir, thread_count
from suspension import coupling_ratio_for_residual, effective_drive, platform_acceleration
from trace_io import (Provenance, file_sha256, ingest, read_trace, trace_to_file, write_frame,
                      write_trace, write_yaml_document)
from trace_synth import RawTrace, demodulate, simulate, simulate_demodulated, to_squid_volts

logger = logging.getLogger(__name__)


def _plain(value: Any) -> Any:
    """Recursively turn numpy scalars, tuples and arrays into YAML-safe builtins."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        return float(value)
    return value


def _output(args: argparse.Namespace, default_name: str) -> Path:
    """--out is a file when it has a suffix, otherwise a directory."""
    if args.out is None:
        return output_dir() / default_name
    out = Path(args.out)
    return out if out.suffix else out / default_name


def _provenance(config: RunConfig, command: str, *inputs: Optional[str]) -> Provenance:
    hashes = {Path(p).name: file_sha256(p) for p in inputs if p}
    return Provenance(config_hash=config.config_hash, inputs=hashes, command=command)


def _document(result: Dict[str, Any], provenance: Provenance) -> Dict[str, Any]:
    return _plain({"result": result, "provenance": provenance.to_dict()})


def _load_calibration(path: Optional[str]) -> Optional[CalibrationResult]:
    if path is None:
        return None
    try:
        with open(path, "r") as handle:
            document = yaml.safe_load(handle)
        return CalibrationResult.from_header(document["result"]["calibration"])
    except (OSError, yaml.YAMLError, KeyError, TypeError) as e:
        raise CalibrationMissingError(f"Cannot read calibration from {path}: {e}") from e


def _exp_fit_dict(fit, frequency: float) -> Dict[str, Any]:
    return {
        "amplitude": fit.amplitude,
        "decay_time_s": fit.decay_time,
        "amplitude_stderr": fit.amplitude_stderr,
        "decay_time_stderr_s": fit.decay_time_stderr,
        "residual_rms": fit.residual_rms,
        "decaying": fit.decaying,
        "stderr_available": fit.stderr_available,
        "q_factor": math.pi * frequency * fit.decay_time,
    }


def _calibration_summary(config: RunConfig, result: CalibrationResult) -> Dict[str, Any]:
    particle = config.particle()
    mode = config.mode()
    x_zpm = zero_point_motion(particle.total_mass, mode.frequency)
    flux, g0 = zero_point_flux_and_g0(result.flux_sensitivity, x_zpm, MEASURED_LC_SLOPE)
    flux_per_um = flux_quanta_per_meter(result.flux_sensitivity) * 1e-6
    error = result.flux_relative_error
    return {
        "calibration": result.to_header(),
        "flux_sensitivity_phi0_per_um": flux_per_um,
        "flux_sensitivity_stderr_phi0_per_um": flux_per_um * error,
        "zero_point_motion_m": x_zpm,
        "zero_point_flux_phi0": flux,
        "zero_point_flux_stderr_phi0": flux * error,
        "g0_Hz": g0,
        "g0_stderr_Hz": g0 * error,
        "lc_slope_Hz_per_phi0": MEASURED_LC_SLOPE,
    }


def _configured_calibration(config: RunConfig) -> CalibrationResult:
    circuit = config["circuit"]
    return calibrate(config.circuit(), config.mode(), circuit["voltage_sensitivity_V_per_m"],
                     circuit["relative_error"], circuit["circuit_relative_error"])


def cmd_simulate(args: argparse.Namespace, config: RunConfig) -> int:
    sim = config["simulation"]
    sim_config = config.sim_config(seed=args.seed)
    duration = args.duration if args.duration is not None else sim["duration_s"]
    center = sim["mode_frequency_Hz"]
    if sim["baseband"]:
        trace = simulate_demodulated(sim_config, duration, center, sim["output_rate_Hz"],
                                     threads=thread_count())
    else:
        raw = simulate(sim_config, duration, threads=thread_count())
        trace = demodulate(raw, center, sim["output_rate_Hz"])

    calibration = None
    if args.volts:
        calibration = _configured_calibration(config)
        trace = to_squid_volts(trace, calibration.voltage_sensitivity)
    mode = config.mode()
    table = ModeTable.from_rows([(mode.frequency, mode.decay_time, mode.q_factor)])
    trace_file = trace_to_file(trace, calibration=calibration, mode_table=table,
                               seed=sim_config.seed,
                               provenance=_provenance(config, "simulate", args.config))
    path = write_trace(_output(args, "trace.txt"), trace_file, binary=args.binary)
    print(path)
    return 0


def cmd_calibrate(args: argparse.Namespace, config: RunConfig) -> int:
    if args.trace:
        trace = read_trace(args.trace).to_trace()
        circuit = config["circuit"]
        result = calibrate_from_ringup(config.circuit(), config.mode(), trace,
                                       circuit["crosstalk_current_A"], circuit["relative_error"],
                                       circuit["circuit_relative_error"])
    else:
        result = _configured_calibration(config)
    document = _document(_calibration_summary(config, result),
                         _provenance(config, "calibrate", args.config, args.trace))
    print(write_yaml_document(_output(args, "calibration.yaml"), document))
    return 0


def _read_table(path: str, columns: List[str]) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except (OSError, ValueError, pd.errors.ParserError) as e:
        raise TraceFormatError(f"Cannot read {path}: {e}") from e
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise TraceFormatError(f"{path}: missing columns {missing}")
    return frame


def _envelope_from_args(args: argparse.Namespace, config: RunConfig):
    if args.trace:
        trace = read_trace(args.trace).to_trace()
        if isinstance(trace, RawTrace):
            trace = demodulate(trace, config["simulation"]["mode_frequency_Hz"],
                               config["simulation"]["output_rate_Hz"])
        start = trace.settle_samples
        return trace.times[start:], 2 * np.abs(trace.samples[start:])
    frame = _read_table(args.csv, [args.time_column, args.envelope_column])
    return frame[args.time_column].to_numpy(float), frame[args.envelope_column].to_numpy(float)


def cmd_ringdown(args: argparse.Namespace, config: RunConfig) -> int:
    times, envelope = _envelope_from_args(args, config)
    fit = fit_exponential(times, envelope)
    frequency = config["simulation"]["mode_frequency_Hz"]
    document = _document({"ringdown_fit": _exp_fit_dict(fit, frequency)},
                         _provenance(config, "ringdown", args.config, args.trace or args.csv))
    path = write_yaml_document(_output(args, "ringdown.yaml"), document)
    plotting.plot_ringdown(times - times[0], envelope, _shifted_fit(fit, times[0]),
                           path.with_suffix(".svg"))
    print(path)
    return 0


def _shifted_fit(fit, t0: float):
    return replace(fit, amplitude=fit.amplitude * math.exp(-t0 * fit.decay_rate))


def _analyze(config: RunConfig, trace_path: str, calibration_path: Optional[str]):
    trace_file = read_trace(trace_path)
    trace = trace_file.to_trace()
    calibration = _load_calibration(calibration_path) or trace_file.calibration
    pipeline = config["pipeline"]
    if isinstance(trace, RawTrace):
        trace = demodulate(trace, config["simulation"]["mode_frequency_Hz"],
                           config["simulation"]["output_rate_Hz"])
    report = run_pipeline(trace, config.mode(), calibration=calibration,
                          reference_frequency=pipeline["reference_frequency_Hz"],
                          detuning=config.detuning, band=pipeline["band_Hz"],
                          windowed=pipeline["windowed"])
    return report


def cmd_analyze(args: argparse.Namespace, config: RunConfig) -> int:
    report = _analyze(config, args.trace, args.calibration)
    path = _output(args, "pipeline.yaml")
    document = _document(report.to_dict(),
                         _provenance(config, "analyze", args.config, args.trace, args.calibration))
    write_yaml_document(path, document)
    write_frame(path.with_name("displacement_spectrum.csv"), report.displacement.to_frame())
    write_frame(path.with_name("force_spectrum.csv"), report.force.to_frame())
    plotting.plot_spectrum(report.force, path.with_name("force_spectrum.svg"),
                           report.drive_frequency)
    print(path)
    return 0


def _sweep_positions(args: argparse.Namespace) -> List[float]:
    if args.positions:
        return [float(p) for p in args.positions]
    if args.axis == "vertical":
        return list(np.linspace(0.45, 0.60, 7))
    return list(np.linspace(-0.30, 0.30, 13))


def cmd_sweep(args: argparse.Namespace, config: RunConfig) -> int:
    axis = SweepAxis(args.axis)
    if args.systematics is not None:
        systematics = tuple(args.systematics)
    else:
        systematics = LONGITUDINAL_SYSTEMATICS if axis is SweepAxis.LONGITUDINAL else VERTICAL_SYSTEMATICS
    result = sweep(config.wheel(), axis, _sweep_positions(args), systematics,
                   particle_mass=config["particle"]["total_mass_kg"],
                   mode_frequency=config["simulation"]["mode_frequency_Hz"],
                   threads=thread_count())
    path = _output(args, f"sweep_{axis.value}.csv")
    write_frame(path, result.to_frame())
    plotting.plot_sweep(result, path.with_suffix(".svg"))
    print(path)
    return 0


def cmd_fit_scale(args: argparse.Namespace, config: RunConfig) -> int:
    columns = ["x", "y", "sigma_x", "sigma_y"]
    frame = _read_table(args.data, columns)
    fit = fit_scale_odr(*(frame[c].to_numpy(float) for c in columns))
    document = _document({"scale": fit.scale, "scale_stderr": fit.scale_stderr,
                          "chi_squared": fit.chi_squared, "residuals": fit.residuals},
                         _provenance(config, "fit-scale", args.config, args.data))
    print(write_yaml_document(_output(args, "scale_fit.yaml"), document))
    return 0


def cmd_report(args: argparse.Namespace, config: RunConfig) -> int:
    particle = config.particle()
    mode = config.mode()
    levitation = solve_levitation(particle)
    calibration = _configured_calibration(config)
    wheel = config.wheel()
    drive = drive_component(wheel, particle.total_mass, mode.frequency)
    suspension = config.suspension()
    particle_accel = drive.amplitude / particle.total_mass
    platform_accel = platform_acceleration(wheel, config["suspension"]["platform_centroid_m"],
                                           mode.frequency)
    suppression = effective_drive(particle_accel, platform_accel, mode.frequency, suspension)

    flagged = MEASURED_MODE_TABLE.check_consistency()
    result: Dict[str, Any] = {
        "mode": mode.to_dict(),
        "linewidth_Hz": mode.linewidth,
        "mode_table": {
            "entries": MEASURED_MODE_TABLE.to_header(),
            "inconsistent_Hz": [e.frequency for e in flagged],
            "alternate_q_26_7_Hz": ALTERNATE_Q_26_7_HZ,
        },
        "levitation": {
            "dipole_moment_A_m2": particle.dipole_moment,
            "equilibrium_height_m": levitation.equilibrium_height,
            "z_frequency_Hz": levitation.z_frequency,
        },
        "calibration": _calibration_summary(config, calibration),
        "gravity": {
            "standoff_m": wheel.standoff,
            "drive_amplitude_N": drive.amplitude,
            "drive_phase_rad": drive.drive_phase,
            "signal_phase_rad": drive.signal_phase,
            "mean_force_N": drive.mean_force,
            "quadrature_nodes": drive.nodes,
        },
        "suspension": {
            "platform_phase_rad": suppression.platform_phase,
            "residual_factor": suppression.residual_magnitude,
            "effective_drive_m_per_s2": abs(suppression.effective_drive),
            "coupling_ratio_for_0_35": coupling_ratio_for_residual(0.35, mode.frequency,
                                                                   suspension),
        },
    }
    inputs = [args.config]
    if args.trace:
        result["pipeline"] = _analyze(config, args.trace, args.calibration).to_dict()
        inputs += [args.trace, args.calibration]
    document = _document(result, _provenance(config, "report", *inputs))
    print(write_yaml_document(_output(args, "report.yaml"), document))
    return 0


def cmd_ingest(args: argparse.Namespace, config: RunConfig) -> int:
    trace_file = ingest(args.input, args.column_map, sample_rate=args.sample_rate,
                        allow_gaps=args.allow_gaps)
    print(write_trace(_output(args, "ingested.txt"), trace_file, binary=args.binary))
    return 0


HANDLERS = {
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "ringdown": cmd_ringdown,
    "analyze": cmd_analyze,
    "sweep": cmd_sweep,
    "fit-scale": cmd_fit_scale,
    "report": cmd_report,
    "ingest": cmd_ingest,
}


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="YAML run configuration")
    common.add_argument("--out", default=None, help="output file or directory")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true")
    verbosity.add_argument("--quiet", action="store_true")

    parser = argparse.ArgumentParser(description="Levitated-particle gravimetry toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", parents=[common], help="synthesise a demodulated trace")
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--duration", type=float, default=None, help="seconds")
    sim.add_argument("--volts", action="store_true", help="convert to SQUID volts")
    sim.add_argument("--binary", action="store_true")

    cal = sub.add_parser("calibrate", parents=[common], help="run the calibration chain")
    cal.add_argument("--trace", default=None, help="ring-up trace in volts")

    ring = sub.add_parser("ringdown", parents=[common], help="fit a ringdown envelope")
    source = ring.add_mutually_exclusive_group(required=True)
    source.add_argument("--trace", default=None)
    source.add_argument("--csv", default=None)
    ring.add_argument("--time-column", default="time_s")
    ring.add_argument("--envelope-column", default="envelope")

    ana = sub.add_parser("analyze", parents=[common], help="force pipeline on a trace")
    ana.add_argument("--trace", required=True)
    ana.add_argument("--calibration", default=None, help="calibration.yaml from calibrate")

    swp = sub.add_parser("sweep", parents=[common], help="drive amplitude versus wheel position")
    swp.add_argument("--axis", choices=[a.value for a in SweepAxis], required=True)
    swp.add_argument("--positions", type=float, nargs="+", default=None, help="metres")
    swp.add_argument("--systematics", type=float, nargs=3, default=None, help="metres")

    fit = sub.add_parser("fit-scale", parents=[common], help="ODR scale between x and y")
    fit.add_argument("--data", required=True, help="CSV with x, y, sigma_x, sigma_y")

    rep = sub.add_parser("report", parents=[common], help="everything in one document")
    rep.add_argument("--trace", default=None)
    rep.add_argument("--calibration", default=None)

    ing = sub.add_parser("ingest", parents=[common], help="normalise an external export")
    ing.add_argument("input")
    ing.add_argument("--column-map", required=True)
    ing.add_argument("--sample-rate", type=float, default=None)
    ing.add_argument("--allow-gaps", action="store_true")
    ing.add_argument("--binary", action="store_true")
    return parser.parse_args(argv)


def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    logging.basicConfig(level=level, stream=sys.stderr, force=True,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    _configure_logging(args)
    try:
        config = RunConfig.load(args.config)
        return HANDLERS[args.command](args, config)
    except LevigravError as e:
        logger.error(f"{args.command} failed: {e}")
        print(json.dumps(e.to_record(), sort_keys=True), file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    raise SystemExit(main(sys.argv[1:]))
