"""
Phase 11: Integration Tests for the Command Line

Tests for every subcommand through main(argv): the simulate/analyze round
trip, calibration, fits, sweeps, ingestion, output locations and the exit
codes and JSON error records on failure.
"""

import json
import math

import numpy as np
import pytest

import main
from calibration import MEASURED_CIRCUIT
from core_model import measured_mode
from trace_io import read_trace, trace_to_file, write_trace

from test_helpers import load_yaml, ringdown_trace, ringup_trace, write_csv, write_run_config


pytestmark = [pytest.mark.integration, pytest.mark.io]


def _run(argv, capsys):
    code = main.main(argv + ["--quiet"])
    captured = capsys.readouterr()
    return code, captured.out.strip().splitlines(), captured.err.strip().splitlines()


def _error_record(err_lines):
    return json.loads(err_lines[-1])


@pytest.fixture
def quiet_config(tmp_path):
    """Noise-free configuration for exact round trips."""
    return write_run_config(tmp_path / "quiet.yaml",
                            {"simulation": {"noise_temperature_K": 0.0}})


class TestSimulateAnalyze:
    """Test cases for the simulate then analyze round trip."""

    def test_recovers_drive(self, tmp_path, capsys):
        """Test the default 3 K run recovers the 30 aN drive within 10%."""
        out = tmp_path / "run"
        code, lines, _ = _run(["simulate", "--out", str(out)], capsys)
        assert code == 0
        trace_path = out / "trace.txt"
        assert lines[-1] == str(trace_path)
        header = read_trace(trace_path).header
        assert header["seed"] == 0
        assert header["mode_table"][0]["frequency_Hz"] == 26.7

        code, lines, _ = _run(["analyze", "--trace", str(trace_path), "--out", str(out)], capsys)
        assert code == 0
        document = load_yaml(out / "pipeline.yaml")
        assert document["result"]["force_amplitude_at_drive_N"] == pytest.approx(3e-17, rel=0.1)
        assert document["result"]["mode_temperature_K"] > 0
        assert document["provenance"]["command"] == "analyze"
        assert "trace.txt" in document["provenance"]["inputs"]
        for name in ("displacement_spectrum.csv", "force_spectrum.csv", "force_spectrum.svg"):
            assert (out / name).exists()

    def test_volts_match_metres(self, tmp_path, capsys, quiet_config):
        """Test a trace written in volts analyses to the same force."""
        forces = []
        for volts in (False, True):
            out = tmp_path / ("volts" if volts else "metres")
            argv = ["simulate", "--config", quiet_config, "--out", str(out)]
            if volts:
                argv.append("--volts")
            assert _run(argv, capsys)[0] == 0
            assert _run(["analyze", "--config", quiet_config, "--trace", str(out / "trace.txt"),
                         "--out", str(out)], capsys)[0] == 0
            forces.append(load_yaml(out / "pipeline.yaml")["result"]["force_amplitude_at_drive_N"])
        assert forces[0] == pytest.approx(3e-17, rel=1e-2)
        assert forces[1] == pytest.approx(forces[0], rel=1e-6)

    def test_binary_trace(self, tmp_path, capsys, quiet_config):
        """Test simulate can write a binary body."""
        out = tmp_path / "bin"
        assert _run(["simulate", "--config", quiet_config, "--binary", "--duration", "1000",
                     "--out", str(out)], capsys)[0] == 0
        trace_file = read_trace(out / "trace.txt")
        assert trace_file.header["body"] == "binary"
        assert trace_file.header["length"] == 100

    def test_carrier_simulation_needs_rate(self, tmp_path, capsys):
        """Test a carrier-level run below 20 samples per cycle exits with 2."""
        config = write_run_config(tmp_path / "carrier.yaml",
                                  {"simulation": {"baseband": False, "sample_rate_Hz": 100.0}})
        code, _, err = _run(["simulate", "--config", config, "--out", str(tmp_path)], capsys)
        assert code == 2
        assert _error_record(err)["error"] == "IntegratorStabilityError"

    def test_output_rate_must_divide_sample_rate(self, tmp_path, capsys):
        """Test a carrier-level run with a non-dividing output rate exits with 2."""
        config = write_run_config(tmp_path / "carrier.yaml",
                                  {"simulation": {"baseband": False, "output_rate_Hz": 0.3}})
        code, _, err = _run(["simulate", "--config", config, "--duration", "10",
                             "--out", str(tmp_path)], capsys)
        assert code == 2
        assert _error_record(err)["error"] == "AliasingError"

    def test_same_seed_same_bytes(self, tmp_path, capsys):
        """Test two runs with one seed write byte-identical traces."""
        written = []
        for name in ("first", "second"):
            out = tmp_path / name
            assert _run(["simulate", "--duration", "2000", "--out", str(out)], capsys)[0] == 0
            written.append((out / "trace.txt").read_bytes())
        assert written[0] == written[1]

    def test_missing_trace(self, tmp_path, capsys):
        """Test analysing a missing trace exits with 1."""
        code, _, err = _run(["analyze", "--trace", str(tmp_path / "absent.txt")], capsys)
        assert code == 1
        assert _error_record(err)["error"] == "TraceFormatError"


class TestCalibrate:
    """Test cases for the calibrate command."""

    def test_configured_chain(self, tmp_path, capsys):
        """Test the default chain reports about 71 Φ0/µm and g0 near 61 Hz."""
        path = tmp_path / "cal.yaml"
        assert _run(["calibrate", "--out", str(path)], capsys)[0] == 0
        result = load_yaml(path)["result"]
        assert result["flux_sensitivity_phi0_per_um"] == pytest.approx(71.26, rel=1e-3)
        assert result["g0_Hz"] == pytest.approx(61.0, rel=1e-2)
        assert result["calibration"]["voltage_sensitivity_V_per_m"] == 0.16e6
        assert result["calibration"]["beta_squared_relative_error"] == pytest.approx(0.14)
        assert result["flux_sensitivity_stderr_phi0_per_um"] == pytest.approx(0.07 * 71.26,
                                                                              rel=1e-3)
        assert result["zero_point_flux_stderr_phi0"] == pytest.approx(
            0.07 * result["zero_point_flux_phi0"])
        assert result["g0_stderr_Hz"] == pytest.approx(0.07 * result["g0_Hz"])

    def test_ringup_trace(self, tmp_path, capsys):
        """Test calibrate --trace recovers dV/dx from a ring-up file."""
        trace = ringup_trace(MEASURED_CIRCUIT, measured_mode(26.7), 1.4735e-7)
        path = write_trace(tmp_path / "ringup.txt", trace_to_file(trace))
        out = tmp_path / "cal.yaml"
        assert _run(["calibrate", "--trace", str(path), "--out", str(out)], capsys)[0] == 0
        document = load_yaml(out)
        calibration = document["result"]["calibration"]
        assert calibration["voltage_sensitivity_V_per_m"] == pytest.approx(0.16e6, rel=5e-3)
        assert "ringup.txt" in document["provenance"]["inputs"]

    def test_default_output_directory(self, output_dir, capsys):
        """Test results land in LEVIGRAV_OUTPUT_DIR without --out."""
        assert _run(["calibrate"], capsys)[0] == 0
        assert (output_dir / "calibration.yaml").exists()

    def test_analyze_with_calibration_file(self, tmp_path, capsys, quiet_config):
        """Test a calibration document converts an untagged volts trace."""
        out = tmp_path / "cal"
        assert _run(["calibrate", "--out", str(out)], capsys)[0] == 0
        assert _run(["simulate", "--config", quiet_config, "--volts", "--out", str(out)],
                    capsys)[0] == 0
        trace_file = read_trace(out / "trace.txt")
        trace = trace_file.to_trace().with_samples(trace_file.to_trace().samples,
                                                   calibration_tag=None)
        untagged = tmp_path / "untagged.txt"
        write_trace(untagged, trace_to_file(trace))
        code, _, err = _run(["analyze", "--trace", str(untagged), "--out", str(out)], capsys)
        assert code == 1
        assert _error_record(err)["error"] == "CalibrationMissingError"
        assert _run(["analyze", "--config", quiet_config, "--trace", str(untagged),
                     "--calibration", str(out / "calibration.yaml"), "--out", str(out)],
                    capsys)[0] == 0
        result = load_yaml(out / "pipeline.yaml")["result"]
        assert result["force_amplitude_at_drive_N"] == pytest.approx(3e-17, rel=1e-2)
        assert result["calibration_relative_error"] == pytest.approx(0.07)
        assert result["integrated_force_stderr_N"] == pytest.approx(
            0.07 * result["integrated_force_N"])

    def test_unreadable_calibration(self, tmp_path, capsys, quiet_config):
        """Test a calibration file without a calibration block exits with 1."""
        bad = tmp_path / "bad.yaml"
        bad.write_text("result: {}\n")
        out = tmp_path / "run"
        assert _run(["simulate", "--config", quiet_config, "--out", str(out)], capsys)[0] == 0
        code, _, err = _run(["analyze", "--trace", str(out / "trace.txt"),
                             "--calibration", str(bad)], capsys)
        assert code == 1
        assert _error_record(err)["error"] == "CalibrationMissingError"


class TestFits:
    """Test cases for the ringdown and fit-scale commands."""

    def test_ringdown_csv(self, tmp_path, capsys):
        """Test a CSV envelope gives τ and Q."""
        t = np.arange(1000.0)
        data = write_csv(tmp_path / "env.csv",
                         {"time_s": t, "envelope": 2e-9 * np.exp(-t / 300.0)})
        out = tmp_path / "fit"
        assert _run(["ringdown", "--csv", data, "--out", str(out)], capsys)[0] == 0
        fit = load_yaml(out / "ringdown.yaml")["result"]["ringdown_fit"]
        assert fit["decay_time_s"] == pytest.approx(300.0, rel=1e-6)
        assert fit["q_factor"] == pytest.approx(math.pi * 26.7 * 300.0, rel=1e-6)
        assert (out / "ringdown.svg").exists()

    def test_ringdown_trace(self, tmp_path, capsys):
        """Test a demodulated trace is fitted on 2|z|."""
        path = tmp_path / "ring.txt"
        write_trace(path, trace_to_file(ringdown_trace(amplitude=1e-9, decay_time=300.0)))
        out = tmp_path / "fit"
        assert _run(["ringdown", "--trace", str(path), "--out", str(out)], capsys)[0] == 0
        fit = load_yaml(out / "ringdown.yaml")["result"]["ringdown_fit"]
        assert fit["amplitude"] == pytest.approx(2e-9, rel=1e-6)
        assert fit["decaying"] is True

    def test_ringdown_custom_columns(self, tmp_path, capsys):
        """Test the time and envelope column names can be chosen."""
        t = np.arange(200.0)
        data = write_csv(tmp_path / "env.csv", {"t": t, "a": np.exp(-t / 50.0)})
        assert _run(["ringdown", "--csv", data, "--time-column", "t", "--envelope-column", "a",
                     "--out", str(tmp_path)], capsys)[0] == 0

    def test_ringdown_missing_column(self, tmp_path, capsys):
        """Test a CSV without the envelope column exits with 1."""
        data = write_csv(tmp_path / "env.csv", {"time_s": [0.0, 1.0, 2.0], "amp": [3.0, 2.0, 1.0]})
        code, _, err = _run(["ringdown", "--csv", data, "--out", str(tmp_path)], capsys)
        assert code == 1
        assert "envelope" in _error_record(err)["message"]

    def test_fit_scale(self, tmp_path, capsys):
        """Test the ODR command recovers an exact scale."""
        x = np.linspace(10, 55, 10)
        data = write_csv(tmp_path / "points.csv", {"x": x, "y": 0.35 * x,
                                                   "sigma_x": np.full(10, 0.5),
                                                   "sigma_y": np.full(10, 1.79)})
        out = tmp_path / "scale.yaml"
        assert _run(["fit-scale", "--data", data, "--out", str(out)], capsys)[0] == 0
        result = load_yaml(out)["result"]
        assert result["scale"] == pytest.approx(0.35, rel=1e-9)
        assert len(result["residuals"]) == 10

    def test_fit_scale_missing_sigma(self, tmp_path, capsys):
        """Test points without uncertainties exit with 1."""
        data = write_csv(tmp_path / "points.csv", {"x": [1.0, 2.0], "y": [0.4, 0.7]})
        code, _, err = _run(["fit-scale", "--data", data], capsys)
        assert code == 1
        assert _error_record(err)["error"] == "TraceFormatError"


class TestSweepReportIngest:
    """Test cases for the sweep, report and ingest commands."""

    def test_sweep(self, tmp_path, capsys):
        """Test a vertical sweep writes one row per position."""
        config = write_run_config(tmp_path / "coarse.yaml", {"wheel": {"grid_level": 0}})
        out = tmp_path / "sweep"
        assert _run(["sweep", "--config", config, "--axis", "vertical",
                     "--positions", "0.45", "0.6", "--out", str(out)], capsys)[0] == 0
        frame = np.genfromtxt(out / "sweep_vertical.csv", delimiter=",", names=True)
        assert frame["displacement_m"].tolist() == [0.45, 0.6]
        assert frame["amplitude_N"][0] > frame["amplitude_N"][1]
        assert np.all(frame["envelope_low_N"] <= frame["amplitude_N"])
        assert (out / "sweep_vertical.svg").exists()

    @pytest.mark.slow
    def test_report(self, tmp_path, capsys):
        """Test the report gathers every module's headline numbers."""
        path = tmp_path / "report.yaml"
        assert _run(["report", "--out", str(path)], capsys)[0] == 0
        result = load_yaml(path)["result"]
        assert result["mode"]["q_factor"] == pytest.approx(9.143e6, rel=1e-3)
        assert result["mode_table"]["inconsistent_Hz"] == []
        assert result["levitation"]["z_frequency_Hz"] == pytest.approx(21.16, rel=1e-2)
        assert result["calibration"]["flux_sensitivity_phi0_per_um"] == pytest.approx(71.26,
                                                                                      rel=1e-3)
        assert 1e-17 < result["gravity"]["drive_amplitude_N"] < 1e-16
        assert abs(result["suspension"]["platform_phase_rad"]) == pytest.approx(math.pi)
        assert "pipeline" not in result

    @pytest.mark.slow
    def test_report_is_reproducible(self, tmp_path, capsys):
        """Test two report runs write byte-identical documents."""
        written = []
        for name in ("first.yaml", "second.yaml"):
            assert _run(["report", "--out", str(tmp_path / name)], capsys)[0] == 0
            written.append((tmp_path / name).read_bytes())
        assert written[0] == written[1]

    def test_invalid_config(self, tmp_path, capsys):
        """Test an unknown key exits with 1 and a JSON record."""
        config = write_run_config(tmp_path / "bad.yaml", {"simulation": {"speed_Hz": 1.0}})
        code, _, err = _run(["report", "--config", config], capsys)
        assert code == 1
        record = _error_record(err)
        assert record["error"] == "ConfigError"
        assert record["exit_code"] == 1
        assert "simulation.speed_Hz" in record["message"]

    def test_ingest(self, tmp_path, capsys):
        """Test an I/Q export is normalised into a trace file."""
        data = write_csv(tmp_path / "export.csv", {"t": [0.0, 1.0, 2.0], "x": [0.1, 0.2, 0.3],
                                                   "y": [0.0, 0.1, 0.2]})
        column_map = write_run_config(tmp_path / "columns.yaml",
                                      {"time": "t", "i": "x", "q": "y",
                                       "center_frequency_Hz": 26.7})
        out = tmp_path / "ingested.txt"
        assert _run(["ingest", data, "--column-map", column_map, "--sample-rate", "1",
                     "--out", str(out)], capsys)[0] == 0
        trace = read_trace(out).to_trace()
        assert trace.samples.tolist() == [0.1, 0.2 + 0.1j, 0.3 + 0.2j]

    def test_ingest_gaps(self, tmp_path, capsys):
        """Test rejected rows are listed in the error record."""
        data = write_csv(tmp_path / "export.csv", {"t": [0.0, 1.0, 2.0], "v": [1.0, np.nan, 3.0]})
        column_map = write_run_config(tmp_path / "columns.yaml", {"time": "t", "value": "v"})
        code, _, err = _run(["ingest", data, "--column-map", column_map, "--sample-rate", "1"],
                            capsys)
        assert code == 1
        assert _error_record(err)["rows"] == [1]
