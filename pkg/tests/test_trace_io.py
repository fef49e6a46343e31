"""
Phase 10: I/O Tests for Trace Files and Ingestion

Tests for the trace file format (text and binary bodies), header
validation, atomic writes and the normalisation of external lock-in exports.
"""

import hashlib
import os

import numpy as np
import pandas as pd
import pytest

import trace_io
from core_model import MEASURED_MODE_TABLE
from errors import TraceFormatError
from trace_io import (DEMOD_COLUMNS, RAW_COLUMNS, Provenance, atomic_write_bytes, export_body,
                     file_sha256, ingest, load_trace, read_trace, trace_to_file, write_trace,
                     write_yaml_document)
from trace_synth import RawTrace

from test_helpers import load_yaml, tone_trace, write_csv


pytestmark = pytest.mark.io


def _written(tmp_path, trace=None, binary=False, **kwargs):
    path = tmp_path / "trace.txt"
    write_trace(path, trace_to_file(trace or tone_trace(count=50, phase=0.3), **kwargs),
                binary=binary)
    return path


def _edit_header(path, old, new):
    text = path.read_text()
    assert old in text
    path.write_text(text.replace(old, new, 1))


class TestRoundTrip:
    """Test cases for writing and reading trace files."""

    @pytest.mark.parametrize("binary", [False, True])
    def test_demod_bit_exact(self, tmp_path, binary):
        """Test demodulated samples survive a round trip unchanged."""
        trace = tone_trace(count=50, phase=0.3, offset=0.0123)
        restored = load_trace(_written(tmp_path, trace, binary=binary))
        assert np.array_equal(restored.samples, trace.samples)
        assert restored.center_frequency == trace.center_frequency
        assert restored.output_rate == trace.output_rate

    @pytest.mark.parametrize("binary", [False, True])
    def test_raw_bit_exact(self, tmp_path, binary):
        """Test raw samples and their sensitivity survive a round trip."""
        rng = np.random.default_rng(0)
        trace = RawTrace(sample_rate=1000.0, samples=rng.normal(size=100), units='V',
                         sensitivity=0.16e6)
        restored = load_trace(_written(tmp_path, trace, binary=binary))
        assert np.array_equal(restored.samples, trace.samples)
        assert restored.sensitivity == 0.16e6
        assert restored.units == 'V'

    def test_demod_metadata(self, tmp_path):
        """Test settle samples, start time and source rate are kept."""
        trace = tone_trace(count=20, settle_samples=5, source_sample_rate=100.0,
                           start_time=12.5)
        restored = load_trace(_written(tmp_path, trace))
        assert restored.settle_samples == 5
        assert restored.source_sample_rate == 100.0
        assert restored.start_time == 12.5

    def test_header_fields(self, tmp_path):
        """Test the header records kind, units, length, seed and provenance."""
        provenance = Provenance(config_hash="abc", command="simulate")
        header = read_trace(_written(tmp_path, seed=42, provenance=provenance)).header
        assert header["kind"] == "demod"
        assert header["units"] == "m"
        assert header["length"] == 50
        assert header["seed"] == 42
        assert header["body"] == "text"
        assert header["provenance"]["config_hash"] == "abc"

    def test_calibration_in_header(self, tmp_path, calibration):
        """Test a calibration is stored and tags the loaded trace."""
        trace_file = read_trace(_written(tmp_path, tone_trace(count=10, units='V'),
                                         calibration=calibration))
        assert trace_file.calibration == calibration
        tag = trace_file.to_trace().calibration_tag
        assert tag["voltage_sensitivity_V_per_m"] == calibration.voltage_sensitivity

    def test_calibration_tag_kept(self, tmp_path):
        """Test a bare calibration tag round trips."""
        trace = tone_trace(count=10, units='V', calibration_tag={"voltage_sensitivity_V_per_m": 3.0})
        assert load_trace(_written(tmp_path, trace)).calibration_tag == {
            "voltage_sensitivity_V_per_m": 3.0}

    def test_mode_table_in_header(self, tmp_path):
        """Test the mode table round trips through the header."""
        trace_file = read_trace(_written(tmp_path, mode_table=MEASURED_MODE_TABLE))
        assert trace_file.mode_table == MEASURED_MODE_TABLE

    def test_columns(self, tmp_path):
        """Test the body columns follow the trace kind."""
        assert read_trace(_written(tmp_path)).to_frame().columns.tolist() == DEMOD_COLUMNS
        raw = RawTrace(sample_rate=10.0, samples=np.ones(5))
        assert trace_to_file(raw).columns == RAW_COLUMNS

    def test_invalid_units(self):
        """Test units outside V, m and dimensionless are refused."""
        with pytest.raises(TraceFormatError):
            trace_to_file(tone_trace(units='A'))


class TestReadErrors:
    """Test cases for malformed trace files."""

    def test_missing_end_marker(self, tmp_path):
        """Test a file without a header terminator is rejected."""
        path = tmp_path / "plain.csv"
        path.write_text("time_s,I,Q\n0,1,2\n")
        with pytest.raises(TraceFormatError, match="end_header"):
            read_trace(path)

    def test_length_mismatch(self, tmp_path):
        """Test the declared length must match the body."""
        path = _written(tmp_path)
        _edit_header(path, "# length: 50", "# length: 51")
        with pytest.raises(TraceFormatError, match="declares 51"):
            read_trace(path)

    def test_unsupported_version(self, tmp_path):
        """Test an unknown format version is rejected."""
        path = _written(tmp_path)
        _edit_header(path, "# format_version: 1", "# format_version: 2")
        with pytest.raises(TraceFormatError, match="format_version"):
            read_trace(path)

    def test_unknown_units(self, tmp_path):
        """Test unknown units in the header are rejected."""
        path = _written(tmp_path)
        _edit_header(path, "# units: m", "# units: furlong")
        with pytest.raises(TraceFormatError, match="units"):
            read_trace(path)

    def test_wrong_columns(self, tmp_path):
        """Test body columns must match the kind."""
        path = _written(tmp_path)
        _edit_header(path, "time_s,I,Q", "t,I,Q")
        with pytest.raises(TraceFormatError, match="columns"):
            read_trace(path)

    def test_truncated_binary(self, tmp_path):
        """Test a binary body must hold whole records."""
        path = _written(tmp_path, binary=True)
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(TraceFormatError, match="whole number"):
            read_trace(path)

    def test_missing_file(self, tmp_path):
        """Test a missing file is a format error."""
        with pytest.raises(TraceFormatError, match="Cannot read"):
            read_trace(tmp_path / "absent.txt")

    def test_header_without_prefix(self, tmp_path):
        """Test every header line must start with '#'."""
        path = tmp_path / "bad.txt"
        path.write_text("kind: demod\n# end_header\n")
        with pytest.raises(TraceFormatError):
            read_trace(path)


class TestAtomicWrite:
    """Test cases for atomic file replacement."""

    def test_no_temporary_files_left(self, tmp_path):
        """Test only the target remains after a write."""
        _written(tmp_path)
        assert [p.name for p in tmp_path.iterdir()] == ["trace.txt"]

    def test_creates_parent(self, tmp_path):
        """Test missing parent directories are created."""
        path = atomic_write_bytes(tmp_path / "a" / "b" / "data.bin", b"xyz")
        assert path.read_bytes() == b"xyz"

    def test_retries_transient_rename(self, tmp_path, mocker, monkeypatch):
        """Test a failed rename is retried."""
        monkeypatch.setattr(trace_io._replace.retry, "sleep", lambda seconds: None)
        real_replace = os.replace
        calls = []

        def flaky(source, target):
            calls.append(source)
            if len(calls) == 1:
                raise OSError("busy")
            real_replace(source, target)

        mocker.patch.object(trace_io.os, "replace", side_effect=flaky)
        path = atomic_write_bytes(tmp_path / "data.bin", b"abc")
        assert path.read_bytes() == b"abc"
        assert len(calls) == 2

    def test_gives_up_and_cleans_up(self, tmp_path, mocker, monkeypatch):
        """Test a persistent failure is raised and the temporary file removed."""
        monkeypatch.setattr(trace_io._replace.retry, "sleep", lambda seconds: None)
        mocker.patch.object(trace_io.os, "replace", side_effect=OSError("read-only"))
        with pytest.raises(OSError):
            atomic_write_bytes(tmp_path / "data.bin", b"abc")
        assert list(tmp_path.iterdir()) == []

    def test_yaml_document(self, tmp_path):
        """Test result documents are written as sorted YAML."""
        path = write_yaml_document(tmp_path / "result.yaml", {"b": 1, "a": [1.5, None]})
        assert load_yaml(path) == {"a": [1.5, None], "b": 1}

    def test_file_sha256(self, tmp_path):
        """Test the digest matches hashlib."""
        path = tmp_path / "blob"
        path.write_bytes(b"levigrav")
        assert file_sha256(path) == hashlib.sha256(b"levigrav").hexdigest()


class TestIngest:
    """Test cases for normalising external exports."""

    IQ_MAP = {"time": "t", "i": "x", "q": "y", "center_frequency_Hz": 26.7,
              "sample_rate_Hz": 1.0}

    def _iq_csv(self, tmp_path, x=(0.1, 0.2, 0.3, 0.4), t=(0.0, 1.0, 2.0, 3.0)):
        return write_csv(tmp_path / "export.csv",
                         {"t": list(t), "x": list(x), "y": [0.5, 0.6, 0.7, 0.8]})

    def test_iq_export(self, tmp_path):
        """Test an I/Q export becomes a demodulated trace in volts."""
        path = self._iq_csv(tmp_path)
        trace_file = ingest(path, self.IQ_MAP)
        trace = trace_file.to_trace()
        assert trace_file.kind == "demod"
        assert trace.units == 'V'
        assert trace.samples[1] == pytest.approx(0.2 + 0.6j)
        assert trace_file.header["provenance"]["inputs"] == {"export.csv": file_sha256(path)}

    def test_rejects_non_finite_rows(self, tmp_path):
        """Test rows with missing values are reported by index."""
        path = self._iq_csv(tmp_path, x=(0.1, np.nan, 0.3, 0.4))
        with pytest.raises(TraceFormatError) as excinfo:
            ingest(path, self.IQ_MAP)
        assert excinfo.value.rows == [1]
        assert excinfo.value.to_record()["rows"] == [1]

    def test_allow_gaps(self, tmp_path):
        """Test gaps can be dropped and recorded."""
        path = self._iq_csv(tmp_path, x=(0.1, np.nan, 0.3, 0.4))
        trace_file = ingest(path, self.IQ_MAP, allow_gaps=True)
        assert trace_file.header["rejected_rows"] == [1]
        assert trace_file.body[:, 0].tolist() == [0.0, 2.0, 3.0]

    def test_non_monotone_time(self, tmp_path):
        """Test time must increase strictly."""
        path = self._iq_csv(tmp_path, t=(0.0, 2.0, 1.0, 3.0))
        with pytest.raises(TraceFormatError, match="row 2"):
            ingest(path, self.IQ_MAP)

    def test_needs_sample_rate(self, tmp_path):
        """Test a sample rate must be declared."""
        path = self._iq_csv(tmp_path)
        mapping = {k: v for k, v in self.IQ_MAP.items() if k != "sample_rate_Hz"}
        with pytest.raises(TraceFormatError, match="sample rate"):
            ingest(path, mapping)
        assert ingest(path, mapping, sample_rate=1.0).header["output_rate_Hz"] == 1.0

    def test_missing_column(self, tmp_path):
        """Test a mapped column must exist in the file."""
        with pytest.raises(TraceFormatError, match="missing columns"):
            ingest(self._iq_csv(tmp_path), dict(self.IQ_MAP, q="zz"))

    def test_needs_both_components(self, tmp_path):
        """Test I without Q is rejected."""
        mapping = {k: v for k, v in self.IQ_MAP.items() if k != "q"}
        with pytest.raises(TraceFormatError, match="both i and q"):
            ingest(self._iq_csv(tmp_path), mapping)

    def test_needs_center_frequency(self, tmp_path):
        """Test I/Q data must state the lock-in frequency."""
        mapping = {k: v for k, v in self.IQ_MAP.items() if k != "center_frequency_Hz"}
        with pytest.raises(TraceFormatError, match="center_frequency_Hz"):
            ingest(self._iq_csv(tmp_path), mapping)

    def test_raw_value_column(self, tmp_path):
        """Test a single value column becomes a raw trace."""
        path = write_csv(tmp_path / "raw.csv", {"t": [0.0, 0.01, 0.02], "v": [1.0, 2.0, 3.0]})
        trace_file = ingest(path, {"time": "t", "value": "v", "units": "m"}, sample_rate=100.0)
        assert trace_file.kind == "raw"
        assert trace_file.to_trace().samples.tolist() == [1.0, 2.0, 3.0]

    def test_delimiter_and_comments(self, tmp_path):
        """Test custom delimiters and comment lines are honoured."""
        path = tmp_path / "export.txt"
        path.write_text("# exported by lock-in\nt;v\n0;1.5\n0.01;2.5\n")
        mapping = {"time": "t", "value": "v", "delimiter": ";", "comment": "#",
                   "sample_rate_Hz": 100.0}
        assert ingest(path, mapping).to_trace().samples.tolist() == [1.5, 2.5]

    def test_column_map_file(self, tmp_path):
        """Test the column map can be read from YAML."""
        map_path = tmp_path / "columns.yaml"
        write_yaml_document(map_path, self.IQ_MAP)
        assert ingest(self._iq_csv(tmp_path), map_path).kind == "demod"

    def test_missing_input(self, tmp_path):
        """Test a missing export is a format error."""
        with pytest.raises(TraceFormatError):
            ingest(tmp_path / "absent.csv", self.IQ_MAP)

    def test_export_body(self, tmp_path):
        """Test the body exports as plain CSV."""
        trace_file = ingest(self._iq_csv(tmp_path), self.IQ_MAP)
        frame = pd.read_csv(export_body(tmp_path / "body.csv", trace_file))
        assert frame.columns.tolist() == DEMOD_COLUMNS
        assert frame["I"].tolist() == [0.1, 0.2, 0.3, 0.4]
