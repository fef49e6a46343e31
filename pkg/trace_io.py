"""
Trace files, result documents and ingestion of external lock-in exports.

A trace file is a YAML header, every line prefixed with "# " and closed by
"# end_header", followed by the body: CSV text (time, then components) or a
little-endian float64 block when the header says `body: binary`. Floats are
written at full repr precision, so text round trips are bit-exact.
"""

import io
import os
import hashlib
import logging
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd
import yaml
from tenacity import retry, retry_if_exception_type, stop_after_attempt, wait_exponential

from calibration import CalibrationResult
from core_model import ModeTable
from errors import DomainError, TraceFormatError
from trace_synth import DemodTrace, RawTrace

logger = logging.getLogger(__name__)

TOOLKIT_VERSION = "1.0.0"
FORMAT_VERSION = 1
HEADER_PREFIX = "# "
END_MARKER = "# end_header"
VALID_UNITS = ("V", "m", "dimensionless")
RAW_COLUMNS = ["time_s", "value"]
DEMOD_COLUMNS = ["time_s", "I", "Q"]

Trace = Union[RawTrace, DemodTrace]


@dataclass(frozen=True)
class Provenance:
    config_hash: Optional[str] = None
    inputs: Dict[str, str] = field(default_factory=dict)
    command: Optional[str] = None
    toolkit_version: str = TOOLKIT_VERSION

    def to_dict(self) -> Dict[str, Any]:
        return {
            "config_hash": self.config_hash,
            "inputs": dict(sorted(self.inputs.items())),
            "command": self.command,
            "toolkit_version": self.toolkit_version,
        }


def file_sha256(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


@retry(stop=stop_after_attempt(3), wait=wait_exponential(multiplier=1, min=4, max=10),
       retry=retry_if_exception_type(OSError), reraise=True)
def _replace(source: str, target: str) -> None:
    os.replace(source, target)


def atomic_write_bytes(path: Union[str, Path], data: bytes) -> Path:
    """Write to a temporary file beside `path`, then rename over it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, temporary = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
            handle.flush()
            os.fsync(handle.fileno())
        _replace(temporary, str(path))
    except BaseException:
        if os.path.exists(temporary):
            os.unlink(temporary)
        raise
    logger.debug(f"Wrote {len(data)} bytes to {path}")
    return path


def write_yaml_document(path: Union[str, Path], document: Dict[str, Any]) -> Path:
    text = yaml.safe_dump(document, sort_keys=True, default_flow_style=False)
    return atomic_write_bytes(path, text.encode("utf-8"))


def write_frame(path: Union[str, Path], frame: pd.DataFrame) -> Path:
    return atomic_write_bytes(path, frame.to_csv(index=False, lineterminator="\n").encode("utf-8"))


@dataclass(frozen=True, eq=False)
class TraceFile:
    header: Dict[str, Any]
    body: np.ndarray

    @property
    def kind(self) -> str:
        return self.header["kind"]

    @property
    def units(self) -> str:
        return self.header["units"]

    @property
    def calibration(self) -> Optional[CalibrationResult]:
        tag = self.header.get("calibration")
        return CalibrationResult.from_header(tag) if tag else None

    @property
    def mode_table(self) -> Optional[ModeTable]:
        rows = self.header.get("mode_table")
        return ModeTable.from_header(rows) if rows else None

    @property
    def columns(self) -> List[str]:
        return RAW_COLUMNS if self.kind == "raw" else DEMOD_COLUMNS

    def to_trace(self) -> Trace:
        h = self.header
        tag = h.get("calibration_tag")
        if h.get("calibration"):
            tag = {"voltage_sensitivity_V_per_m": h["calibration"]["voltage_sensitivity_V_per_m"]}
        if self.kind == "raw":
            return RawTrace(sample_rate=h["sample_rate_Hz"], samples=self.body[:, 1].copy(),
                            start_time=h["start_time_s"], units=h["units"],
                            sensitivity=(tag or {}).get("voltage_sensitivity_V_per_m"))
        return DemodTrace(center_frequency=h["center_frequency_Hz"],
                          output_rate=h["output_rate_Hz"],
                          samples=self.body[:, 1] + 1j * self.body[:, 2],
                          calibration_tag=tag, start_time=h["start_time_s"], units=h["units"],
                          settle_samples=h.get("settle_samples", 0),
                          source_sample_rate=h.get("source_sample_rate_Hz"))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.body, columns=self.columns)


def trace_to_file(trace: Trace, calibration: Optional[CalibrationResult] = None,
                  mode_table: Optional[ModeTable] = None, seed: Optional[int] = None,
                  provenance: Optional[Provenance] = None) -> TraceFile:
    if trace.units not in VALID_UNITS:
        raise TraceFormatError(f"Unknown units {trace.units!r}; expected one of {VALID_UNITS}")
    header: Dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "units": trace.units,
        "start_time_s": float(trace.start_time),
        "length": int(len(trace.samples)),
        "seed": seed,
        "calibration": calibration.to_header() if calibration is not None else None,
        "mode_table": mode_table.to_header() if mode_table is not None else None,
        "provenance": (provenance or Provenance()).to_dict(),
    }
    times = trace.times
    if isinstance(trace, DemodTrace):
        header.update(kind="demod", center_frequency_Hz=float(trace.center_frequency),
                      output_rate_Hz=float(trace.output_rate),
                      settle_samples=int(trace.settle_samples),
                      source_sample_rate_Hz=(float(trace.source_sample_rate)
                                             if trace.source_sample_rate is not None else None))
        tag = trace.calibration_tag
        body = np.column_stack([times, trace.samples.real, trace.samples.imag])
    else:
        header.update(kind="raw", sample_rate_Hz=float(trace.sample_rate))
        tag = ({"voltage_sensitivity_V_per_m": trace.sensitivity}
               if trace.sensitivity is not None else None)
        body = np.column_stack([times, trace.samples])
    if calibration is None and tag:
        header["calibration_tag"] = dict(tag)
    return TraceFile(header=header, body=body)


def _header_text(header: Dict[str, Any]) -> str:
    dumped = yaml.safe_dump(header, sort_keys=True, default_flow_style=False)
    lines = [HEADER_PREFIX + line for line in dumped.splitlines()]
    return "\n".join(lines + [END_MARKER]) + "\n"


def write_trace(path: Union[str, Path], trace_file: TraceFile, binary: bool = False) -> Path:
    header = dict(trace_file.header, body="binary" if binary else "text")
    head = _header_text(header).encode("utf-8")
    if binary:
        data = head + np.ascontiguousarray(trace_file.body, dtype="<f8").tobytes()
    else:
        frame = pd.DataFrame(trace_file.body, columns=trace_file.columns)
        data = head + frame.to_csv(index=False, lineterminator="\n").encode("utf-8")
    logger.info(f"Writing {header['kind']} trace of {header['length']} samples to {path}")
    return atomic_write_bytes(path, data)


def _parse_header(lines: List[str]) -> Dict[str, Any]:
    for number, line in enumerate(lines):
        if not line.startswith(HEADER_PREFIX.rstrip()):
            raise TraceFormatError(f"Header line {number + 1} does not start with '#'")
    text = "\n".join(line[len(HEADER_PREFIX):] if line.startswith(HEADER_PREFIX) else ""
                     for line in lines)
    try:
        header = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise TraceFormatError(f"Trace header is not valid YAML: {e}") from e
    if not isinstance(header, dict):
        raise TraceFormatError("Trace header must be a mapping")
    return header


def _validate_header(header: Dict[str, Any]) -> None:
    required = ["format_version", "kind", "units", "length", "start_time_s", "body"]
    missing = [key for key in required if key not in header]
    if missing:
        raise TraceFormatError(f"Trace header is missing {missing}")
    if header["format_version"] != FORMAT_VERSION:
        raise TraceFormatError(f"Unsupported format_version {header['format_version']}")
    if header["units"] not in VALID_UNITS:
        raise TraceFormatError(f"Unknown units {header['units']!r}")
    if header["kind"] == "raw":
        rates = ["sample_rate_Hz"]
    elif header["kind"] == "demod":
        rates = ["output_rate_Hz", "center_frequency_Hz"]
    else:
        raise TraceFormatError(f"Unknown trace kind {header['kind']!r}")
    for key in rates:
        if key not in header:
            raise TraceFormatError(f"Trace header is missing {key}")


def read_trace(path: Union[str, Path]) -> TraceFile:
    try:
        with open(path, "rb") as handle:
            data = handle.read()
    except OSError as e:
        raise TraceFormatError(f"Cannot read trace {path}: {e}") from e
    marker = (END_MARKER + "\n").encode("utf-8")
    split = data.find(marker)
    if split < 0:
        raise TraceFormatError(f"{path}: no '{END_MARKER}' line; header must precede the body")
    header = _parse_header(data[:split].decode("utf-8").splitlines())
    _validate_header(header)
    columns = RAW_COLUMNS if header["kind"] == "raw" else DEMOD_COLUMNS
    raw_body = data[split + len(marker):]

    if header["body"] == "binary":
        if len(raw_body) % (8 * len(columns)):
            raise TraceFormatError(f"{path}: binary body is not a whole number of records")
        body = np.frombuffer(raw_body, dtype="<f8").reshape(-1, len(columns)).astype(float)
    elif header["body"] == "text":
        try:
            frame = pd.read_csv(io.StringIO(raw_body.decode("utf-8")),
                                float_precision="round_trip")
        except (ValueError, pd.errors.ParserError) as e:
            raise TraceFormatError(f"{path}: unreadable body: {e}") from e
        if list(frame.columns) != columns:
            raise TraceFormatError(f"{path}: body columns {list(frame.columns)}, "
                                   f"expected {columns}")
        body = frame.to_numpy(dtype=float)
    else:
        raise TraceFormatError(f"{path}: unknown body encoding {header['body']!r}")

    if len(body) != header["length"]:
        raise TraceFormatError(f"{path}: header declares {header['length']} samples, "
                               f"body holds {len(body)}")
    return TraceFile(header=header, body=body)


def load_trace(path: Union[str, Path]) -> Trace:
    return read_trace(path).to_trace()


def _load_column_map(column_map: Union[str, Path, Dict[str, Any]]) -> Dict[str, Any]:
    if isinstance(column_map, dict):
        return dict(column_map)
    try:
        with open(column_map, "r") as handle:
            loaded = yaml.safe_load(handle)
    except (OSError, yaml.YAMLError) as e:
        raise TraceFormatError(f"Cannot read column map {column_map}: {e}") from e
    if not isinstance(loaded, dict):
        raise TraceFormatError("Column map must be a mapping")
    return loaded


def ingest(path: Union[str, Path], column_map: Union[str, Path, Dict[str, Any]],
           sample_rate: Optional[float] = None, allow_gaps: bool = False) -> TraceFile:
    """
    Normalise a delimited export into a TraceFile.

    The column map names `time` and either `i` and `q` (demodulated) or `value`
    (raw), plus optional `delimiter`, `comment`, `units`, `center_frequency_Hz`
    and `sample_rate_Hz`. Rows holding non-finite values are rejected with their
    indices; under `allow_gaps` they are dropped and recorded in the header.
    """
    mapping = _load_column_map(column_map)
    rate = sample_rate if sample_rate is not None else mapping.get("sample_rate_Hz")
    if rate is None or not float(rate) > 0:
        raise TraceFormatError("Ingestion needs a declared sample rate > 0")
    rate = float(rate)
    if "time" not in mapping:
        raise TraceFormatError("Column map must name the time column")
    demodulated = "i" in mapping or "q" in mapping
    if demodulated and not ("i" in mapping and "q" in mapping):
        raise TraceFormatError("Column map must name both i and q columns")
    if not demodulated and "value" not in mapping:
        raise TraceFormatError("Column map must name i/q or value columns")
    names = ([mapping["time"], mapping["i"], mapping["q"]] if demodulated
             else [mapping["time"], mapping["value"]])

    try:
        frame = pd.read_csv(path, sep=mapping.get("delimiter", ","),
                            comment=mapping.get("comment"), float_precision="round_trip")
    except (OSError, ValueError, pd.errors.ParserError) as e:
        raise TraceFormatError(f"Cannot read {path}: {e}") from e
    missing = [name for name in names if name not in frame.columns]
    if missing:
        raise TraceFormatError(f"{path}: missing columns {missing}")
    values = frame[names].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)

    bad = [int(i) for i in np.flatnonzero(~np.all(np.isfinite(values), axis=1))]
    if bad and not allow_gaps:
        raise TraceFormatError(f"{path}: {len(bad)} rows with non-finite values", rows=bad)
    if bad:
        logger.warning(f"Dropping {len(bad)} non-finite rows from {path}: {bad[:10]}")
        values = values[np.all(np.isfinite(values), axis=1)]
    if len(values) == 0:
        raise TraceFormatError(f"{path}: no usable rows")

    steps = np.diff(values[:, 0])
    if np.any(steps <= 0):
        row = int(np.flatnonzero(steps <= 0)[0]) + 1
        raise TraceFormatError(f"{path}: time is not strictly increasing at row {row}", rows=[row])

    units = mapping.get("units", "V")
    start = float(values[0, 0])
    try:
        if demodulated:
            if "center_frequency_Hz" not in mapping:
                raise TraceFormatError("Column map must give center_frequency_Hz for I/Q data")
            trace: Trace = DemodTrace(center_frequency=float(mapping["center_frequency_Hz"]),
                                      output_rate=rate,
                                      samples=values[:, 1] + 1j * values[:, 2],
                                      start_time=start, units=units)
        else:
            trace = RawTrace(sample_rate=rate, samples=values[:, 1], start_time=start, units=units)
    except DomainError as e:
        raise TraceFormatError(f"{path}: {e}") from e

    provenance = Provenance(inputs={Path(path).name: file_sha256(path)}, command="ingest")
    trace_file = trace_to_file(trace, provenance=provenance)
    header = dict(trace_file.header)
    if bad:
        header["rejected_rows"] = bad
    logger.info(f"Ingested {len(values)} rows from {path} as a {header['kind']} trace")
    # keep the time column exactly as read
    body = trace_file.body.copy()
    body[:, 0] = values[:, 0]
    return TraceFile(header=header, body=body)


def export_body(path: Union[str, Path], trace_file: TraceFile) -> Path:
    """Header-less CSV of the body, the shape external tools exchange."""
    return write_frame(path, trace_file.to_frame())
