"""
Environment overrides. Only the output directory and the worker count can be
set this way; everything physical comes from the run configuration.
"""

import os
import logging
from pathlib import Path

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "LEVIGRAV_OUTPUT_DIR"
THREADS_ENV = "LEVIGRAV_THREADS"
DEFAULT_OUTPUT_DIR = "levigrav_output"


def output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_DIR_ENV, DEFAULT_OUTPUT_DIR))


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        threads = int(raw)
    except ValueError:
        logger.warning(f"Ignoring non-integer {THREADS_ENV}={raw!r}, using 1 thread")
        return 1
    return max(threads, 1)
