"""Environment-driven process settings."""

import os
from typing import Optional

from dotenv import load_dotenv

DEFAULT_BATCH_SIZE = 128
DEFAULT_OTLP_ENDPOINT = "http://localhost:4317"


def load_environment(dotenv_path: Optional[str] = None) -> None:
    """
    Load variables from a .env file into the process environment.

    Existing environment variables win over values from the file.

    Args:
        dotenv_path: Explicit .env path. If None, python-dotenv searches upwards
                     from the working directory.
    """
    load_dotenv(dotenv_path=dotenv_path, override=False)


def env_flag(name: str, default: str = "false") -> bool:
    """Read a boolean flag; accepts true/1/yes in any case."""
    return os.getenv(name, default).lower() in ("true", "1", "yes")


def ensemble_threads() -> int:
    """
    Worker threads for ensemble batches.

    Reads IPP_THREADS. 0, unset or garbage means one thread per CPU.

    Returns:
        Thread count, at least 1
    """
    raw = os.getenv("IPP_THREADS", "0").strip()
    try:
        threads = int(raw)
    except ValueError:
        threads = 0
    if threads <= 0:
        threads = os.cpu_count() or 1
    return threads


def ensemble_batch_size() -> int:
    """Runs integrated together per vectorised batch (IPP_BATCH_SIZE)."""
    raw = os.getenv("IPP_BATCH_SIZE", str(DEFAULT_BATCH_SIZE)).strip()
    try:
        size = int(raw)
    except ValueError:
        size = DEFAULT_BATCH_SIZE
    return max(1, size)


def log_level() -> str:
    """Logging level name for the CLI (IPP_LOG_LEVEL, default WARNING)."""
    return os.getenv("IPP_LOG_LEVEL", "WARNING").upper()
