"""
Environment settings, read once from the process environment and an optional .env file.
"""

import os

from dotenv import load_dotenv

load_dotenv()


def thread_cap() -> int:
    """Maximum number of replications run in parallel (SWARMLAB_THREADS, default: CPU count)."""
    raw = os.getenv("SWARMLAB_THREADS", "")
    try:
        value = int(raw)
    except ValueError:
        value = os.cpu_count() or 1
    return max(1, value)


def log_level() -> str:
    return os.getenv("SWARMLAB_LOG_LEVEL", "INFO").upper()


def default_out_dir() -> str:
    return os.getenv("SWARMLAB_OUT_DIR", "out")
