from __future__ import annotations
import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

_OUT_DIR: str = os.getenv("JKOLAB_OUT_DIR", "out")
_LOG_LEVEL: str = os.getenv("JKOLAB_LOG_LEVEL", "INFO")
_THREADS: int = int(os.getenv("JKOLAB_THREADS", "1"))
_SEED: int = int(os.getenv("JKOLAB_SEED", "0"))


def default_out_dir() -> Path:
    return Path(_OUT_DIR)


def default_log_level() -> str:
    return _LOG_LEVEL.upper()


def default_threads() -> int:
    return max(1, _THREADS)


def default_seed() -> int:
    return _SEED


__all__ = [
    "default_out_dir",
    "default_log_level",
    "default_threads",
    "default_seed",
]
