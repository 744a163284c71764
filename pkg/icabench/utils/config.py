import logging
import os
from dataclasses import dataclass
from functools import lru_cache

from dotenv import load_dotenv

from icabench.utils.errors import InvalidConfigError

DEFAULT_ORACLE_CAP = 32


@dataclass(frozen=True)
class Settings:
    """
    Process-level settings read from the environment.

    Attributes:
        threads (int): Upper bound on concurrently running repeats (ICABENCH_THREADS).
        log_level (int): Logging level for icabench loggers (ICABENCH_LOG_LEVEL).
        oracle_cap (int): Largest N for which the dense Hessian may be built (ICABENCH_ORACLE_CAP).
    """

    threads: int
    log_level: int
    oracle_cap: int


def _read_positive_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = int(raw)
    except ValueError as e:
        raise InvalidConfigError(f"{name} must be an integer, got '{raw}'") from e
    if value < 1:
        raise InvalidConfigError(f"{name} must be >= 1, got {value}")
    return value


def _read_log_level(name: str) -> int:
    raw = os.getenv(name, "INFO").strip().upper()
    level = logging.getLevelName(raw)
    if not isinstance(level, int):
        raise InvalidConfigError(f"{name} must be a logging level name, got '{raw}'")
    return level


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """
    Loads a .env file (if present) and builds the Settings once per process.

    Returns:
        Settings: The parsed settings.

    Raises:
        InvalidConfigError: If a variable is set to an invalid value.
    """
    load_dotenv()

    return Settings(
        threads=_read_positive_int("ICABENCH_THREADS", os.cpu_count() or 1),
        log_level=_read_log_level("ICABENCH_LOG_LEVEL"),
        oracle_cap=_read_positive_int("ICABENCH_ORACLE_CAP", DEFAULT_ORACLE_CAP),
    )
