import logging

import colorlog

from icabench.utils.config import get_settings
from icabench.utils.errors import InvalidConfigError


def get_logger(name: str) -> logging.Logger:
    """
    Creates and returns a color-coded logger using the colorlog package.

    The logger level comes from ICABENCH_LOG_LEVEL (see icabench.utils.config).
    Repeated calls for the same name return the already configured logger,
    so handlers are never attached twice.

    Args:
        name (str): The name of the logger, typically passed as __name__.

    Returns:
        logging.Logger: A configured logger instance.
    """
    logger = logging.getLogger(name)

    # If this logger already has handlers, return it as-is to avoid duplicates.
    if logger.handlers:
        return logger

    try:
        level = get_settings().log_level
    except InvalidConfigError:
        # The CLI reports the bad setting itself once it starts.
        level = logging.INFO
    logger.setLevel(level)

    # %(log_color)s carries the colorlog escape codes; the rest mirrors the
    # usual "[LEVEL] module:line - message" layout.
    formatter = colorlog.ColoredFormatter(
        "%(log_color)s[%(levelname)s] %(name)s:%(lineno)d - %(message)s",
        log_colors={
            "DEBUG":    "light_black",
            "INFO":     "white",
            "WARNING":  "yellow",
            "ERROR":    "red",
            "CRITICAL": "bold_red",
        }
    )

    console_handler = logging.StreamHandler()
    console_handler.setLevel(logging.DEBUG)
    console_handler.setFormatter(formatter)

    logger.addHandler(console_handler)
    logger.propagate = False

    return logger


def set_level(level: int) -> None:
    """
    Changes the level of every icabench logger created so far (used by the
    CLI's --verbose flag).

    Args:
        level (int): A logging level such as logging.DEBUG.
    """
    for name, candidate in logging.Logger.manager.loggerDict.items():
        if name.startswith("icabench") and isinstance(candidate, logging.Logger):
            candidate.setLevel(level)
