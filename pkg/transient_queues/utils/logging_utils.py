"""
Logging utilities for the transient queueing toolkit.

Standard output carries result tables only, so every handler installed here
writes to standard error or to a file. Warnings raised by numpy and scipy
(overflow in exponentials, quadrature that did not converge) are routed
through the `py.warnings` logger so they land in the same log.
"""

import logging
import sys
import warnings
from typing import List, Optional

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"


def _numeric_level(log_level: str) -> int:
    level = getattr(logging, str(log_level).upper(), None)
    if not isinstance(level, int):
        raise ValueError(f"Invalid log level: {log_level}")
    return level


def setup_logging(log_level: str = "INFO", log_file: Optional[str] = None) -> List[logging.Handler]:
    """
    Set up logging for the command-line tools.

    Args:
        log_level: The logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL).
        log_file: Optional path to a log file, written in addition to standard error.

    Returns:
        The handlers attached to the root logger.

    Raises:
        ValueError: If the log level is unknown.
    """
    numeric_level = _numeric_level(log_level)
    formatter = logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT)

    root_logger = logging.getLogger()
    root_logger.setLevel(numeric_level)
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)
        handler.close()

    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    for handler in handlers:
        handler.setLevel(numeric_level)
        handler.setFormatter(formatter)
        root_logger.addHandler(handler)

    # Numerical warnings are reported once per call site
    logging.captureWarnings(True)
    warnings.simplefilter("default", RuntimeWarning)
    return handlers
