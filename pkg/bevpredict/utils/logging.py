"""
Logging configuration for bevpredict
"""

import logging
import sys


def setup_logging(level: str = "INFO") -> None:
    """Configure structured logging for the library and CLI"""

    formatter = logging.Formatter(
        fmt='%(asctime)s | %(levelname)-8s | %(name)s | %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )

    root_logger = logging.getLogger()
    root_logger.setLevel(getattr(logging, level.upper()))

    # The previous stream may already be closed, so the old handler is dropped unflushed
    for handler in list(root_logger.handlers):
        if getattr(handler, "_bevpredict", False):
            root_logger.removeHandler(handler)

    # Stdout carries CSV/PGM payloads, diagnostics go to stderr
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(formatter)
    console_handler._bevpredict = True
    root_logger.addHandler(console_handler)

    # Suppress noisy loggers
    logging.getLogger("joblib").setLevel(logging.WARNING)
