"""
Logging configuration for the application.

Console output goes to stderr because stdout carries report paths. The optional
log file records UTC timestamps so entries line up with evidence times.
"""

import logging
import logging.handlers
import os
import sys
import time

CONSOLE_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
FILE_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s'
LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL')


def resolve_level(log_level: str) -> int:
    """Map a level name to its number; unknown names raise ValueError."""
    name = (log_level or '').strip().upper()
    if name not in LEVELS:
        raise ValueError(f"log level must be one of {', '.join(LEVELS)}, got {log_level!r}")
    return getattr(logging, name)


def _file_handler(log_dir: str, log_file: str) -> logging.Handler:
    os.makedirs(log_dir, exist_ok=True)
    handler = logging.handlers.RotatingFileHandler(
        os.path.join(log_dir, log_file),
        maxBytes=10*1024*1024,  # 10MB
        backupCount=5,
        encoding='utf-8',
    )
    handler.setLevel(logging.DEBUG)
    formatter = logging.Formatter(FILE_FORMAT, datefmt='%Y-%m-%dT%H:%M:%SZ')
    formatter.converter = time.gmtime
    handler.setFormatter(formatter)
    return handler


def setup_logging(log_level: str = "INFO", log_file: str = "stitcher.log", log_dir: str = "logs") -> logging.Logger:
    """Configure the root logger; an empty log_dir disables the file handler."""
    level = resolve_level(log_level)

    root = logging.getLogger()
    root.handlers.clear()

    console = logging.StreamHandler(sys.stderr)
    console.setLevel(level)
    console.setFormatter(logging.Formatter(CONSOLE_FORMAT, datefmt='%H:%M:%S'))
    root.addHandler(console)

    if log_dir:
        root.addHandler(_file_handler(log_dir, log_file))
        # the file keeps DEBUG even when the console is quieter
        root.setLevel(logging.DEBUG)
    else:
        root.setLevel(level)

    logger = logging.getLogger(__name__)
    logger.debug(f"Logging at {logging.getLevelName(level)} to stderr"
                 + (f" and {os.path.join(log_dir, log_file)}" if log_dir else ""))
    return root
