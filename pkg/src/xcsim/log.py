#!/usr/bin/env python3

import logging
import os
import sys
from typing import Optional

# trace is an alias of debug
LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "warning": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
    "trace": logging.DEBUG,
}


def setup_logging(quiet: bool = False, level: Optional[str] = None) -> None:
    """
    Configure the `xcsim` logger hierarchy.
    @param level: overrides the XCSIM_LOG environment variable
    """
    name = (level or os.environ.get("XCSIM_LOG", "info")).lower()
    if name not in LEVELS:
        raise ValueError(f"unknown log level: {name}")
    lvl = logging.WARNING if quiet else LEVELS[name]

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("[{levelname} {name}] {message}", style="{"))
    logger = logging.getLogger("xcsim")
    logger.handlers[:] = [handler]
    logger.setLevel(lvl)
    logger.propagate = False
