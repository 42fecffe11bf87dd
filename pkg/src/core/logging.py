import logging
import os
import sys

_LEVEL_ENV = "SQRTBA_LOG_LEVEL"


def _default_level() -> int:
    name = os.getenv(_LEVEL_ENV, "INFO").upper()
    return getattr(logging, name, logging.INFO)


def get_logger(name: str, level=None) -> logging.Logger:
    """Creates and configures a solver logger."""
    if level is None:
        level = _default_level()
    logger = logging.getLogger(name)
    logger.setLevel(level)

    handler = logging.StreamHandler(sys.stdout)
    handler.setLevel(level)

    formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    handler.setFormatter(formatter)

    # One handler per logger, even when modules are re-imported by tests
    if not logger.handlers:
        logger.addHandler(handler)
    logger.propagate = False

    return logger


def set_level(level) -> None:
    """Change the level of every solver logger created so far (int or level name)."""
    if isinstance(level, str):
        level = level.upper()
    for name, logger in logging.Logger.manager.loggerDict.items():
        if name.startswith("src.") and isinstance(logger, logging.Logger):
            logger.setLevel(level)
            for handler in logger.handlers:
                handler.setLevel(level)
