import logging
import os

from rich.console import Console
from rich.logging import RichHandler

ROOT_LOGGER = "mellm"

_configured = False


def configure_logging(level: str | int | None = None) -> None:
    """
    Attach a single rich handler (stderr) to the package logger.

    Args:
        level: logging level name or number; falls back to MELLM_LOG_LEVEL, then WARNING
    """
    global _configured

    if level is None:
        level = os.environ.get("MELLM_LOG_LEVEL", "WARNING")
    if isinstance(level, str):
        level = level.upper()

    root = logging.getLogger(ROOT_LOGGER)
    root.setLevel(level)

    if not _configured:
        handler = RichHandler(
            console=Console(stderr=True),
            show_path=False,
            rich_tracebacks=False,
        )
        handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))
        root.addHandler(handler)
        root.propagate = False
        _configured = True


def get_logger(name: str) -> logging.Logger:
    """Return a logger below the package root, e.g. mellm.core.tvl1_solver."""
    if name.startswith("src."):
        name = name[len("src."):]
    return logging.getLogger(f"{ROOT_LOGGER}.{name}")
