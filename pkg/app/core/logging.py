# app/core/logging.py
import logging
import sys

from app.core.config import settings

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(level: str | None = None) -> None:
    """Configures the root logger once; records go to stderr so stdout carries only JSON."""
    lvl = (level or settings.LOG_LEVEL or "WARNING").upper()
    root = logging.getLogger()
    if not any(getattr(h, "_transverse", False) for h in root.handlers):
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._transverse = True  # type: ignore[attr-defined]
        root.addHandler(handler)
    root.setLevel(getattr(logging, lvl, logging.WARNING))
