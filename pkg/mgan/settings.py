"""Process-level settings read from the environment (and an optional .env)."""

import logging
import os
from datetime import datetime

import pytz

from mgan.errors import ConfigurationError

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'
DEFAULT_LOG_LEVEL = 'INFO'

logger = logging.getLogger(__name__)


def current_time() -> datetime:
    return datetime.now(pytz.utc)


def worker_count() -> int:
    """Cap on worker parallelism, from MGAN_THREADS (defaults to the CPU count)."""
    raw = os.environ.get('MGAN_THREADS')
    if raw is None or raw.strip() == '':
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except ValueError:
        raise ConfigurationError(f'MGAN_THREADS must be an integer, got {raw!r}') from None
    if value < 1:
        raise ConfigurationError(f'MGAN_THREADS must be >= 1, got {value}')
    return value


def progress_enabled() -> bool:
    return os.environ.get('MGAN_PROGRESS', '0').strip().lower() in ('1', 'true', 'yes')


def log_level() -> str:
    level = os.environ.get('MGAN_LOG_LEVEL', DEFAULT_LOG_LEVEL).strip().upper()
    if not isinstance(logging.getLevelName(level), int):
        raise ConfigurationError(f'Unknown MGAN_LOG_LEVEL {level!r}')
    return level


def configure_logging(level: str | None = None) -> None:
    """Install one stream handler on the package logger."""
    root = logging.getLogger('mgan')
    root.setLevel(level or log_level())
    if not any(getattr(h, '_mgan_handler', False) for h in root.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._mgan_handler = True
        root.addHandler(handler)
