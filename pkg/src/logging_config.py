"""
Logging for lab runs.

Log lines carry the run context as a ``[key=value ...]`` prefix so that
interleaved phases (training, evaluation, verification) stay readable in a
single stdout stream. Level and format come from ``LOG_LEVEL`` and
``LOG_FORMAT`` (see ``src.config.load_logging_config``).
"""

import logging
import logging.config
import sys
import time
from contextlib import contextmanager
from typing import Any, Dict, Mapping, Union

import psutil

from src.config import LoggingConfig

DATE_FORMAT = '%Y-%m-%d %H:%M:%S'
DETAILED_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(filename)s:%(lineno)d - %(message)s'


class ContextualLogger:
    """
    Logger wrapper that prefixes messages with run context.

    Typical keys are ``run`` (the run id), ``phase`` and ``mode``. Context is
    shared by everything that logs through this wrapper, so scoped changes
    should go through ``bind``.
    """

    def __init__(self, logger: logging.Logger):
        self.logger = logger
        self.context: Dict[str, Any] = {}

    def set_context(self, **kwargs) -> None:
        self.context.update(kwargs)

    def clear_context(self) -> None:
        self.context.clear()

    def remove_context(self, *keys) -> None:
        for key in keys:
            self.context.pop(key, None)

    @contextmanager
    def bind(self, **kwargs):
        """Add context for the duration of a block, then restore the previous context."""
        saved = dict(self.context)
        self.context.update(kwargs)
        try:
            yield self
        finally:
            self.context = saved

    def _format_message(self, message: str) -> str:
        if not self.context:
            return message
        prefix = " ".join(f"{key}={value}" for key, value in self.context.items())
        return f"[{prefix}] {message}"

    def debug(self, message: str, *args, **kwargs) -> None:
        self.logger.debug(self._format_message(message), *args, **kwargs)

    def info(self, message: str, *args, **kwargs) -> None:
        self.logger.info(self._format_message(message), *args, **kwargs)

    def warning(self, message: str, *args, **kwargs) -> None:
        self.logger.warning(self._format_message(message), *args, **kwargs)

    def error(self, message: str, *args, **kwargs) -> None:
        self.logger.error(self._format_message(message), *args, **kwargs)


def logging_dict(logging_config: LoggingConfig) -> Dict[str, Any]:
    """dictConfig payload: one stdout handler, detailed format at DEBUG."""
    level = logging_config.level
    return {
        'version': 1,
        'disable_existing_loggers': False,
        'formatters': {
            'main': {'format': logging_config.format, 'datefmt': DATE_FORMAT},
            'detailed': {'format': DETAILED_FORMAT, 'datefmt': DATE_FORMAT},
        },
        'handlers': {
            'console': {
                'class': 'logging.StreamHandler',
                'level': level,
                'formatter': 'detailed' if level == 'DEBUG' else 'main',
                'stream': sys.stdout,
            }
        },
        'loggers': {
            'src': {'level': level, 'handlers': ['console'], 'propagate': False},
        },
        'root': {'level': level, 'handlers': ['console']},
    }


def setup_logging(logging_config: LoggingConfig) -> None:
    logging.config.dictConfig(logging_dict(logging_config))


def get_logger(name: str) -> ContextualLogger:
    """Contextual logger for a module (pass ``__name__``)."""
    return ContextualLogger(logging.getLogger(name))


def resident_memory_mb() -> float:
    return psutil.Process().memory_info().rss / 1024 / 1024


@contextmanager
def log_operation(logger: Union[logging.Logger, ContextualLogger],
                  operation: str,
                  level: str = 'INFO',
                  **context):
    """
    Log the start and end of a lab phase with wall time and memory growth.

    Args:
        logger: Plain or contextual logger
        operation: Human-readable phase description
        level: Level of the start/completion messages
        **context: Context added for the duration of the block (contextual loggers only)

    Failures are logged at ERROR with the elapsed time and re-raised.
    """
    scope = logger.bind(**context) if isinstance(logger, ContextualLogger) else _no_scope()
    with scope:
        emit = getattr(logger, level.lower())
        start = time.perf_counter()
        rss_start = resident_memory_mb()
        emit(f"Starting {operation}")
        try:
            yield
        except Exception as e:
            logger.error(f"Failed {operation} after {time.perf_counter() - start:.3f}s: {e}")
            raise
        rss_end = resident_memory_mb()
        emit(f"Completed {operation} in {time.perf_counter() - start:.3f}s "
             f"(rss {rss_end:.1f} MB, {rss_end - rss_start:+.1f} MB)")


@contextmanager
def _no_scope():
    yield


def log_progress(logger: Union[logging.Logger, ContextualLogger], iteration: int, total: int,
                 **values) -> None:
    """One INFO line per checkpoint of a training loop: ``iter i/total: key value ...``."""
    parts = []
    for key, value in values.items():
        parts.append(f"{key} {value:.5g}" if isinstance(value, float) else f"{key} {value}")
    logger.info(f"iter {iteration}/{total}: " + ", ".join(parts))


def log_config_summary(logger: Union[logging.Logger, ContextualLogger], source: str,
                       flat_config: Mapping[str, Any]) -> None:
    """INFO summary of the effective configuration; every key at DEBUG."""
    logger.info(f"configuration from {source}: {len(flat_config)} keys")
    for key, value in flat_config.items():
        logger.debug(f"  {key} = {value}")
