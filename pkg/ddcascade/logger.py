"""Log setup for the ddcascade commands.

Each command gets its own rotating log file (10MB x 10 backups) under the
configured log directory, optionally mirrored to the console. Library modules
log through ``logging.getLogger(__name__)``; setup_logging attaches the same
handlers to the ``ddcascade`` logger so panel-level DEBUG output lands in the
command's file. Log files untouched for ``retention_days`` are deleted when a
command starts.

Example:
    >>> from ddcascade.logger import setup_logging
    >>> logger = setup_logging('ddcascade_multiply.log', level='DEBUG', log_dir='logs')
    >>> logger.info('Multiply started')
"""

import logging
import time
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import List, Optional, Sequence, Union


LOG_FORMAT = '%(asctime)s [%(levelname)s] %(name)s: %(message)s'
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'
LIBRARY_LOGGERS = ('ddcascade',)

_module_logger = logging.getLogger(__name__)


def cleanup_old_logs(log_dir: Union[str, Path], retention_days: int = 30) -> int:
    """Delete ``*.log`` files (and their rotated backups) older than retention_days.

    Returns:
        Number of files deleted
    """
    log_dir = Path(log_dir)
    if not log_dir.is_dir():
        return 0

    cutoff = time.time() - retention_days * 86400
    deleted = 0
    for path in log_dir.glob('*.log*'):
        try:
            if path.is_file() and path.stat().st_mtime < cutoff:
                path.unlink()
                deleted += 1
                _module_logger.debug(f"Deleted old log file: {path.name}")
        except OSError as e:
            _module_logger.warning(f"Could not delete {path.name}: {e}")
    return deleted


def _build_handlers(log_path: Path, level: int, max_bytes: int, backup_count: int,
                    console: bool) -> List[logging.Handler]:
    formatter = logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT)
    handlers: List[logging.Handler] = [
        RotatingFileHandler(log_path, maxBytes=max_bytes, backupCount=backup_count, encoding='utf-8')
    ]
    if console:
        handlers.append(logging.StreamHandler())
    for handler in handlers:
        handler.setLevel(level)
        handler.setFormatter(formatter)
    return handlers


def _attach(logger: logging.Logger, handlers: Sequence[logging.Handler], level: int) -> None:
    for old in list(logger.handlers):
        logger.removeHandler(old)
        old.close()
    for handler in handlers:
        logger.addHandler(handler)
    logger.setLevel(level)
    logger.propagate = False


def setup_logging(
    log_file: str,
    level: str = 'INFO',
    log_dir: Optional[Union[str, Path]] = None,
    max_bytes: int = 10 * 1024 * 1024,
    backup_count: int = 10,
    retention_days: int = 30,
    console: bool = True,
    capture: Sequence[str] = LIBRARY_LOGGERS,
) -> logging.Logger:
    """Configure the logger of one command.

    Args:
        log_file: File name inside log_dir; its stem names the logger
        level: 'DEBUG', 'INFO', 'WARNING' or 'ERROR'
        log_dir: Directory for log files (default: <repo>/logs)
        max_bytes: Rotation size
        backup_count: Rotated files kept
        retention_days: Age after which old log files are deleted
        console: Also write to stderr
        capture: Library loggers that share the handlers

    Returns:
        The configured logger
    """
    log_dir = Path(log_dir) if log_dir is not None else Path(__file__).parent.parent / 'logs'
    log_dir.mkdir(parents=True, exist_ok=True)
    cleanup_old_logs(log_dir, retention_days)

    log_level = getattr(logging, level.upper(), logging.INFO)
    handlers = _build_handlers(log_dir / log_file, log_level, max_bytes, backup_count, console)

    logger = logging.getLogger(Path(log_file).stem)
    _attach(logger, handlers, log_level)
    for name in capture:
        _attach(logging.getLogger(name), handlers, log_level)
    return logger


class LogContext:
    """Temporarily run a logger, the captured library loggers and all their
    handlers at another level.

    Example:
        >>> with LogContext(logger, 'DEBUG'):
        ...     run_checks(counts, seed, logger)
    """

    def __init__(self, logger: logging.Logger, level: str, capture: Sequence[str] = LIBRARY_LOGGERS):
        self.level = getattr(logging, level.upper())
        self.loggers = [logger] + [logging.getLogger(name) for name in capture]
        self._saved = []

    def __enter__(self) -> logging.Logger:
        seen = set()
        for logger in self.loggers:
            self._saved.append((logger, logger.level))
            logger.setLevel(self.level)
            for handler in logger.handlers:
                # command and library loggers share handlers
                if id(handler) not in seen:
                    seen.add(id(handler))
                    self._saved.append((handler, handler.level))
                    handler.setLevel(self.level)
        return self.loggers[0]

    def __exit__(self, exc_type, exc_val, exc_tb):
        for target, level in reversed(self._saved):
            target.setLevel(level)
        self._saved = []
