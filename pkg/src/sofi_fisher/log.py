"""
Structured logging.

Every record is a single JSON line on stderr so that stdout stays free for
CSV/JSON results:

    {"log": {"level": "warning", "message": "...", "name": "sofi_fisher.summary", "extra": {...}}}

The threshold comes from ``SOFI_FISHER_LOG`` (debug, info, warning, error,
critical; default warning) and can be lowered at runtime with
``set_level``.
"""
import json
import os
import sys

LEVELS = {"debug": 10, "info": 20, "warning": 30, "error": 40, "critical": 50}

_threshold: int = LEVELS.get(os.environ.get("SOFI_FISHER_LOG", "warning").lower(), 30)
_loggers: dict[str, "ServiceLogger"] = {}


def set_level(level: str) -> None:
    """Set the global log threshold by name."""
    global _threshold
    try:
        _threshold = LEVELS[level.lower()]
    except KeyError:
        raise ValueError(f"Unknown log level: {level}") from None


def get_logger(name: str) -> "ServiceLogger":
    """Return the shared logger for ``name``."""
    if name not in _loggers:
        _loggers[name] = ServiceLogger(name)
    return _loggers[name]


class ServiceLogger:
    """
    JSON-lines logger writing to stderr.

    Records below the global threshold are dropped; a logger can also be
    silenced individually with ``logger._enabled = False``.
    """

    def __init__(self, name: str):
        self.name = name
        self._enabled = True

    def _emit(self, level: str, message: str, extra: dict | None = None):
        if not self._enabled or LEVELS[level] < _threshold:
            return

        log_msg = {
            "log": {
                "level": level,
                "message": message,
                "name": self.name,
            }
        }
        if extra:
            log_msg["log"]["extra"] = extra

        print(json.dumps(log_msg, default=str), file=sys.stderr, flush=True)

    def debug(self, message: str, extra: dict | None = None):
        self._emit("debug", message, extra)

    def info(self, message: str, extra: dict | None = None):
        self._emit("info", message, extra)

    def warning(self, message: str, extra: dict | None = None):
        self._emit("warning", message, extra)

    def error(self, message: str, extra: dict | None = None):
        self._emit("error", message, extra)

    def critical(self, message: str, extra: dict | None = None):
        self._emit("critical", message, extra)
