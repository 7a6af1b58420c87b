from __future__ import annotations

import json
import logging
import sys
import time
from typing import Any, Mapping, TextIO

LOGGER_NAME = "mcfhomog"


def _jsonable(value: Any) -> Any:
    # numpy scalars and tuples of them show up in solver fields
    if hasattr(value, "item") and callable(value.item):
        try:
            return value.item()
        except (TypeError, ValueError):
            return str(value)
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


class JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        payload: dict[str, Any] = {
            "ts": int(time.time()),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }
        fields = getattr(record, "fields", None)
        if isinstance(fields, Mapping):
            payload["fields"] = {k: _jsonable(v) for k, v in fields.items()}
        return json.dumps(payload, separators=(",", ":"), sort_keys=True, default=str)


def setup_logging(level: str = "INFO", stream: TextIO | None = None) -> None:
    """Route all records as JSON lines to stderr; stdout carries scenario summaries."""
    logger = logging.getLogger()
    logger.setLevel(level.upper())
    handler = logging.StreamHandler(stream if stream is not None else sys.stderr)
    handler.setFormatter(JsonFormatter())
    logger.handlers = [handler]


def get_logger(module: str | None = None) -> logging.Logger:
    return logging.getLogger(LOGGER_NAME if not module else f"{LOGGER_NAME}.{module}")


def log(logger: logging.Logger, level: int, message: str, /, **fields: Any) -> None:
    logger.log(level, message, extra={"fields": fields})
