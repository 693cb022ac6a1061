import logging
import sys
from logging.handlers import RotatingFileHandler
from typing import List, Optional

from fractal_penergy.core.config import Settings
from fractal_penergy.core.dependency import get_settings
from fractal_penergy.core.errors import UsageError

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s - %(message)s"


def configure_logging(cfg: Optional[Settings] = None, level: Optional[str] = None) -> None:
    """Configure logging for one CLI run.

    Records go to stderr so tables and JSON printed on stdout stay clean.
    ``level`` (the --log-level flag) wins over LOG_LEVEL. With LOG_TO_FILE
    the same records are appended to a rotating LOG_FILE.
    """
    cfg = cfg or get_settings()
    name = (level or cfg.log_level).upper()
    if not isinstance(logging.getLevelName(name), int):
        raise UsageError(f"unknown log level {name!r}")

    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if cfg.log_to_file:
        cfg.log_file.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(RotatingFileHandler(cfg.log_file, maxBytes=5 * 1024 * 1024, backupCount=3))
    for handler in handlers:
        handler.setLevel(name)

    logging.basicConfig(level=name, format=LOG_FORMAT, handlers=handlers, force=True)
    logging.getLogger(__name__).debug("Settings: %s", cfg.model_dump())
