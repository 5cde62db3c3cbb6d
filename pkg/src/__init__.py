import os
from logging.config import dictConfig

__version__ = "0.1.0"

# Version tag written into every emitted file.
FILE_FORMAT_VERSION = 1

LOG_LEVEL_ENV = "OMNI_LOG_LEVEL"
LOG_FORMAT = '[%(asctime)s] %(levelname)s in %(module)s: %(message)s'


def configure_logging(level=None, log_file=None):
    """Set up logging for the package.

    The level is taken from the argument, then from the OMNI_LOG_LEVEL
    environment variable, and defaults to WARNING.

    Args:
        level: A logging level name such as "INFO"
        log_file: Optional path of a file that receives a copy of the log

    Returns:
        The level name that was applied
    """
    level = (level or os.environ.get(LOG_LEVEL_ENV) or "WARNING").upper()

    handlers = {
        'stderr': {
            'class': 'logging.StreamHandler',
            'stream': 'ext://sys.stderr',
            'formatter': 'default'
        },
    }
    if log_file:
        handlers["file"] = {
            "class": "logging.FileHandler",
            "filename": str(log_file),
            "formatter": "default",
        }

    dictConfig({
        'version': 1,
        'disable_existing_loggers': False,
        'formatters': {'default': {
            'format': LOG_FORMAT,
        }},
        'handlers': handlers,
        "root": {"level": level, "handlers": list(handlers)},
    })
    return level
