import json
import logging
import sys

import click
from marshmallow.exceptions import ValidationError

from src.exceptions import (EXIT_INPUT, EXIT_INTERNAL, EXIT_USAGE,
                            OmniError)

logger = logging.getLogger(__name__)


# ERROR HANDLERS

def handle_omni_error(e):
    """Return the exit code and JSON body of a package error.

    Args:
        e: An OmniError
    Returns:
        (exit code, dict with code, name and description)
    """
    return e.code, e.to_dict()


def handle_usage_error(e):
    """Return exit code 1 for command-line usage errors."""
    return EXIT_USAGE, {"code": EXIT_USAGE, "name": "Usage Error",
                        "description": e.format_message()}


def register_validation_error(error):
    """ Error handler for marshmallow schema validation errors.

    Args:
        error (ValidationError): Marshmallow error.

    Returns:
        Exit code 2 and the field messages
    """
    return EXIT_INPUT, {"code": EXIT_INPUT, "name": "Validation Error",
                        "description": "Input file failed validation",
                        "details": error.messages}


def handle_os_error(e):
    return EXIT_INPUT, {"code": EXIT_INPUT, "name": "File Error",
                        "description": str(e)}


def handle_exception(e):
    """Map any exception to an exit code and a structured error message.

    Args:
        e: The exception raised by a command
    Returns:
        (exit code, payload) where payload is JSON-serializable
    """
    if isinstance(e, OmniError):
        return handle_omni_error(e)
    if isinstance(e, click.UsageError):
        return handle_usage_error(e)
    if isinstance(e, ValidationError):
        return register_validation_error(e)
    if isinstance(e, OSError):
        return handle_os_error(e)

    # now you're handling unexpected exceptions only
    logger.exception("Unexpected error")
    return EXIT_INTERNAL, {"code": EXIT_INTERNAL, "name": "Internal Error",
                           "description": f"{type(e).__name__}: {e}"}


def report(e, stream=None):
    """Log the error, write its JSON payload to stderr, return the code."""
    code, payload = handle_exception(e)
    logger.error(payload["description"])
    stream = stream or sys.stderr
    stream.write(json.dumps(payload, sort_keys=True, default=str) + "\n")
    return code
