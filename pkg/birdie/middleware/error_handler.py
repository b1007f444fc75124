"""
Error handling for library calls and CLI commands
"""

import logging
import sys
from functools import wraps

import click

from birdie.config.constants import EXIT_CODES, ERROR_MESSAGES

logger = logging.getLogger(__name__)


class BirdieError(Exception):
    """Base error carrying the process exit code"""
    name = 'BirdieError'

    def __init__(self, message, code=EXIT_CODES['INTERNAL_ERROR']):
        self.message = message
        self.code = code
        super().__init__(self.message)


class ValidationError(BirdieError):
    """Input, schema or contract violation"""
    name = 'ValidationError'

    def __init__(self, message, code=EXIT_CODES['INPUT_ERROR']):
        super().__init__(message, code)


class IdentificationError(BirdieError):
    """Rank condition fails where an operation needs an identified system"""
    name = 'IdentificationError'

    def __init__(self, message=ERROR_MESSAGES['RANK_DEFICIENT'], code=EXIT_CODES['INPUT_ERROR']):
        super().__init__(message, code)


class ConvergenceError(BirdieError):
    """
    Numerical optimization did not converge

    Attributes:
        last_iterate: Last parameter value (or partial fit) reached
    """
    name = 'ConvergenceError'

    def __init__(self, message, last_iterate=None, code=EXIT_CODES['NOT_CONVERGED']):
        self.last_iterate = last_iterate
        super().__init__(message, code)


def error_handler(error):
    """
    Map an exception to an exit code and log it

    Args:
        error: Exception object

    Returns:
        Exit code
    """
    if isinstance(error, BirdieError):
        logger.error(f'❌ {error.name}: {error.message}')
        click.echo(f'Error: {error.message}', err=True)
        return error.code

    if isinstance(error, FileNotFoundError):
        logger.error(f'❌ {ERROR_MESSAGES["MISSING_FILE"]}: {error.filename}')
        click.echo(f'Error: {ERROR_MESSAGES["MISSING_FILE"]}: {error.filename}', err=True)
        return EXIT_CODES['INPUT_ERROR']

    logger.error(f'❌ Error: {str(error)}', exc_info=True)
    click.echo(f'Error: {str(error) or ERROR_MESSAGES["INTERNAL_ERROR"]}', err=True)
    return EXIT_CODES['INTERNAL_ERROR']


def handle_exceptions(f):
    """
    Decorator to turn exceptions in CLI commands into exit codes

    Usage:
        @click.command()
        @handle_exceptions
        def command():
            ...
    """
    @wraps(f)
    def decorated_function(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except (click.exceptions.Exit, click.ClickException):
            raise
        except Exception as e:
            sys.exit(error_handler(e))

    return decorated_function
