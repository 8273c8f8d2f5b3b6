import logging

import click

logger = logging.getLogger("hgcr_lbd")
logger.setLevel(logging.INFO)


class ClickHandler(logging.Handler):
    """Echo log records on the error stream of the running command."""

    def emit(self, record: logging.LogRecord):
        try:
            click.echo(self.format(record), err=True)
        except Exception:
            self.handleError(record)


def setup_cli_logging(verbose: int = 0):
    level = logging.WARNING
    if verbose == 1:
        level = logging.INFO
    elif verbose > 1:
        level = logging.DEBUG

    handler = ClickHandler()
    handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    logger.handlers = [handler]
    logger.setLevel(level)
    logger.propagate = False
