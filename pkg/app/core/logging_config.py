import logging

from rich.console import Console
from rich.logging import RichHandler

from app.core.config import settings


def configure_logging(level: str = None) -> None:
    """Route library logs through rich on stderr. Only the CLI calls this."""
    logging.basicConfig(
        level=(level or settings.LOG_LEVEL).upper(),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), rich_tracebacks=True, show_path=False)],
        force=True,
    )
