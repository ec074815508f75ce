import sys

from loguru import logger

from app.config import LOG_FILE, LOG_LEVEL

LOG_FORMAT = "Log: [{extra[session_id]}:{time} - {level} - {message}]"

_configured = False


def setup_logging(to_stderr: bool = False) -> None:
    global _configured
    if _configured:
        return
    logger.configure(extra={"session_id": "-"})
    logger.remove()
    logger.add(LOG_FILE, format=LOG_FORMAT, level=LOG_LEVEL, enqueue=True)
    if to_stderr:
        logger.add(sys.stderr, format=LOG_FORMAT, level="WARNING")
    _configured = True
