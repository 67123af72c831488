import logging
import sys

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def setup_logging(level=logging.INFO):
    """
    Configures basic logging for the engine and the run scripts.
    Accepts either a logging constant or a level name such as "DEBUG".
    """
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            level = logging.INFO
    logging.basicConfig(
        level=level,
        format=LOG_FORMAT,
        handlers=[
            logging.StreamHandler(sys.stdout)  # Ensure logs go to stdout
        ],
        force=True,
    )


def get_logger(name):
    """
    Returns a logger instance.
    """
    return logging.getLogger(name)
