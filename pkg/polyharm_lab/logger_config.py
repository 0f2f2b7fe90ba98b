import atexit
import gzip
import logging
import os
from logging.handlers import QueueHandler, QueueListener, RotatingFileHandler
from queue import Queue
from typing import Optional

from polyharm_lab.config_loader import ConfigLoader

LOGGER_NAME = "polyharm_lab"
LOG_FILENAME = "polyharm_lab.log"
MAX_LOG_SIZE = 10 * 1024 * 1024  # 10 MB
BACKUP_COUNT = 5

_listener: Optional[QueueListener] = None


def compress_log(src_path):
    """Compress a single log file to .gz and remove the original."""
    if not os.path.exists(src_path):
        return
    gz_path = src_path + ".gz"
    with open(src_path, "rb") as f_in, gzip.open(gz_path, "wb") as f_out:
        f_out.writelines(f_in)
    os.remove(src_path)


def _stop_listener():
    global _listener
    if _listener is not None:
        _listener.stop()
        _listener = None


def create_logger(log_file: Optional[str] = None, level: Optional[str] = None):
    """
    Create the package logger:
      - records go through a queue to a background listener
      - the listener writes to a rotating file handler
      - rotated backups are gzipped
    A second call returns the configured logger without adding handlers.
    """
    global _listener
    logger = logging.getLogger(LOGGER_NAME)
    if _listener is not None:
        return logger

    loader = ConfigLoader()
    log_file = log_file or loader.get("POLYHARM_LOG_FILE", LOG_FILENAME)
    level_name = str(level or loader.get("POLYHARM_LOG_LEVEL", "INFO")).upper()
    logger.setLevel(getattr(logging, level_name, logging.INFO))

    log_queue = Queue(-1)
    logger.addHandler(QueueHandler(log_queue))

    rotating_handler = RotatingFileHandler(
        log_file, maxBytes=MAX_LOG_SIZE, backupCount=BACKUP_COUNT
    )
    rotating_handler.setFormatter(
        logging.Formatter("%(asctime)s [%(levelname)s] [%(name)s] - %(message)s")
    )

    original_doRollover = rotating_handler.doRollover

    def doRolloverWithCompress():
        original_doRollover()
        for i in range(1, BACKUP_COUNT + 1):
            old_log = f"{log_file}.{i}"
            if os.path.exists(old_log):
                compress_log(old_log)

    rotating_handler.doRollover = doRolloverWithCompress

    _listener = QueueListener(log_queue, rotating_handler, respect_handler_level=True)
    _listener.start()
    atexit.register(_stop_listener)
    return logger
