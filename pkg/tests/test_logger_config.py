import gzip
import logging

from polyharm_lab import logger_config


def test_create_logger_writes_through_the_queue(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setattr(logger_config, "_listener", None)
    package_logger = logging.getLogger(logger_config.LOGGER_NAME)
    handlers = list(package_logger.handlers)
    level = package_logger.level
    log_file = tmp_path / "lab.log"
    try:
        logger = logger_config.create_logger(str(log_file), "debug")
        assert logger.level == logging.DEBUG
        assert logger_config.create_logger(str(tmp_path / "other.log")) is logger
        assert len(logger.handlers) == len(handlers) + 1
        logging.getLogger("polyharm_lab.measure_engine").info("scan finished")
    finally:
        logger_config._stop_listener()
        package_logger.handlers = handlers
        package_logger.setLevel(level)
    text = log_file.read_text(encoding="utf-8")
    assert "[INFO] [polyharm_lab.measure_engine] - scan finished" in text
    assert not (tmp_path / "other.log").exists()


def test_compress_log(tmp_path):
    src = tmp_path / "lab.log.1"
    src.write_bytes(b"line\n")
    logger_config.compress_log(str(src))
    assert not src.exists()
    with gzip.open(str(src) + ".gz", "rb") as fh:
        assert fh.read() == b"line\n"
    logger_config.compress_log(str(tmp_path / "absent.log"))
