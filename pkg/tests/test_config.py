import logging

import pytest

from joint_annotator import cli
from joint_annotator.config import StreamHandlerFilter, load_config


@pytest.fixture
def package_logger():
    logger = logging.getLogger("joint_annotator")
    handlers, level = list(logger.handlers), logger.level
    yield logger
    for handler in logger.handlers:
        if handler not in handlers:
            handler.close()
    logger.handlers[:] = handlers
    logger.setLevel(level)


def test_run_prints_errors_to_stderr(monkeypatch, tmp_path, capsys, package_logger):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("JOINT_ANNOTATOR_LOG_CONF", str(tmp_path / "missing.yaml"))
    monkeypatch.delenv("JOINT_ANNOTATOR_SAVE_DIR", raising=False)
    monkeypatch.setattr("sys.argv", ["joint-annotator", "--mode", "annotate"])
    with pytest.raises(SystemExit) as exit_:
        cli.run()
    assert exit_.value.code == 1
    err = capsys.readouterr().err
    assert "joint_annotator.cli - ERROR: annotate: --mode annotate requires --save_dir" in err


def test_load_config_reads_yaml(monkeypatch, tmp_path, package_logger):
    monkeypatch.chdir(tmp_path)
    conf = tmp_path / "log.yaml"
    conf.write_text(
        "version: 1\n"
        "disable_existing_loggers: false\n"
        "handlers:\n"
        "  console:\n"
        "    class: logging.StreamHandler\n"
        "    level: WARNING\n"
        "loggers:\n"
        "  joint_annotator:\n"
        "    level: INFO\n"
        "    handlers: [console]\n",
        encoding="utf-8",
    )
    monkeypatch.setenv("JOINT_ANNOTATOR_LOG_CONF", str(conf))
    load_config()
    assert package_logger.level == logging.INFO
    assert [h.level for h in package_logger.handlers] == [logging.WARNING]
    assert (tmp_path / "log").is_dir()


def test_step_records_stay_off_the_console():
    keep = StreamHandlerFilter()

    def record(name: str) -> logging.LogRecord:
        return logging.LogRecord(name, logging.DEBUG, __file__, 1, "step", None, None)

    assert not keep.filter(record("joint_annotator.trainer.steps"))
    assert keep.filter(record("joint_annotator.trainer"))
