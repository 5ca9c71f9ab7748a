import logging
import shutil

from main import EXIT_INFEASIBLE, main
from utils.logger import LevelBasedFileHandler


def make_record(level, message):
    return logging.LogRecord("fmm_logger", level, __file__, 1, message, None, None)


def read_logs(directory):
    return "".join(path.read_text(encoding="utf-8") for path in directory.glob("*_error.log"))


def test_quiet_records_create_nothing(tmp_path):
    handler = LevelBasedFileHandler(directory=str(tmp_path / "logs"))
    handler.emit(make_record(logging.INFO, "ignored"))
    assert not (tmp_path / "logs").exists()


def test_warnings_survive_removed_log_directory(tmp_path):
    handler = LevelBasedFileHandler(directory=str(tmp_path / "logs"))
    handler.emit(make_record(logging.WARNING, "first warning"))
    assert "first warning" in read_logs(tmp_path / "logs")

    shutil.rmtree(tmp_path / "logs")
    handler.emit(make_record(logging.ERROR, "second warning"))
    content = read_logs(tmp_path / "logs")
    assert "second warning" in content
    assert "first warning" not in content


def test_warnings_follow_the_working_directory(tmp_path, monkeypatch):
    handler = LevelBasedFileHandler()
    first, second = tmp_path / "a", tmp_path / "b"
    first.mkdir()
    second.mkdir()
    monkeypatch.chdir(first)
    handler.emit(make_record(logging.WARNING, "in a"))
    monkeypatch.chdir(second)
    handler.emit(make_record(logging.WARNING, "in b"))
    assert "in a" in read_logs(first / "logs")
    assert "in b" in read_logs(second / "logs")


def test_refusals_log_after_logs_are_cleaned(workdir):
    assert main(["run", "--num-bodies", "1e8"]) == EXIT_INFEASIBLE
    shutil.rmtree(workdir / "logs", ignore_errors=True)
    assert main(["run", "--num-bodies", "1e8"]) == EXIT_INFEASIBLE
    assert "allow-large" in read_logs(workdir / "logs")
