import json

from services import runlog


def test_log_event_appends_stamped_lines(tmp_path):
    path = tmp_path / "logs" / "runs.jsonl"
    runlog.log_event({"event": "run_started", "subcommand": "mcshane"}, path=str(path))
    runlog.log_event({"event": "run_finished", "exit": 0}, path=str(path))
    lines = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]
    assert [e["event"] for e in lines] == ["run_started", "run_finished"]
    assert all(e["ts_iso"].endswith("Z") for e in lines)


def test_log_event_disabled_without_path(monkeypatch, tmp_path):
    target = tmp_path / "runs.jsonl"
    monkeypatch.setattr(runlog, "RUNLOG_ENABLE", False)
    monkeypatch.setattr(runlog, "RUNLOG_PATH", str(target))
    runlog.log_event({"event": "ignored"})
    assert not target.exists()


def test_log_event_swallows_write_errors(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    runlog.log_event({"event": "x"}, path=str(blocker / "runs.jsonl"))


def test_debug_prints_only_when_enabled(monkeypatch, capsys):
    monkeypatch.setattr(runlog, "LIPEMBED_DEBUG", False)
    runlog.debug("genvec", "quiet")
    assert capsys.readouterr().out == ""
    monkeypatch.setattr(runlog, "LIPEMBED_DEBUG", True)
    runlog.debug("genvec", "loud", 3)
    assert capsys.readouterr().out == "[GENVEC] loud 3\n"
