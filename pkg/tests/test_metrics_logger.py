from __future__ import annotations

import json
from pathlib import Path

from logger.metrics_logger import MetricsLogger


def _log(logger: MetricsLogger, step: int, granularity: str = "SVST") -> None:
    logger.log_step(step=step, granularity=granularity, loss=1.0 / step, tau=0.07, lr_other=1e-3, lr_encoders=1e-5)


def test_fresh_log(tmp_path: Path) -> None:
    logger = MetricsLogger(tmp_path / "run" / "metrics.jsonl")
    logger.initialize()
    assert logger.log_path.exists() and logger.last_step == 0
    _log(logger, 1)
    _log(logger, 2, "LVLT")
    assert logger.last_step == 2
    lines = [json.loads(line) for line in logger.log_path.read_text(encoding="utf-8").splitlines()]
    assert [item["type"] for item in lines] == ["step", "step"]
    assert set(lines[0]) == {"type", "step", "granularity", "loss", "tau", "lr_other", "lr_encoders", "ts_utc"}


def test_resume_drops_later_steps(tmp_path: Path) -> None:
    path = tmp_path / "metrics.jsonl"
    logger = MetricsLogger(path)
    logger.initialize()
    for step in range(1, 6):
        _log(logger, step)

    resumed = MetricsLogger(path)
    resumed.initialize(keep_through=3)
    assert resumed.last_step == 3
    assert [item["step"] for item in resumed.read_recent(limit=10)] == [3, 2, 1]

    reopened = MetricsLogger(path)
    reopened.initialize()
    assert reopened.last_step == 3


def test_queries_skip_noise(tmp_path: Path) -> None:
    path = tmp_path / "metrics.jsonl"
    path.write_text('garbage\n{"type": "other", "step": 9}\n\n', encoding="utf-8")
    logger = MetricsLogger(path)
    logger.initialize()
    assert logger.last_step == 0
    _log(logger, 1)
    _log(logger, 2, "LVLT")
    _log(logger, 3)
    assert [item["step"] for item in logger.read_recent(limit=2)] == [3, 2]
    assert [item["step"] for item in logger.read_recent(limit=5, granularity="SVST")] == [3, 1]
    assert logger.get_by_step(2)["granularity"] == "LVLT"
    assert logger.get_by_step(0) is None
    assert logger.get_by_step(7) is None
