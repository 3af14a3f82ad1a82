from __future__ import annotations

import json
import threading
from collections import deque
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable


class MetricsLogger:
    """Append-only JSONL step log; one `{"type": "step", ...}` object per optimizer step."""

    def __init__(self, log_path: str | Path):
        self.log_path = Path(log_path)
        self._lock = threading.Lock()
        self._last_step = 0

    @property
    def last_step(self) -> int:
        return self._last_step

    def initialize(self, *, keep_through: int | None = None) -> None:
        """Create the file or resume after its last step.

        With `keep_through`, records past that step are dropped first so a resumed
        run does not log the same step twice.
        """
        with self._lock:
            self.log_path.parent.mkdir(parents=True, exist_ok=True)
            if not self.log_path.exists():
                self.log_path.touch()
                self._last_step = 0
                return

            if keep_through is not None:
                kept = [
                    json.dumps(item, ensure_ascii=False)
                    for step, item in self._iter_step_records()
                    if step <= keep_through
                ]
                self.log_path.write_text(
                    "".join(f"{line}\n" for line in kept), encoding="utf-8"
                )

            max_step = 0
            for step, _ in self._iter_step_records():
                if step > max_step:
                    max_step = step
            self._last_step = max_step

    def log_step(
        self,
        *,
        step: int,
        granularity: str,
        loss: float,
        tau: float,
        lr_other: float,
        lr_encoders: float,
    ) -> None:
        record = {
            "type": "step",
            "step": step,
            "granularity": granularity,
            "loss": loss,
            "tau": tau,
            "lr_other": lr_other,
            "lr_encoders": lr_encoders,
            "ts_utc": datetime.now(timezone.utc).isoformat(),
        }
        line = json.dumps(record, ensure_ascii=False)
        with self._lock:
            with self.log_path.open("a", encoding="utf-8") as fp:
                fp.write(line)
                fp.write("\n")
            self._last_step = max(self._last_step, step)

    def read_recent(self, *, limit: int, granularity: str | None = None) -> list[dict[str, Any]]:
        """Newest first."""
        latest: deque[dict[str, Any]] = deque(maxlen=max(1, limit))
        with self._lock:
            for _, item in self._iter_step_records(granularity=granularity):
                latest.append(item)
        records = list(latest)
        records.reverse()
        return records

    def get_by_step(self, step: int) -> dict[str, Any] | None:
        if step <= 0:
            return None
        with self._lock:
            for idx, item in self._iter_step_records():
                if idx == step:
                    return item
        return None

    def _iter_step_records(
        self,
        granularity: str | None = None,
    ) -> Iterable[tuple[int, dict[str, Any]]]:
        if not self.log_path.exists():
            return

        with self.log_path.open("r", encoding="utf-8") as fp:
            for raw in fp:
                line = raw.strip()
                if not line:
                    continue

                try:
                    item = json.loads(line)
                except json.JSONDecodeError:
                    continue

                if not isinstance(item, dict) or item.get("type") != "step":
                    continue
                step = item.get("step")
                if not isinstance(step, int) or step <= 0:
                    continue
                if granularity is not None and item.get("granularity") != granularity:
                    continue

                yield step, item
