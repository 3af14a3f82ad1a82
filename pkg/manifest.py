from __future__ import annotations

import json
import logging
import os
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Iterator

from config import GRANULARITIES
from errors import DataFormatError
from utils import atomic_write

LOGGER = logging.getLogger(__name__)

PROVENANCE_OPS = ("raw", "integrate", "integrate_random", "compress_text", "compress_video")
RECORD_FIELDS = (
    "id",
    "granularity",
    "source_id",
    "t_start",
    "t_end",
    "video_path",
    "image_path",
    "text",
    "provenance",
)


@dataclass(slots=True, frozen=True)
class Provenance:
    op: str = "raw"
    children: tuple[str, ...] = ()

    def to_json_dict(self) -> dict[str, Any]:
        return {"op": self.op, "children": list(self.children)}


@dataclass(slots=True, frozen=True)
class ClipRecord:
    id: str
    granularity: str
    source_id: str
    t_start: float
    t_end: float
    video_path: str | None
    image_path: str | None
    text: str
    provenance: Provenance = field(default_factory=Provenance)

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    @property
    def is_image(self) -> bool:
        return self.granularity == "IT"

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "granularity": self.granularity,
            "source_id": self.source_id,
            "t_start": self.t_start,
            "t_end": self.t_end,
            "video_path": self.video_path,
            "image_path": self.image_path,
            "text": self.text,
            "provenance": self.provenance.to_json_dict(),
        }

    @classmethod
    def from_json_dict(cls, item: Any, *, where: str = "record") -> ClipRecord:
        if not isinstance(item, dict):
            raise DataFormatError(f"{where}: expected an object")
        keys = set(item)
        missing = [name for name in RECORD_FIELDS if name not in keys]
        unknown = sorted(keys - set(RECORD_FIELDS))
        if missing:
            raise DataFormatError(f"{where}: missing field(s) {', '.join(missing)}")
        if unknown:
            raise DataFormatError(f"{where}: unknown field(s) {', '.join(unknown)}")

        provenance = item["provenance"]
        if not isinstance(provenance, dict) or set(provenance) != {"op", "children"}:
            raise DataFormatError(f"{where}: provenance must hold exactly op and children")
        children = provenance["children"]
        if not isinstance(children, list) or not all(isinstance(child, str) for child in children):
            raise DataFormatError(f"{where}: provenance.children must be a list of ids")

        for name in ("id", "granularity", "source_id", "text"):
            if not isinstance(item[name], str):
                raise DataFormatError(f"{where}: {name} must be a string")
        for name in ("video_path", "image_path"):
            if item[name] is not None and not isinstance(item[name], str):
                raise DataFormatError(f"{where}: {name} must be a string or null")
        for name in ("t_start", "t_end"):
            if isinstance(item[name], bool) or not isinstance(item[name], (int, float)):
                raise DataFormatError(f"{where}: {name} must be a number")

        return cls(
            id=item["id"],
            granularity=item["granularity"],
            source_id=item["source_id"],
            t_start=float(item["t_start"]),
            t_end=float(item["t_end"]),
            video_path=item["video_path"],
            image_path=item["image_path"],
            text=item["text"],
            provenance=Provenance(op=str(provenance["op"]), children=tuple(children)),
        )


def check_record(record: ClipRecord) -> None:
    """Field-level invariants that need no other record."""
    if not record.id:
        raise DataFormatError("record id must be non-empty")
    if record.granularity not in GRANULARITIES:
        raise DataFormatError(f"record {record.id}: unknown granularity {record.granularity!r}")
    if record.provenance.op not in PROVENANCE_OPS:
        raise DataFormatError(f"record {record.id}: unknown provenance op {record.provenance.op!r}")
    if record.is_image:
        if record.t_start != record.t_end:
            raise DataFormatError(f"record {record.id}: image records need t_start == t_end")
        if not record.image_path:
            raise DataFormatError(f"record {record.id}: image record without image_path")
    else:
        if record.t_end <= record.t_start:
            raise DataFormatError(f"record {record.id}: t_end must exceed t_start")
        if not record.video_path:
            raise DataFormatError(f"record {record.id}: video record without video_path")
    if record.provenance.op == "raw" and record.provenance.children:
        raise DataFormatError(f"record {record.id}: raw records list no children")


class Manifest:
    """Ordered clip records; relative frame paths resolve against `base_dir`."""

    def __init__(self, records: Iterable[ClipRecord], base_dir: str | Path = "."):
        self.records: list[ClipRecord] = list(records)
        self.base_dir = Path(base_dir)
        self._by_id: dict[str, ClipRecord] = {}
        for record in self.records:
            if record.id in self._by_id:
                raise DataFormatError(f"duplicate record id {record.id!r}")
            self._by_id[record.id] = record

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[ClipRecord]:
        return iter(self.records)

    def __contains__(self, record_id: object) -> bool:
        return record_id in self._by_id

    def get(self, record_id: str) -> ClipRecord:
        try:
            return self._by_id[record_id]
        except KeyError as exc:
            raise DataFormatError(f"unknown record id {record_id!r}") from exc

    def histogram(self) -> dict[str, int]:
        counts = Counter(record.granularity for record in self.records)
        return {label: counts[label] for label in GRANULARITIES if counts[label]}

    def by_granularity(self) -> dict[str, list[ClipRecord]]:
        pools: dict[str, list[ClipRecord]] = {}
        for record in self.records:
            pools.setdefault(record.granularity, []).append(record)
        return pools

    def filter(self, granularity: str) -> Manifest:
        return Manifest(
            (record for record in self.records if record.granularity == granularity),
            base_dir=self.base_dir,
        )

    def resolve(self, relative: str) -> Path:
        return self.base_dir / relative

    def rebased(self, new_base: str | Path) -> Manifest:
        """Same records with frame paths rewritten relative to `new_base`."""
        target = Path(new_base)

        def move(relative: str | None) -> str | None:
            if relative is None:
                return None
            return Path(os.path.relpath(self.base_dir / relative, target)).as_posix()

        records = [
            replace(record, video_path=move(record.video_path), image_path=move(record.image_path))
            for record in self.records
        ]
        return Manifest(records, base_dir=target)

    def validate(self) -> None:
        """Check every record plus the op-specific invariants of derived records."""
        for record in self.records:
            check_record(record)
            op = record.provenance.op
            children = [self.get(child) for child in record.provenance.children]
            if op in {"integrate", "integrate_random"}:
                if record.granularity != "LVLT" or len(children) < 2:
                    raise DataFormatError(
                        f"record {record.id}: {op} builds LVLT records from >= 2 children"
                    )
                if len({child.id for child in children}) != len(children):
                    raise DataFormatError(f"record {record.id}: children must be distinct")
            if op == "integrate":
                if len({child.source_id for child in children}) != 1:
                    raise DataFormatError(f"record {record.id}: children span several sources")
                starts = [child.t_start for child in children]
                if starts != sorted(starts):
                    raise DataFormatError(f"record {record.id}: children are not in time order")
            if op == "compress_text":
                if record.granularity != "LVST" or len(children) != 1 or children[0].granularity != "LVLT":
                    raise DataFormatError(
                        f"record {record.id}: compress_text maps one LVLT child to LVST"
                    )
            if op == "compress_video":
                if record.granularity != "IT" or len(children) != 1:
                    raise DataFormatError(
                        f"record {record.id}: compress_video maps one video child to IT"
                    )

    @classmethod
    def read(cls, path: str | Path) -> Manifest:
        source = Path(path)
        if not source.exists():
            raise DataFormatError(f"manifest not found: {source}")
        records: list[ClipRecord] = []
        with source.open("r", encoding="utf-8") as fp:
            for line_no, raw in enumerate(fp, start=1):
                line = raw.strip()
                if not line:
                    continue
                try:
                    item = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataFormatError(f"{source}:{line_no}: invalid JSON ({exc.msg})") from exc
                records.append(ClipRecord.from_json_dict(item, where=f"{source}:{line_no}"))
        manifest = cls(records, base_dir=source.parent)
        LOGGER.debug("Loaded %d records from %s", len(manifest), source)
        return manifest

    def write(self, path: str | Path) -> Path:
        lines = [json.dumps(record.to_json_dict(), ensure_ascii=False) + "\n" for record in self.records]
        return atomic_write(path, "".join(lines))
