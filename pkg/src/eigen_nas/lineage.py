"""Append-only lineage log: one JSON record per line, each with a sequence number."""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Iterator


def dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


class LineageLog:
    def __init__(self, path: str | Path | None = None, seq: int = 0, offset: int | None = None):
        """Open (or create) a log. With ``offset`` the file is first cut back to that byte length."""
        self.path = Path(path) if path is not None else None
        self.seq = seq
        self.records: list[dict] = []
        self._fh = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            if offset is not None and self.path.exists():
                with open(self.path, "r+b") as f:
                    f.truncate(offset)
            self._fh = open(self.path, "a", encoding="utf-8", newline="\n")

    def emit(self, record: dict) -> dict:
        record = {"seq": self.seq, **record}
        self.seq += 1
        self.records.append(record)
        if self._fh is not None:
            self._fh.write(dumps(record) + "\n")
        return record

    def flush(self) -> int:
        """Flush to disk and return the current byte offset."""
        if self._fh is None:
            return 0
        self._fh.flush()
        os.fsync(self._fh.fileno())
        return self._fh.tell()

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_log(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                yield json.loads(line)
