"""Run directory layout and checkpoint documents.

A run directory holds::

    config.json          the effective run config
    lineage.jsonl        append-only event log
    checkpoint.json      latest driver state
    checkpoints/         one state document per finished generation
    summary.json         written once the run completes
    best_genome.json     genome record of the winner

A checkpoint stores the driver state together with the lineage sequence
number and byte offset at the moment it was taken, plus a digest of both, so
a resumed run can cut the log back to that point and continue it exactly.
Random streams are addressed by (seed, generation, index); the generation
counter in the state is therefore the only seed cursor needed.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

from .lineage import dumps
from .succession import DriverState

FORMAT = 1
CONFIG, LINEAGE, LATEST, SUMMARY, BEST = (
    "config.json", "lineage.jsonl", "checkpoint.json", "summary.json", "best_genome.json")


class MissingCheckpoint(FileNotFoundError):
    pass


class CorruptCheckpoint(ValueError):
    pass


def write_json_atomic(path: Path, doc: dict, indent: int | None = None) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    text = json.dumps(doc, sort_keys=True, indent=indent) + "\n"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write(text)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def _digest(body: dict) -> str:
    return hashlib.sha256(dumps(body).encode()).hexdigest()


def make_checkpoint(state: DriverState, seq: int, offset: int) -> dict:
    body = {"format": FORMAT, "state": state.to_dict(), "lineage": {"seq": seq, "offset": offset}}
    return {**body, "digest": _digest(body)}


def save_checkpoint(run_dir: Path, doc: dict) -> None:
    run_dir = Path(run_dir)
    archive = run_dir / "checkpoints"
    archive.mkdir(parents=True, exist_ok=True)
    gen = doc["state"]["generation"]
    tag = "final" if doc["state"]["finished"] else f"gen-{gen:04d}"
    write_json_atomic(archive / f"{tag}.json", doc)
    write_json_atomic(run_dir / LATEST, doc)


def load_checkpoint(path: Path) -> tuple[DriverState, int, int]:
    """Returns (state, lineage seq, lineage byte offset)."""
    path = Path(path)
    if path.is_dir():
        path = path / LATEST
    if not path.exists():
        raise MissingCheckpoint(f"no checkpoint at {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        body = {k: doc[k] for k in ("format", "state", "lineage")}
        if doc.get("digest") != _digest(body):
            raise CorruptCheckpoint(f"checkpoint digest mismatch in {path}")
        if body["format"] != FORMAT:
            raise CorruptCheckpoint(f"unsupported checkpoint format {body['format']!r}")
        state = DriverState.from_dict(body["state"])
        return state, int(body["lineage"]["seq"]), int(body["lineage"]["offset"])
    except CorruptCheckpoint:
        raise
    except (ValueError, KeyError, TypeError, AttributeError) as e:
        raise CorruptCheckpoint(f"unreadable checkpoint {path}: {e}") from e
