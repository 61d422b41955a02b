"""Plot-ready series extracted from a lineage log.

The CSV is long-format with header ``series,generation,phase,individual_id,value``.
Series:

    best_fitness        one row per generation: fitness of the surviving parent
    params              one row per spawned child: its parameter count
    fitness_T1/T2/T3    one row per individual scored at that gate
    threshold_t1/t2     one row per generation: extinction thresholds after it
    phase_switch        marker at the generation where secondary succession starts
    succession_end      marker at the last generation of the succession loop
    duplication_params  one row per trained duplication candidate
    duplication_fitness one row per trained duplication candidate
    final_fitness       fitness of the overall winner
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable

from .lineage import read_log

HEADER = ("series", "generation", "phase", "individual_id", "value")


class MissingLog(FileNotFoundError):
    pass


def report_rows(records: Iterable[dict]) -> list[tuple]:
    rows = []
    for r in records:
        g, ph, ev = r.get("generation"), r.get("phase"), r.get("event")
        if ev == "spawn":
            rows.append(("params", g, ph, r["id"], r["params"]))
        elif ev == "checkpoint" and r.get("fitness") is not None:
            rows.append((f"fitness_{r['checkpoint']}", g, ph, r["id"], r["fitness"]))
        elif ev == "selection":
            rows.append(("best_fitness", g, ph, r["id"], r["best_fitness"]))
            rows.append(("threshold_t1", g, ph, "", r["v_t1"]))
            rows.append(("threshold_t2", g, ph, "", r["v_t2"]))
        elif ev == "phase_switch":
            rows.append(("phase_switch", g, ph, "", r["best_fitness"]))
        elif ev == "succession_end":
            rows.append(("succession_end", g, ph, "", r["best_fitness"]))
        elif ev == "duplication_trial" and r.get("verdict") == "trained":
            rows.append(("duplication_params", g, ph, r["id"], r["params"]))
            rows.append(("duplication_fitness", g, ph, r["id"], r["fitness"]))
        elif ev == "final" and r.get("id") is not None:
            rows.append(("final_fitness", g, ph, r["id"], r["best_fitness"]))
    return rows


def build_report(log_path: str | Path) -> str:
    log_path = Path(log_path)
    if not log_path.exists():
        raise MissingLog(f"no lineage log at {log_path}")
    records = list(read_log(log_path))
    if not records:
        raise MissingLog(f"lineage log {log_path} is empty")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HEADER)
    writer.writerows(report_rows(records))
    return buf.getvalue()


def read_report(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))
