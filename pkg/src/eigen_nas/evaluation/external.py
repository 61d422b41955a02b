"""Evaluation through an external worker process.

Protocol: one JSON object per line over the worker's stdin/stdout.

    request:  {"genome": <genome record>, "train_from": int, "train_to": int, "run_id": str}
    response: {"fitness": float, "run_id": str}

The worker answers requests in order. A worker that exits, writes a line that
is not a valid response, or misses the per-segment deadline fails the
individual being evaluated; the next request starts a fresh worker.
"""

from __future__ import annotations

import json
import logging
import queue
import shlex
import subprocess
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

from ..genome import Genome, genome_to_record
from .base import Candidate, Evaluator, EvaluatorFailure, FitnessReport, Probe

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 600.0


class WorkerCrash(EvaluatorFailure):
    pass


class ProtocolViolation(EvaluatorFailure):
    pass


class Timeout(EvaluatorFailure):
    pass


class _Worker:
    def __init__(self, command: Sequence[str]):
        self.command = list(command)
        self.proc: subprocess.Popen | None = None
        self.lines: queue.Queue = queue.Queue()

    def _start(self):
        self.lines = queue.Queue()
        self.proc = subprocess.Popen(
            self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1,
        )
        threading.Thread(target=self._pump, args=(self.proc, self.lines), daemon=True).start()

    @staticmethod
    def _pump(proc: subprocess.Popen, lines: queue.Queue):
        for line in proc.stdout:
            lines.put(line)
        lines.put(None)

    def request(self, payload: dict, timeout: float) -> dict:
        if self.proc is None or self.proc.poll() is not None:
            self._start()
        try:
            self.proc.stdin.write(json.dumps(payload, separators=(",", ":")) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            self.stop()
            raise WorkerCrash(f"cannot write to worker: {e}") from e
        try:
            line = self.lines.get(timeout=timeout)
        except queue.Empty:
            self.stop()
            raise Timeout(f"worker gave no answer within {timeout:g} s") from None
        if line is None:
            code = self.proc.wait()
            self.proc = None
            raise WorkerCrash(f"worker exited with status {code}")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError:
            self.stop()
            raise ProtocolViolation(f"malformed response line: {line.strip()[:200]!r}") from None
        return reply

    def stop(self):
        if self.proc is None:
            return
        try:
            self.proc.stdin.close()
        except OSError:
            pass
        if self.proc.poll() is None:
            self.proc.kill()
        self.proc.wait()
        self.proc = None


@dataclass
class ExternalSession:
    run_id: str
    genome: Genome
    worker: int
    iteration: int = 0


def _check_reply(reply, run_id: str) -> float:
    if not isinstance(reply, dict) or "fitness" not in reply or "run_id" not in reply:
        raise ProtocolViolation(f"response lacks fitness/run_id: {reply!r}")
    if reply["run_id"] != run_id:
        raise ProtocolViolation(f"response for run {reply['run_id']!r} while waiting for {run_id!r}")
    fitness = reply["fitness"]
    if isinstance(fitness, bool) or not isinstance(fitness, (int, float)) or not 0.0 <= fitness <= 1.0:
        raise ProtocolViolation(f"fitness must be a number in [0, 1], got {fitness!r}")
    return float(fitness)


class ExternalEvaluator(Evaluator):
    def __init__(self, command: str | Sequence[str], timeout: float = DEFAULT_TIMEOUT, workers: int = 1):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = float(timeout)
        self.workers = [_Worker(self.command) for _ in range(max(1, workers))]
        self._next = 0

    def open(self, candidate: Candidate) -> ExternalSession:
        slot = self._next % len(self.workers)
        self._next += 1
        return ExternalSession(f"{candidate.id}:{candidate.seed}", candidate.genome, slot)

    def train_to(self, session: ExternalSession, iterations: int) -> float:
        request = {
            "genome": genome_to_record(session.genome),
            "train_from": session.iteration,
            "train_to": int(iterations),
            "run_id": session.run_id,
        }
        reply = self.workers[session.worker].request(request, self.timeout)
        fitness = _check_reply(reply, session.run_id)
        session.iteration = int(iterations)
        return fitness

    def advance(self, sessions, iterations):
        if len(self.workers) == 1:
            return super().advance(sessions, iterations)
        by_worker: dict[int, list[int]] = {}
        for k, s in enumerate(sessions):
            by_worker.setdefault(s.worker, []).append(k)
        out: list = [None] * len(sessions)

        def drain(indices):
            for k in indices:
                try:
                    out[k] = self.train_to(sessions[k], iterations)
                except EvaluatorFailure as e:
                    out[k] = e

        with ThreadPoolExecutor(len(by_worker)) as pool:
            list(pool.map(drain, by_worker.values()))
        return out

    def shutdown(self):
        for w in self.workers:
            w.stop()


def evaluate_external(
    genome: Genome,
    checkpoints: Sequence[int],
    endpoint: str | Sequence[str],
    timeout: float = DEFAULT_TIMEOUT,
    run_id: int = 0,
) -> FitnessReport:
    """Score one genome through a worker, one request per checkpoint segment."""
    evaluator = ExternalEvaluator(endpoint, timeout)
    try:
        return evaluator.evaluate(Probe(genome, id=run_id), checkpoints)
    finally:
        evaluator.shutdown()
