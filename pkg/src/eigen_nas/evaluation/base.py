"""Evaluator contract shared by the surrogate, built-in and external backends."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Any, Protocol, Sequence

from ..genome import Genome


class EvaluatorFailure(RuntimeError):
    """An individual could not be evaluated. It is extinguished; the run continues."""


class Candidate(Protocol):
    id: int
    genome: Genome
    seed: int
    phase: str


@dataclass
class FitnessReport:
    scores: list[tuple[int, float]] = field(default_factory=list)
    wall_time: list[float] = field(default_factory=list)

    def __post_init__(self):
        its = [i for i, _ in self.scores]
        if any(b <= a for a, b in zip(its, its[1:])):
            raise ValueError("checkpoint iterations must be strictly increasing")
        if any(not 0.0 <= f <= 1.0 for _, f in self.scores):
            raise ValueError("fitness must lie in [0, 1]")

    @property
    def final(self) -> float | None:
        return self.scores[-1][1] if self.scores else None

    def to_dict(self) -> dict:
        return {"scores": [[i, f] for i, f in self.scores], "wall_time": self.wall_time}


class Evaluator:
    """Incremental fitness evaluation.

    ``open`` starts a training run for one candidate; ``advance`` trains each
    session up to a cumulative iteration count and returns its fitness, or the
    exception that made it fail.
    """

    def open(self, candidate: Candidate) -> Any:
        raise NotImplementedError

    def train_to(self, session: Any, iterations: int) -> float:
        raise NotImplementedError

    def advance(self, sessions: Sequence[Any], iterations: int) -> list[float | BaseException]:
        out: list[float | BaseException] = []
        for s in sessions:
            try:
                out.append(self.train_to(s, iterations))
            except EvaluatorFailure as e:
                out.append(e)
        return out

    def close(self, session: Any) -> None:
        pass

    def shutdown(self) -> None:
        pass

    def evaluate(self, candidate: Candidate, checkpoints: Sequence[int]) -> FitnessReport:
        """Train through every checkpoint and collect the scores."""
        session = self.open(candidate)
        report = FitnessReport()
        try:
            for target in checkpoints:
                t0 = time.perf_counter()
                outcome = self.advance([session], target)[0]
                if isinstance(outcome, BaseException):
                    raise outcome
                report.scores.append((int(target), float(outcome)))
                report.wall_time.append(time.perf_counter() - t0)
        finally:
            self.close(session)
        return report


@dataclass
class Probe:
    """Minimal candidate for one-off evaluations outside a run."""

    genome: Genome
    seed: int = 0
    phase: str = "primary"
    id: int = 0
