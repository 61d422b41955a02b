"""Staged early elimination of weak individuals at landmark iterations.

At each of two gates the population is scored, the gate threshold is raised to
``max(k-th best score, previous threshold)`` and everyone strictly below it is
extinguished. Thresholds only ever go up across generations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Sequence

if TYPE_CHECKING:
    from .evaluation.base import Evaluator
    from .succession import Individual

log = logging.getLogger(__name__)


class EmptyScores(ValueError):
    pass


@dataclass(frozen=True)
class ExtinctionState:
    v_t1: float = 0.0
    v_t2: float = 0.0


@dataclass(frozen=True)
class ExtinctionConfig:
    t1: int
    t2: int
    t3: int
    p: int = 5
    q: int = 2

    def __post_init__(self):
        if min(self.t1, self.t2, self.t3) < 1:
            raise ValueError("segment lengths T1, T2, T3 must be >= 1")
        if not self.p >= self.q >= 1:
            raise ValueError("need p >= q >= 1")

    @property
    def checkpoints(self) -> tuple[int, int, int]:
        """Cumulative iteration counts at the two gates and the final score."""
        return (self.t1, self.t1 + self.t2, self.t1 + self.t2 + self.t3)


def sorted_threshold(scores: Sequence[float], k: int) -> float:
    """The k-th largest score (1-based); the minimum when k exceeds the list."""
    if not scores:
        raise EmptyScores("no scores to threshold")
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(scores, reverse=True)
    return ranked[min(k, len(ranked)) - 1]


def update_threshold(prev: float, scores: Sequence[float], k: int) -> float:
    return max(sorted_threshold(scores, k), prev)


def _rank_key(ind: "Individual", fitness: float):
    # higher fitness first, then fewer parameters, then lower id
    return (-fitness, ind.params, ind.id)


def run_generation_extinction(
    population: list["Individual"],
    evaluator: "Evaluator",
    state: ExtinctionState,
    config: ExtinctionConfig,
    generation: int = 0,
    emit: Callable[[dict], None] | None = None,
) -> tuple[list["Individual"], "Individual | None", ExtinctionState]:
    """Train, score and cull one generation through both gates.

    Returns the final survivors, the best of them (``None`` only if every
    individual failed to evaluate) and the updated thresholds.
    """
    if not population:
        raise ValueError("population is empty")
    emit = emit or (lambda record: None)
    sessions = {ind.id: evaluator.open(ind) for ind in population}
    alive = list(population)
    v = [state.v_t1, state.v_t2]
    gates = (("T1", config.p), ("T2", config.q), ("T3", None))

    try:
        for gate_index, (target, (name, k)) in enumerate(zip(config.checkpoints, gates)):
            outcomes = evaluator.advance([sessions[ind.id] for ind in alive], target)
            scored: list[tuple["Individual", float]] = []
            for ind, outcome in zip(alive, outcomes):
                if isinstance(outcome, BaseException):
                    log.warning("individual %d failed at %s: %s", ind.id, name, outcome)
                    emit({"event": "checkpoint", "generation": generation, "checkpoint": name,
                          "id": ind.id, "fitness": None, "threshold": None,
                          "verdict": "failed", "cause": f"{type(outcome).__name__}: {outcome}"})
                    continue
                fitness = float(outcome)
                ind.fitness_history.append((target, fitness))
                scored.append((ind, fitness))
            if not scored:
                alive = []
                break

            if k is None:
                alive = [ind for ind, _ in scored]
                for ind, f in scored:
                    emit({"event": "checkpoint", "generation": generation, "checkpoint": name,
                          "id": ind.id, "fitness": f, "threshold": None, "verdict": "final"})
                break

            threshold = update_threshold(v[gate_index], [f for _, f in scored], k)
            v[gate_index] = threshold
            keep = [(ind, f) for ind, f in scored if f >= threshold]
            spared = None
            if not keep:
                spared = min(scored, key=lambda pair: _rank_key(*pair))
                keep = [spared]
            kept_ids = {ind.id for ind, _ in keep}
            for ind, f in scored:
                if spared is not None and ind is spared[0]:
                    verdict = "spared"
                else:
                    verdict = "survive" if ind.id in kept_ids else "extinct"
                emit({"event": "checkpoint", "generation": generation, "checkpoint": name,
                      "id": ind.id, "fitness": f, "threshold": threshold, "verdict": verdict})
            alive = [ind for ind, _ in keep]
    finally:
        for s in sessions.values():
            evaluator.close(s)

    new_state = ExtinctionState(v[0], v[1])
    if not alive:
        return [], None, new_state
    best = min(alive, key=lambda ind: _rank_key(ind, ind.fitness))
    return alive, best, new_state
