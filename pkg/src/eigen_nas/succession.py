"""The evolution driver.

Primary succession mutates the surviving parent with a large step-size until
the best fitness stops improving; secondary succession then continues with a
small step-size until it saturates too. Each generation spawns ``n`` children
from the single surviving parent, culls them through the extinction gates, and
the parent is replaced only by a child that beats it. Afterwards the winner's
blocks are duplicated in a final trial round.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .evaluation.base import Evaluator, EvaluatorFailure
from .evaluation.trainer import MimicryConfig
from .extinction import ExtinctionConfig, ExtinctionState, run_generation_extinction
from .genome import Genome, TensorShape, count_params, genome_from_record, genome_to_record, new_seed_genome
from .lineage import LineageLog
from .mutation import duplicable_blocks, duplicate_block, mutate_child

log = logging.getLogger(__name__)

PRIMARY, SECONDARY, DUPLICATION = "primary", "secondary", "duplication"
_DUPLICATION_STREAM = 0xD0B


class EmptyPopulation(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SuccessionConfig:
    population_size: int = 10
    m_primary: int = 100
    m_secondary: int = 10
    t1: int = 5000
    t2: int = 15000
    t3: int = 5000
    p: int = 5
    q: int = 2
    saturation_window: int = 5
    saturation_delta: float = 0.002
    max_generations: int = 64
    seed: int = 0
    mimicry: MimicryConfig | None = None
    duplication_trials: int = 4

    def __post_init__(self):
        if self.population_size < 2:
            raise ConfigError("population_size must be >= 2")
        if not self.m_primary >= self.m_secondary >= 1:
            raise ConfigError("need m_primary >= m_secondary >= 1")
        if not self.p >= self.q >= 1:
            raise ConfigError("need p >= q >= 1")
        if self.saturation_window < 2:
            raise ConfigError("saturation_window must be >= 2")
        if min(self.t1, self.t2, self.t3) < 1:
            raise ConfigError("T1, T2, T3 must be >= 1")
        if self.max_generations < 1:
            raise ConfigError("max_generations must be >= 1")
        if self.duplication_trials < 0:
            raise ConfigError("duplication_trials must be >= 0")

    @property
    def extinction(self) -> ExtinctionConfig:
        return ExtinctionConfig(self.t1, self.t2, self.t3, self.p, self.q)

    @property
    def total_iterations(self) -> int:
        return self.t1 + self.t2 + self.t3

    @classmethod
    def from_dict(cls, d: dict) -> "SuccessionConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown succession settings: {sorted(unknown)}")
        try:
            if d.get("mimicry") is not None:
                d["mimicry"] = MimicryConfig.from_dict(d["mimicry"])
            return cls(**d)
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["mimicry"] = self.mimicry.to_dict() if self.mimicry else None
        return out


@dataclass
class Individual:
    id: int
    genome: Genome
    parent_id: int | None = None
    phase: str = PRIMARY
    seed: int = 0
    generation: int = 0
    fitness_history: list[tuple[int, float]] = field(default_factory=list)

    @property
    def fitness(self) -> float | None:
        return self.fitness_history[-1][1] if self.fitness_history else None

    @property
    def params(self) -> int:
        if not hasattr(self, "_params"):
            self._params = count_params(self.genome)
        return self._params

    def to_dict(self) -> dict:
        return {
            "id": self.id, "parent_id": self.parent_id, "phase": self.phase, "seed": self.seed,
            "generation": self.generation, "genome": genome_to_record(self.genome),
            "fitness_history": [[i, f] for i, f in self.fitness_history],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Individual":
        return cls(
            id=d["id"], genome=genome_from_record(d["genome"]), parent_id=d["parent_id"],
            phase=d["phase"], seed=d["seed"], generation=d["generation"],
            fitness_history=[(int(i), float(f)) for i, f in d["fitness_history"]],
        )


@dataclass
class EvolutionResult:
    best: Individual
    generations_run: int
    phase_boundaries: tuple[int | None, int | None]
    lineage_path: str | None = None
    best_history: list[float] = field(default_factory=list)
    pre_duplication_best: Individual | None = None
    duplication_candidates: list[Individual] = field(default_factory=list)


def derive_seed(master: int, *keys: int) -> int:
    """Independent 32-bit seed for the stream addressed by ``keys``."""
    return int(np.random.SeedSequence([master, *keys]).generate_state(1)[0])


def child_rng(master: int, generation: int, index: int) -> np.random.Generator:
    return np.random.default_rng([master, generation, index])


def _rank(ind: Individual):
    return (-ind.fitness, ind.params, ind.id)


def select_parent(evaluated: Sequence[Individual]) -> Individual:
    """Highest final fitness; ties go to fewer parameters, then lower id."""
    scored = [i for i in evaluated if i.fitness is not None]
    if not scored:
        raise EmptyPopulation("no evaluated individuals to select from")
    return min(scored, key=_rank)


def check_saturation(best_history: Sequence[float], window: int, delta: float) -> bool:
    """True once the best fitness improved by less than ``delta`` over the last ``window`` entries."""
    if window < 2:
        raise ValueError("window must be >= 2")
    if len(best_history) < window:
        return False
    return best_history[-1] - best_history[-window] < delta


@dataclass
class DriverState:
    generation: int = 0  # generations completed; also the index of the next one
    phase: str = PRIMARY
    extinction: ExtinctionState = field(default_factory=ExtinctionState)
    parent: Individual | None = None
    best_history: list[float] = field(default_factory=list)
    phase_history: list[float] = field(default_factory=list)
    next_id: int = 1
    primary_end: int | None = None
    secondary_end: int | None = None
    evolved: bool = False
    finished: bool = False
    best: Individual | None = None

    def to_dict(self) -> dict:
        return {
            "generation": self.generation, "phase": self.phase,
            "extinction": {"v_t1": self.extinction.v_t1, "v_t2": self.extinction.v_t2},
            "parent": self.parent.to_dict() if self.parent else None,
            "best_history": self.best_history, "phase_history": self.phase_history,
            "next_id": self.next_id, "primary_end": self.primary_end, "secondary_end": self.secondary_end,
            "evolved": self.evolved, "finished": self.finished,
            "best": self.best.to_dict() if self.best else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DriverState":
        return cls(
            generation=d["generation"], phase=d["phase"],
            extinction=ExtinctionState(d["extinction"]["v_t1"], d["extinction"]["v_t2"]),
            parent=Individual.from_dict(d["parent"]) if d["parent"] else None,
            best_history=list(d["best_history"]), phase_history=list(d["phase_history"]),
            next_id=d["next_id"], primary_end=d["primary_end"], secondary_end=d["secondary_end"],
            evolved=d["evolved"], finished=d["finished"],
            best=Individual.from_dict(d["best"]) if d["best"] else None,
        )


class Succession:
    """Generation-by-generation driver; :meth:`run` executes everything that is left."""

    def __init__(
        self,
        config: SuccessionConfig,
        evaluator: Evaluator,
        input_shape: TensorShape,
        num_classes: int,
        lineage: LineageLog | None = None,
        state: DriverState | None = None,
    ):
        self.config = config
        self.evaluator = evaluator
        self.seed_genome = new_seed_genome(input_shape, num_classes)
        self.lineage = lineage if lineage is not None else LineageLog()
        self.state = state if state is not None else DriverState()
        self.duplication_candidates: list[Individual] = []
        self.pre_duplication_best: Individual | None = None

    def _emit(self, record: dict):
        self.lineage.emit(record)

    @property
    def step_size(self) -> int:
        return self.config.m_primary if self.state.phase == PRIMARY else self.config.m_secondary

    def spawn(self, generation: int) -> list[Individual]:
        st, cfg = self.state, self.config
        base = st.parent.genome if st.parent else self.seed_genome
        children = []
        for i in range(cfg.population_size):
            trace: list = []
            genome = mutate_child(base, self.step_size, child_rng(cfg.seed, generation, i), trace)
            child = Individual(
                id=st.next_id, genome=genome, parent_id=st.parent.id if st.parent else None,
                phase=st.phase, seed=derive_seed(cfg.seed, generation, i), generation=generation,
            )
            st.next_id += 1
            children.append(child)
            self._emit({
                "event": "spawn", "generation": generation, "phase": st.phase, "id": child.id,
                "parent_id": child.parent_id, "steps": [str(s) for s in trace],
                "nodes": len(genome.nodes), "params": child.params,
            })
        return children

    def step(self) -> bool:
        """Run one generation. Returns False once the succession loop has ended."""
        st, cfg = self.state, self.config
        if st.evolved:
            return False
        g = st.generation
        phase = st.phase
        children = self.spawn(g)

        def emit(record):
            self._emit({**record, "phase": phase})

        _, best_child, st.extinction = run_generation_extinction(
            children, self.evaluator, st.extinction, cfg.extinction, generation=g, emit=emit)

        contenders = [c for c in (st.parent, best_child) if c is not None]
        previous = st.parent
        if contenders:
            st.parent = select_parent(contenders)
        best_fitness = st.parent.fitness if st.parent else 0.0
        self._emit({
            "event": "selection", "generation": g, "phase": phase,
            "id": st.parent.id if st.parent else None,
            "replaced": previous is not st.parent,
            "best_fitness": best_fitness, "params": st.parent.params if st.parent else None,
            "v_t1": st.extinction.v_t1, "v_t2": st.extinction.v_t2,
        })
        st.best_history.append(best_fitness)
        st.phase_history.append(best_fitness)
        st.generation = g + 1

        saturated = check_saturation(st.phase_history, cfg.saturation_window, cfg.saturation_delta)
        if phase == PRIMARY and saturated:
            st.primary_end = g
            st.phase = SECONDARY
            st.phase_history = [best_fitness]
            self._emit({"event": "phase_switch", "generation": g, "phase": SECONDARY,
                        "from": PRIMARY, "best_fitness": best_fitness})
        elif phase == SECONDARY and saturated:
            st.secondary_end = g
            st.evolved = True
        if not st.evolved and st.generation >= cfg.max_generations:
            if st.phase == PRIMARY:
                st.primary_end = g
            else:
                st.secondary_end = g
            st.evolved = True
        if st.evolved:
            self._emit({"event": "succession_end", "generation": g, "phase": st.phase,
                        "primary_end": st.primary_end, "secondary_end": st.secondary_end,
                        "best_fitness": best_fitness})
        return not st.evolved

    def finish(self) -> Individual | None:
        """Run the duplication phase (once) and return the overall best."""
        st = self.state
        if st.finished:
            return st.best
        best = st.parent
        self.pre_duplication_best = best
        if best is not None:
            rng = np.random.default_rng([self.config.seed, _DUPLICATION_STREAM])
            best, self.duplication_candidates = self._duplication(best, rng)
        st.best = best
        st.finished = True
        self._emit({
            "event": "final", "generation": st.generation, "phase": DUPLICATION,
            "id": best.id if best else None, "best_fitness": best.fitness if best else None,
            "params": best.params if best else None,
        })
        return best

    def _duplication(self, best: Individual, rng) -> tuple[Individual, list[Individual]]:
        def emit(record):
            self._emit({**record, "generation": self.state.generation, "phase": DUPLICATION})

        candidates = duplication_candidates(best, self.config, self.evaluator, rng, self.state, emit)
        return pick_duplication_winner(best, candidates), candidates

    def run(self, stop_after: int | None = None, on_generation=None) -> EvolutionResult | None:
        """Advance until done, or until ``stop_after`` generations have completed (returns None)."""
        while not self.state.evolved:
            self.step()
            if on_generation is not None:
                on_generation(self)
            if stop_after is not None and self.state.generation >= stop_after and not self.state.evolved:
                return None
        best = self.finish()
        if on_generation is not None:
            on_generation(self)
        return self.result(best)

    def result(self, best: Individual | None = None) -> EvolutionResult:
        st = self.state
        best = best or st.best or st.parent
        if best is None:
            raise EmptyPopulation("no individual was ever evaluated successfully")
        return EvolutionResult(
            best=best,
            generations_run=st.generation,
            phase_boundaries=(st.primary_end, st.secondary_end),
            lineage_path=str(self.lineage.path) if self.lineage.path else None,
            best_history=list(st.best_history),
            pre_duplication_best=self.pre_duplication_best,
            duplication_candidates=list(self.duplication_candidates),
        )


def duplication_candidates(
    best: Individual,
    config: SuccessionConfig,
    evaluator: Evaluator,
    rng: np.random.Generator,
    state: DriverState | None = None,
    emit=None,
) -> list[Individual]:
    """Train ``config.duplication_trials`` block duplications of ``best`` on the full schedule."""
    emit = emit or (lambda record: None)
    blocks = duplicable_blocks(best.genome)
    out: list[Individual] = []
    if not blocks:
        emit({"event": "duplication_skipped", "reason": "no block with a convolution"})
        return out
    checkpoints = list(config.extinction.checkpoints)
    next_id = state.next_id if state is not None else best.id + 1
    # uniform over blocks, without repeats until every block has had a turn
    order: list[int] = []
    for trial in range(config.duplication_trials):
        if not order:
            order = [blocks[i] for i in rng.permutation(len(blocks))]
        index = order.pop(0)
        try:
            genome = duplicate_block(best.genome, index, rng)
        except Exception as e:  # Inapplicable or shape failure for this block
            emit({"event": "duplication_trial", "trial": trial, "block": index, "id": None,
                  "verdict": "inapplicable", "cause": str(e)})
            continue
        cand = Individual(id=next_id, genome=genome, parent_id=best.id, phase=DUPLICATION,
                          seed=derive_seed(config.seed, _DUPLICATION_STREAM, trial),
                          generation=best.generation)
        next_id += 1
        try:
            report = evaluator.evaluate(cand, checkpoints)
        except EvaluatorFailure as e:
            emit({"event": "duplication_trial", "trial": trial, "block": index, "id": cand.id,
                  "verdict": "failed", "cause": str(e)})
            continue
        cand.fitness_history = list(report.scores)
        out.append(cand)
        emit({"event": "duplication_trial", "trial": trial, "block": index, "id": cand.id,
              "params": cand.params, "fitness": cand.fitness, "verdict": "trained"})
    if state is not None:
        state.next_id = next_id
    return out


def pick_duplication_winner(best: Individual, candidates: Sequence[Individual]) -> Individual:
    if not candidates:
        return best
    winner = select_parent(candidates)
    return winner if winner.fitness > best.fitness else best


def run_duplication_phase(
    best: Individual,
    config: SuccessionConfig,
    evaluator: Evaluator,
    rng: np.random.Generator,
) -> Individual:
    """Best duplication candidate if it strictly beats ``best``, else ``best``."""
    if best.fitness is None:
        raise ValueError("best individual has not been evaluated")
    return pick_duplication_winner(best, duplication_candidates(best, config, evaluator, rng))


def run_succession(
    config: SuccessionConfig,
    evaluator: Evaluator,
    input_shape: TensorShape,
    num_classes: int,
    lineage: LineageLog | None = None,
) -> EvolutionResult:
    """Full run: primary and secondary succession followed by the duplication phase."""
    return Succession(config, evaluator, input_shape, num_classes, lineage).run()
