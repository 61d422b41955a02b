"""Deterministic analytic fitness landscape for exercising the search machinery.

A genome's capacity score is a non-negative weighted sum of structural
features. The fitness curve rises from ``floor`` towards an asymptote set by
that score::

    asymptote = floor + (ceiling - floor) * (1 - exp(-score))
    fitness(it) = floor + (asymptote + noise - floor) * (1 - exp(-it / tau))

``noise`` is a fixed per-genome offset drawn from a stream keyed on the genome
encoding and the seed, so repeated queries agree exactly.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass

import numpy as np

from ..genome import Concat, Conv, Genome, Pool, count_params, depth_of, encode_genome
from .base import Candidate, Evaluator


@dataclass(frozen=True)
class SurrogateParams:
    floor: float = 0.1
    ceiling: float = 0.95
    w_convs: float = 0.12
    w_concats: float = 0.05
    w_depth: float = 0.02
    w_channels: float = 0.001
    w_params: float = 0.0
    tau: float = 5.0
    # learning slows with log10(params) by this factor; keeps depth monotonicity when 0
    tau_params: float = 0.0
    noise: float = 0.002
    # iterations are divided by this before entering the curve
    iteration_scale: float = 1000.0

    def __post_init__(self):
        if not 0.0 <= self.floor < self.ceiling <= 1.0:
            raise ValueError("need 0 <= floor < ceiling <= 1")
        for name in ("w_convs", "w_concats", "w_depth", "w_channels", "w_params", "tau_params", "noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.tau <= 0 or self.iteration_scale <= 0:
            raise ValueError("tau and iteration_scale must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "SurrogateParams":
        return cls(**{k: float(v) for k, v in d.items()})

    def to_dict(self) -> dict:
        return asdict(self)


def genome_features(genome: Genome) -> dict[str, float]:
    convs = genome.ids_of(Conv)
    return {
        "convs": len(convs),
        "concats": len(genome.ids_of(Concat)),
        "pools": len(genome.ids_of(Pool)),
        "depth": depth_of(genome),
        "channels": sum(genome.kinds[i].channels for i in convs),
        "params": count_params(genome),
    }


def _noise(genome: Genome, seed: int) -> float:
    digest = hashlib.sha256(f"{seed}:{encode_genome(genome)}".encode()).digest()
    return float(np.random.default_rng(int.from_bytes(digest[:8], "little")).standard_normal())


def surrogate_fitness(genome: Genome, iterations: int, params: SurrogateParams = SurrogateParams(), seed: int = 0) -> float:
    f = genome_features(genome)
    score = (
        params.w_convs * f["convs"]
        + params.w_concats * f["concats"]
        + params.w_depth * f["depth"]
        + params.w_channels * f["channels"]
        + params.w_params * math.log1p(f["params"])
    )
    asymptote = params.floor + (params.ceiling - params.floor) * (1.0 - math.exp(-score))
    if params.noise:
        asymptote += params.noise * _noise(genome, seed)
    asymptote = min(max(asymptote, params.floor), 1.0)
    tau = params.tau * (1.0 + params.tau_params * math.log10(1 + f["params"]))
    progress = 1.0 - math.exp(-(iterations / params.iteration_scale) / tau)
    return min(max(params.floor + (asymptote - params.floor) * progress, 0.0), 1.0)


class SurrogateEvaluator(Evaluator):
    """Stateless evaluator; a session is just the candidate's genome and seed."""

    def __init__(self, params: SurrogateParams = SurrogateParams(), seed: int = 0):
        self.params = params
        self.seed = seed

    def open(self, candidate: Candidate):
        return candidate.genome

    def train_to(self, session: Genome, iterations: int) -> float:
        return surrogate_fitness(session, iterations, self.params, self.seed)
