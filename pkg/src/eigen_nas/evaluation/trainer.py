"""Minibatch SGD trainer with optional mimicry of a teacher's logits.

Training is resumable: a :class:`TrainingSession` can be advanced to any
cumulative iteration count, and advancing 0 -> A -> B gives the same weights
as 0 -> B because minibatches and the learning rate depend only on the
iteration index.
"""

from __future__ import annotations

import hashlib
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..genome import (
    Classifier,
    Concat,
    Conv,
    Genome,
    GlobalPool,
    Node,
    ShapeMismatch,
    TensorShape,
    encode_genome,
)
from .base import Candidate, Evaluator, EvaluatorFailure, FitnessReport, Probe
from .datasets import Dataset
from .losses import distillation_loss_and_grad, supervised_loss_and_grad
from .network import Network

log = logging.getLogger(__name__)

DEFAULT_SCHEDULE = ((0, 0.1), (15000, 0.01), (20000, 0.001))
DEFAULT_TOTAL_ITERATIONS = 25000


@dataclass(frozen=True)
class TrainerConfig:
    batch_size: int = 128
    momentum: float = 0.9
    weight_decay: float = 0.0005
    # breakpoints are relative to ``schedule_length`` and rescaled to the run length
    lr_schedule: tuple[tuple[int, float], ...] = DEFAULT_SCHEDULE
    schedule_length: int = DEFAULT_TOTAL_ITERATIONS
    seed: int = 0
    eval_batch: int = 1024
    dtype: str = "float32"

    def __post_init__(self):
        lrs = [lr for _, lr in self.lr_schedule]
        if not lrs or any(lr <= 0 for lr in lrs):
            raise ValueError("learning rates must be positive")
        if any(b > a for a, b in zip(lrs, lrs[1:])):
            raise ValueError("learning rates must be non-increasing")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def lr_at(self, iteration: int, total_iterations: int) -> float:
        scale = total_iterations / self.schedule_length
        lr = self.lr_schedule[0][1]
        for start, value in self.lr_schedule:
            if iteration >= start * scale:
                lr = value
        return lr

    @classmethod
    def from_dict(cls, d: dict) -> "TrainerConfig":
        d = dict(d)
        if "lr_schedule" in d:
            d["lr_schedule"] = tuple((int(i), float(lr)) for i, lr in d["lr_schedule"])
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size, "momentum": self.momentum, "weight_decay": self.weight_decay,
            "lr_schedule": [list(p) for p in self.lr_schedule], "schedule_length": self.schedule_length,
            "seed": self.seed, "eval_batch": self.eval_batch, "dtype": self.dtype,
        }


@dataclass(frozen=True)
class MimicryConfig:
    alpha: float = 0.9
    temperature: float = 5.0
    teacher_logits_source: str = "reference-model"
    reference_iterations: int = 3000
    phases: tuple[str, ...] = ("primary", "secondary", "duplication")

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "MimicryConfig":
        d = dict(d)
        if "phases" in d:
            d["phases"] = tuple(d["phases"])
        return cls(**d)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "temperature": self.temperature,
                "teacher_logits_source": self.teacher_logits_source,
                "reference_iterations": self.reference_iterations, "phases": list(self.phases)}


def _epoch_perm(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


class TrainingSession:
    """Weights, optimizer state and iteration counter for one network."""

    def __init__(
        self,
        genome: Genome,
        dataset: Dataset,
        trainer: TrainerConfig,
        total_iterations: int,
        seed: int,
        mimicry: MimicryConfig | None = None,
        teacher_logits: np.ndarray | None = None,
    ):
        if genome.input_shape != dataset.input_shape:
            raise ShapeMismatch(f"genome expects {genome.input_shape}, dataset provides {dataset.input_shape}")
        if genome.num_classes != dataset.num_classes:
            raise ShapeMismatch(f"genome has {genome.num_classes} classes, dataset {dataset.num_classes}")
        if mimicry is not None and teacher_logits is None:
            raise ValueError("mimicry needs teacher logits")
        if teacher_logits is not None and teacher_logits.shape != (len(dataset.y_train), dataset.num_classes):
            raise ValueError("teacher logits must have one row per training example")
        self.genome = genome
        self.dataset = dataset
        self.trainer = trainer
        self.total_iterations = max(int(total_iterations), 1)
        self.seed = int(seed)
        self.mimicry = mimicry
        self.teacher_logits = teacher_logits
        self.net = Network(genome, np.random.default_rng([self.seed, 0x1417]), trainer.dtype)
        self.velocity = {k: np.zeros_like(v) for k, v in self.net.params.items()}
        self.iteration = 0
        self.diverged = False
        self._perms: dict[int, np.ndarray] = {}

    def __getstate__(self):
        state = self.__dict__.copy()
        state["dataset"] = None
        state["teacher_logits"] = None
        state["_perms"] = {}
        return state

    def _batch(self, iteration: int) -> np.ndarray:
        n = len(self.dataset.y_train)
        b = self.trainer.batch_size
        pos = np.arange(iteration * b, iteration * b + b)
        epochs, offsets = pos // n, pos % n
        out = np.empty(b, dtype=np.int64)
        for e in np.unique(epochs):
            if e not in self._perms:
                self._perms = {k: v for k, v in self._perms.items() if k >= e}
                self._perms[int(e)] = _epoch_perm(self.seed, int(e), n)
            sel = epochs == e
            out[sel] = self._perms[int(e)][offsets[sel]]
        return out

    def step(self) -> float:
        idx = self._batch(self.iteration)
        x = self.dataset.x_train[idx]
        y = self.dataset.y_train[idx]
        logits = self.net.forward(x, train=True)
        if self.mimicry is not None:
            loss, dlogits = distillation_loss_and_grad(
                logits, y, self.teacher_logits[idx], self.mimicry.alpha, self.mimicry.temperature)
        else:
            loss, dlogits = supervised_loss_and_grad(logits, y)
        if not np.isfinite(loss):
            self.diverged = True
            return loss
        grads = self.net.backward(dlogits)
        lr = self.trainer.lr_at(self.iteration, self.total_iterations)
        mom, wd = self.trainer.momentum, self.trainer.weight_decay
        for name in self.net.decayed:
            grads[name] += wd * self.net.params[name]
        for name, g in grads.items():
            v = self.velocity[name]
            v *= mom
            v += g
            self.net.params[name] -= lr * v
        self.iteration += 1
        return loss

    def train_to(self, target: int) -> float:
        """Train up to cumulative iteration ``target`` and return validation accuracy."""
        if target < self.iteration:
            raise ValueError(f"cannot rewind from iteration {self.iteration} to {target}")
        # overflow is detected explicitly below and scored as fitness 0
        with np.errstate(over="ignore", invalid="ignore"):
            while self.iteration < target and not self.diverged:
                self.step()
            if self.diverged:
                return 0.0
            for p in self.net.params.values():
                if not np.all(np.isfinite(p)):
                    self.diverged = True
                    return 0.0
            return self.validation_accuracy()

    def predict_logits(self, x: np.ndarray) -> np.ndarray:
        chunk = self.trainer.eval_batch
        return np.concatenate([self.net.forward(x[i:i + chunk], train=False)
                               for i in range(0, len(x), chunk)], axis=0)

    def validation_accuracy(self) -> float:
        ds = self.dataset
        if len(ds.y_val) == 0:
            return 0.0
        logits = self.predict_logits(ds.x_val)
        if not np.all(np.isfinite(logits)):
            return 0.0
        return float((logits.argmax(axis=1) == ds.y_val).mean())


def train_and_score(
    genome: Genome,
    dataset: Dataset,
    checkpoints: Sequence[int],
    trainer: TrainerConfig = TrainerConfig(),
    mimicry: MimicryConfig | None = None,
    seed: int = 0,
    teacher_logits: np.ndarray | None = None,
    total_iterations: int | None = None,
) -> FitnessReport:
    """Train ``genome`` through each cumulative checkpoint, reporting validation accuracy."""
    checkpoints = [int(c) for c in checkpoints]
    if not checkpoints:
        return FitnessReport()
    if mimicry is not None and teacher_logits is None:
        teacher_logits = resolve_teacher_logits(mimicry, dataset, trainer)
    session = TrainingSession(genome, dataset, trainer, total_iterations or checkpoints[-1], seed,
                              mimicry, teacher_logits)
    report = FitnessReport()
    for c in checkpoints:
        t0 = time.perf_counter()
        report.scores.append((c, session.train_to(c)))
        report.wall_time.append(time.perf_counter() - t0)
    return report


# -- teacher -----------------------------------------------------------------


def reference_genome(input_shape: TensorShape, num_classes: int) -> Genome:
    """A fixed, reasonably strong architecture used as the mimicry teacher."""
    nodes = [
        Node(0, Conv(64, 3, 1)),
        Node(1, Conv(64, 3, 1)),
        Node(2, Concat()),
        Node(3, Conv(96, 3, 2)),
        Node(4, Conv(96, 3, 1)),
        Node(5, GlobalPool()),
        Node(6, Classifier(num_classes)),
    ]
    edges = {(0, 1), (0, 2), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6)}
    return Genome(tuple(nodes), frozenset(edges), input_shape, num_classes)


def _teacher_cache_key(dataset: Dataset, trainer: TrainerConfig, mimicry: MimicryConfig) -> str:
    h = hashlib.sha256()
    h.update(dataset.x_train.tobytes())
    h.update(dataset.y_train.tobytes())
    h.update(repr((trainer.to_dict(), mimicry.reference_iterations)).encode())
    h.update(encode_genome(reference_genome(dataset.input_shape, dataset.num_classes)).encode())
    return h.hexdigest()[:16]


def train_reference_teacher(dataset: Dataset, trainer: TrainerConfig, iterations: int, seed: int = 0) -> np.ndarray:
    genome = reference_genome(dataset.input_shape, dataset.num_classes)
    session = TrainingSession(genome, dataset, trainer, iterations, seed)
    acc = session.train_to(iterations)
    log.info("reference teacher trained for %d iterations, validation accuracy %.4f", iterations, acc)
    return session.predict_logits(dataset.x_train).astype(np.float64)


def load_logits(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".npy":
        return np.load(path)
    return np.loadtxt(path, delimiter=",", ndmin=2)


def resolve_teacher_logits(
    mimicry: MimicryConfig,
    dataset: Dataset,
    trainer: TrainerConfig,
    cache_dir: str | Path | None = None,
) -> np.ndarray:
    """Teacher logits for every training example, from a file or a cached reference model."""
    if mimicry.teacher_logits_source != "reference-model":
        logits = load_logits(mimicry.teacher_logits_source)
    else:
        path = None
        if cache_dir is not None:
            path = Path(cache_dir) / f"teacher-{_teacher_cache_key(dataset, trainer, mimicry)}.npy"
            if path.exists():
                return np.load(path)
        logits = train_reference_teacher(dataset, trainer, mimicry.reference_iterations, seed=trainer.seed)
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            np.save(path, logits)
    if logits.shape != (len(dataset.y_train), dataset.num_classes):
        raise ValueError(f"teacher logits have shape {logits.shape}, expected "
                         f"{(len(dataset.y_train), dataset.num_classes)}")
    return logits


# -- evaluator ---------------------------------------------------------------

_worker_data: dict = {}


def _worker_init(dataset, teacher):
    _worker_data["dataset"] = dataset
    _worker_data["teacher"] = teacher


def _worker_advance(session: TrainingSession, target: int):
    session.dataset = _worker_data["dataset"]
    if session.mimicry is not None:
        session.teacher_logits = _worker_data["teacher"]
    return session, session.train_to(target)


@dataclass
class BuiltinEvaluator(Evaluator):
    dataset: Dataset
    trainer: TrainerConfig
    total_iterations: int
    mimicry: MimicryConfig | None = None
    teacher_logits: np.ndarray | None = None
    workers: int = 1
    cache_dir: str | None = None
    _pool: ProcessPoolExecutor | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.mimicry is not None and self.teacher_logits is None:
            self.teacher_logits = resolve_teacher_logits(self.mimicry, self.dataset, self.trainer, self.cache_dir)

    def open(self, candidate: Candidate) -> TrainingSession:
        use_mimicry = self.mimicry is not None and candidate.phase in self.mimicry.phases
        return TrainingSession(
            candidate.genome, self.dataset, self.trainer, self.total_iterations, candidate.seed,
            self.mimicry if use_mimicry else None, self.teacher_logits if use_mimicry else None,
        )

    def train_to(self, session: TrainingSession, iterations: int) -> float:
        try:
            return session.train_to(iterations)
        except (FloatingPointError, MemoryError) as e:
            raise EvaluatorFailure(str(e)) from e

    def advance(self, sessions, iterations):
        if self.workers <= 1 or len(sessions) <= 1:
            return super().advance(sessions, iterations)
        if self._pool is None:
            self._pool = ProcessPoolExecutor(self.workers, initializer=_worker_init,
                                             initargs=(self.dataset, self.teacher_logits))
        futures = [self._pool.submit(_worker_advance, s, iterations) for s in sessions]
        out = []
        for s, fut in zip(sessions, futures):
            try:
                trained, fitness = fut.result()
            except Exception as e:
                out.append(EvaluatorFailure(f"worker failed: {e}"))
                continue
            # adopt the trained state, keep the local data references
            dataset, teacher = s.dataset, s.teacher_logits
            s.__dict__.update(trained.__dict__)
            s.dataset, s.teacher_logits = dataset, teacher
            out.append(fitness)
        return out

    def shutdown(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def score(self, genome: Genome, seed: int = 0, phase: str = "primary") -> FitnessReport:
        return self.evaluate(Probe(genome, seed, phase), [self.total_iterations])
