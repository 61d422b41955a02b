"""Fitness backends: analytic surrogate, built-in numpy trainer, external worker."""

from .base import Evaluator, EvaluatorFailure, FitnessReport, Probe
from .losses import cross_entropy, distillation_loss, softmax
from .surrogate import SurrogateEvaluator, SurrogateParams, surrogate_fitness
from .trainer import BuiltinEvaluator, MimicryConfig, TrainerConfig, TrainingSession, train_and_score
from .external import ExternalEvaluator, ProtocolViolation, Timeout, WorkerCrash, evaluate_external

__all__ = [
    "BuiltinEvaluator", "Evaluator", "EvaluatorFailure", "ExternalEvaluator", "FitnessReport",
    "MimicryConfig", "Probe", "ProtocolViolation", "SurrogateEvaluator",
    "SurrogateParams", "Timeout", "TrainerConfig", "TrainingSession", "WorkerCrash",
    "cross_entropy", "distillation_loss", "evaluate_external", "softmax", "surrogate_fitness",
    "train_and_score",
]
