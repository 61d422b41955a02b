"""Run configuration documents.

A run config is a JSON object::

    {
      "succession": {... SuccessionConfig fields ...},
      "evaluator": {"surrogate": {...}} | {"builtin": {...}} | {"external": {...}},
      "problem": {"input_shape": [3, 32, 32], "num_classes": 10},
      "output": "runs/example"
    }

``problem`` is needed by the surrogate and external backends; the built-in
trainer takes the shape from its dataset. Exactly one evaluator backend may
be named.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .evaluation.base import Evaluator
from .evaluation.external import DEFAULT_TIMEOUT, ExternalEvaluator
from .evaluation.surrogate import SurrogateEvaluator, SurrogateParams
from .evaluation.trainer import BuiltinEvaluator, TrainerConfig
from .genome import TensorShape
from .succession import ConfigError, SuccessionConfig

BACKENDS = ("surrogate", "builtin", "external")
_TOP_KEYS = {"succession", "evaluator", "problem", "output", "resume"}


@dataclass
class RunConfig:
    succession: SuccessionConfig
    backend: str
    backend_options: dict
    output: str = "run"
    input_shape: TensorShape | None = None
    num_classes: int | None = None
    resume: bool = False
    _dataset: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ConfigError(f"unknown evaluator backend {self.backend!r}")
        if self.backend != "builtin" and (self.input_shape is None or self.num_classes is None):
            raise ConfigError(f"the {self.backend} backend needs problem.input_shape and problem.num_classes")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        evaluator = d.get("evaluator")
        if not isinstance(evaluator, dict) or len(evaluator) != 1:
            named = sorted(evaluator) if isinstance(evaluator, dict) else evaluator
            raise ConfigError(f"exactly one evaluator backend must be configured, got {named!r}")
        (backend, options), = evaluator.items()
        problem = d.get("problem") or {}
        shape = problem.get("input_shape")
        try:
            input_shape = TensorShape.of(*shape) if shape is not None else None
        except Exception as e:
            raise ConfigError(f"bad problem.input_shape: {e}") from e
        return cls(
            succession=SuccessionConfig.from_dict(d.get("succession", {})),
            backend=backend,
            backend_options=dict(options or {}),
            output=str(d.get("output", "run")),
            input_shape=input_shape,
            num_classes=problem.get("num_classes"),
            resume=bool(d.get("resume", False)),
        )

    def to_dict(self) -> dict:
        out = {
            "succession": self.succession.to_dict(),
            "evaluator": {self.backend: self.backend_options},
            "output": self.output,
            "resume": self.resume,
        }
        if self.input_shape is not None:
            out["problem"] = {"input_shape": list(self.input_shape), "num_classes": self.num_classes}
        return out

    def with_overrides(self, seed: int | None = None, output: str | None = None) -> "RunConfig":
        d = self.to_dict()
        if seed is not None:
            d["succession"]["seed"] = seed
        if output is not None:
            d["output"] = output
        return RunConfig.from_dict(d)

    def dataset(self):
        if self.backend != "builtin":
            return None
        if self._dataset is None:
            from .evaluation.datasets import load_dataset
            self._dataset = load_dataset(self.backend_options.get("dataset", {"kind": "digits"}))
        return self._dataset

    def problem(self) -> tuple[TensorShape, int]:
        data = self.dataset()
        if data is not None:
            if self.input_shape is not None and tuple(self.input_shape) != tuple(data.input_shape):
                raise ConfigError(f"problem.input_shape {tuple(self.input_shape)} disagrees with "
                                  f"dataset shape {tuple(data.input_shape)}")
            return data.input_shape, data.num_classes
        return self.input_shape, self.num_classes

    def build_evaluator(self) -> Evaluator:
        opts = dict(self.backend_options)
        workers = int(opts.pop("workers", 0)) or (os.cpu_count() or 1)
        try:
            if self.backend == "surrogate":
                seed = int(opts.pop("seed", self.succession.seed))
                return SurrogateEvaluator(SurrogateParams.from_dict(opts), seed)
            if self.backend == "external":
                command = opts.pop("command")
                timeout = float(opts.pop("timeout", DEFAULT_TIMEOUT))
                if opts:
                    raise ConfigError(f"unknown external evaluator keys: {sorted(opts)}")
                return ExternalEvaluator(command, timeout, workers)
            opts.pop("dataset", None)
            trainer = TrainerConfig.from_dict(opts.pop("trainer", {}))
            cache_dir = opts.pop("teacher_cache", str(Path(self.output) / "teacher"))
            if opts:
                raise ConfigError(f"unknown builtin evaluator keys: {sorted(opts)}")
            return BuiltinEvaluator(
                self.dataset(), trainer, self.succession.total_iterations,
                mimicry=self.succession.mimicry, workers=workers, cache_dir=cache_dir,
            )
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"bad {self.backend} evaluator settings: {e}") from e


def load_config(path: str | Path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    return RunConfig.from_dict(doc)


def save_config(config: RunConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
