"""Evolutionary architecture search: two-phase succession, staged extinction, mimicry and gene duplication."""

from .genome import Genome, TensorShape, count_params, decode_genome, encode_genome, new_seed_genome, validate
from .mutation import MutationOpKind, duplicate_block, mutate_child
from .extinction import ExtinctionConfig, ExtinctionState, run_generation_extinction
from .succession import Individual, SuccessionConfig, run_succession, select_parent

__all__ = [
    "ExtinctionConfig", "ExtinctionState", "Genome", "Individual", "MutationOpKind",
    "SuccessionConfig", "TensorShape", "count_params", "decode_genome", "duplicate_block",
    "encode_genome", "mutate_child", "new_seed_genome", "run_generation_extinction",
    "run_succession", "select_parent", "validate",
]
__version__ = "0.1.0"
