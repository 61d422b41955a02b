"""Reference evaluator worker for the line-delimited JSON protocol.

Run as ``python -m eigen_nas.worker --backend surrogate`` (or ``builtin``).
Training state is kept per ``run_id`` so successive segments resume.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys

from .evaluation.datasets import load_dataset
from .evaluation.surrogate import SurrogateParams, surrogate_fitness
from .evaluation.trainer import TrainerConfig, TrainingSession
from .genome import genome_from_record


def _seed_of(run_id: str) -> int:
    return int.from_bytes(hashlib.sha256(run_id.encode()).digest()[:4], "little")


def serve(args, stdin=sys.stdin, stdout=sys.stdout) -> int:
    sessions: dict[str, TrainingSession] = {}
    dataset = trainer = None
    if args.backend == "builtin":
        dataset = load_dataset({"kind": args.dataset})
        trainer = TrainerConfig(batch_size=args.batch_size)
    params = SurrogateParams()
    for line in stdin:
        if not line.strip():
            continue
        req = json.loads(line)
        genome = genome_from_record(req["genome"])
        run_id, start, stop = req["run_id"], int(req["train_from"]), int(req["train_to"])
        if args.backend == "surrogate":
            fitness = surrogate_fitness(genome, stop, params, args.seed)
        else:
            session = sessions.get(run_id)
            if session is None or start == 0:
                session = TrainingSession(genome, dataset, trainer, args.total_iterations, _seed_of(run_id))
                sessions[run_id] = session
            fitness = session.train_to(stop)
        stdout.write(json.dumps({"fitness": fitness, "run_id": run_id}) + "\n")
        stdout.flush()
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--backend", choices=("surrogate", "builtin"), default="surrogate")
    ap.add_argument("--dataset", default="digits")
    ap.add_argument("--batch-size", type=int, default=32)
    ap.add_argument("--total-iterations", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    return serve(ap.parse_args(argv))


if __name__ == "__main__":
    sys.exit(main())
