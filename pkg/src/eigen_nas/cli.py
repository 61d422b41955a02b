"""Command line entry point: ``eigen-nas run|resume|report|eval-genome``.

Log verbosity comes from the ``EIGEN_NAS_LOG`` environment variable
(``DEBUG``, ``INFO``, ``WARNING``...; default ``WARNING``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import checkpoint as ck
from .config import RunConfig, load_config, save_config
from .evaluation.base import EvaluatorFailure, Probe
from .genome import GenomeError, InvalidGenome, genome_from_record, genome_to_record
from .lineage import LineageLog
from .report import MissingLog, build_report
from .succession import ConfigError, EmptyPopulation, EvolutionResult, Succession

log = logging.getLogger("eigen_nas")
LOG_ENV = "EIGEN_NAS_LOG"


class RunExists(RuntimeError):
    pass


def summary_of(result: EvolutionResult, config: RunConfig) -> dict:
    best = result.best
    pre = result.pre_duplication_best
    return {
        "best_id": best.id,
        "best_fitness": best.fitness,
        "best_params": best.params,
        "best_phase": best.phase,
        "best_genome": genome_to_record(best.genome),
        "generations": result.generations_run,
        "phase_boundaries": {"primary_end": result.phase_boundaries[0],
                             "secondary_end": result.phase_boundaries[1]},
        "pre_duplication": None if pre is None else
        {"id": pre.id, "fitness": pre.fitness, "params": pre.params},
        "duplication_candidates": [
            {"id": c.id, "fitness": c.fitness, "params": c.params} for c in result.duplication_candidates],
        "best_history": result.best_history,
        "seed": config.succession.seed,
        "backend": config.backend,
    }


def _drive(config: RunConfig, run_dir: Path, driver: Succession, stop_after: int | None) -> int:
    def on_generation(d: Succession):
        offset = d.lineage.flush()
        if d.state.finished:
            result = d.result()
            ck.write_json_atomic(run_dir / ck.SUMMARY, summary_of(result, config), indent=2)
            ck.write_json_atomic(run_dir / ck.BEST, genome_to_record(result.best.genome), indent=2)
        ck.save_checkpoint(run_dir, ck.make_checkpoint(d.state, d.lineage.seq, offset))

    try:
        result = driver.run(stop_after=stop_after, on_generation=on_generation)
    finally:
        driver.evaluator.shutdown()
        driver.lineage.close()
    if result is None:
        print(f"stopped after {driver.state.generation} generations; resume with: eigen-nas resume {run_dir}")
        return 0
    print(json.dumps({k: v for k, v in summary_of(result, config).items() if k != "best_genome"},
                     sort_keys=True))
    return 0


def cmd_run(config_path: str, seed: int | None = None, output: str | None = None,
            stop_after: int | None = None) -> int:
    config = load_config(config_path).with_overrides(seed, output)
    run_dir = Path(config.output)
    if (run_dir / ck.LATEST).exists():
        if config.resume:
            return cmd_resume(str(run_dir), stop_after=stop_after)
        raise RunExists(f"{run_dir} already holds a run; use 'resume' or choose another output")
    input_shape, num_classes = config.problem()
    evaluator = config.build_evaluator()
    run_dir.mkdir(parents=True, exist_ok=True)
    save_config(config, run_dir / ck.CONFIG)
    (run_dir / ck.LINEAGE).unlink(missing_ok=True)
    driver = Succession(config.succession, evaluator, input_shape, num_classes,
                        LineageLog(run_dir / ck.LINEAGE))
    return _drive(config, run_dir, driver, stop_after)


def cmd_resume(run_dir: str, stop_after: int | None = None) -> int:
    run_dir = Path(run_dir)
    state, seq, offset = ck.load_checkpoint(run_dir)
    if state.finished:
        print(f"run in {run_dir} is already complete; nothing to do")
        return 0
    config = load_config(run_dir / ck.CONFIG)
    input_shape, num_classes = config.problem()
    driver = Succession(config.succession, config.build_evaluator(), input_shape, num_classes,
                        LineageLog(run_dir / ck.LINEAGE, seq=seq, offset=offset), state=state)
    return _drive(config, run_dir, driver, stop_after)


def cmd_report(run_dir: str, out: str | None = None) -> int:
    run_dir = Path(run_dir)
    text = build_report(run_dir / ck.LINEAGE)
    target = Path(out) if out else run_dir / "report.csv"
    target.write_text(text, encoding="utf-8")
    print(f"wrote {target}")
    return 0


def load_genome_file(path: str):
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if "best_genome" in doc:  # accept a run summary as well as a bare record
        doc = doc["best_genome"]
    return genome_from_record(doc)


def cmd_eval_genome(genome_path: str, config_path: str, seed: int | None = None) -> int:
    config = load_config(config_path).with_overrides(seed)
    genome = load_genome_file(genome_path)
    input_shape, num_classes = config.problem()
    if tuple(genome.input_shape) != tuple(input_shape) or genome.num_classes != num_classes:
        raise ConfigError(f"genome is built for {tuple(genome.input_shape)}/{genome.num_classes} classes, "
                          f"evaluator expects {tuple(input_shape)}/{num_classes}")
    evaluator = config.build_evaluator()
    # a standalone retrain uses the teacher whenever the config enables mimicry at all
    mimicry = config.succession.mimicry
    phase = mimicry.phases[0] if mimicry is not None and mimicry.phases else "primary"
    try:
        report = evaluator.evaluate(Probe(genome, seed=config.succession.seed, phase=phase),
                                    list(config.succession.extinction.checkpoints))
    finally:
        evaluator.shutdown()
    # wall-clock timings go to the log so the printed report stays reproducible
    log.info("segment wall times: %s", report.wall_time)
    print(json.dumps({"scores": report.to_dict()["scores"], "final": report.final}, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="eigen-nas", description="Evolutionary architecture search with staged extinction.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="start a run from a config file")
    p.add_argument("config")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--output", help="override the output directory")
    p.add_argument("--stop-after", type=int, metavar="N", help="stop once N generations have finished")

    p = sub.add_parser("resume", help="continue a run from its latest checkpoint")
    p.add_argument("run_dir")
    p.add_argument("--stop-after", type=int, metavar="N", help="stop once N generations have finished")

    p = sub.add_parser("report", help="write plot-ready CSV series for a run")
    p.add_argument("run_dir")
    p.add_argument("--out", help="CSV path (default: <run_dir>/report.csv)")

    p = sub.add_parser("eval-genome", help="train and score one genome on the full schedule")
    p.add_argument("genome")
    p.add_argument("config")
    p.add_argument("--seed", type=int, help="override the training seed")
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get(LOG_ENV, "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args.config, args.seed, args.output, args.stop_after)
        if args.command == "resume":
            return cmd_resume(args.run_dir, args.stop_after)
        if args.command == "report":
            return cmd_report(args.run_dir, args.out)
        return cmd_eval_genome(args.genome, args.config, args.seed)
    except InvalidGenome as e:
        print(f"error: invalid genome: {e}", file=sys.stderr)
        for v in e.violations:
            print(f"  {v.code}: {v.message}", file=sys.stderr)
        return 1
    except ConfigError as e:
        print(f"error: config: {e}", file=sys.stderr)
        return 2
    except (ck.MissingCheckpoint, ck.CorruptCheckpoint, MissingLog, RunExists, GenomeError,
            EvaluatorFailure, EmptyPopulation, OSError, ValueError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
