# -*- coding: utf-8 -*-
#!/usr/bin/python
"""Command-line entry point: ``python -m slkd <command> [options]``.

Each command resolves a config (``--preset`` and/or ``--config``, with
``--seed`` overriding), validates it before touching the disk, and writes
its artifacts under ``<run root>/<config hash[:12]>-seed<seed>/``. The run
root is ``--out``, else ``$SLKD_RUN_ROOT``, else ``runs/``.

Exit status: 0 on success, 2 on an invalid config or arguments, 1 when a
run fails (a ``FAILED`` file in the run directory holds the error).
"""

import argparse
import datetime
import glob
import logging
import os
import sys

import numpy as np
import yaml

from slkd import checkpoint
from slkd import experiment_frameworks as ef
from slkd.config import PRESETS, ConfigError, dump_config, load_config, run_dir_name
from slkd.curriculum import (CONFIDENCE_KINDS, export_plan, export_scores, import_plan,
                             import_scores, lesson_report, partition_balanced, score_dataset)
from slkd.data_readers import load_splits
from slkd.nn_core import predict_logits
from slkd.reporting import collect_runs, emit_plots, find_run_dirs, verbose_overview
from slkd.utils import atomic_write_text

logger = logging.getLogger("slkd")

RUN_ROOT_ENV = "SLKD_RUN_ROOT"
DEFAULT_RUN_ROOT = "runs"
FAILED_MARKER = "FAILED"
NEEDS_CONFIG = ("train-teacher", "distill-kd", "distill-slkd", "score", "partition", "eval",
                "ablate-snapshots", "compare")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run config (overlays --preset)")
    common.add_argument("--preset", choices=sorted(PRESETS), help="named base config")
    common.add_argument("--seed", type=int, help="overrides the config's seed")
    common.add_argument("--out", help="run root (default: $%s or %s/)"
                        % (RUN_ROOT_ENV, DEFAULT_RUN_ROOT))
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    common.add_argument("--no-progress", action="store_true", help="hide progress bars")

    parser = argparse.ArgumentParser(prog="slkd", description="Snapshot-curriculum "
                                     "knowledge distillation experiments.")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    sub.add_parser("train-teacher", parents=[common], help="train the teacher with CE")

    p = sub.add_parser("distill-kd", parents=[common], help="uniform KD baseline")
    p.add_argument("--teacher", help="teacher checkpoint (default: <run>/teacher/final.ckpt)")
    p.add_argument("--no-teacher", action="store_true",
                   help="train the student alone with CE instead")
    budget = p.add_mutually_exclusive_group()
    budget.add_argument("--iterations", type=int,
                        help="stop after this many iterations (arm kd-matched)")
    budget.add_argument("--match-slkd", action="store_true",
                        help="stop at the iteration count of <run>/slkd/record.csv")

    p = sub.add_parser("distill-slkd", parents=[common], help="snapshot-curriculum KD")
    p.add_argument("--teacher", help="teacher checkpoint (default: <run>/teacher/final.ckpt)")
    p.add_argument("--snapshot-source", choices=ef.SNAPSHOT_SOURCES, default="student")

    p = sub.add_parser("score", parents=[common], help="score the training set")
    p.add_argument("--checkpoint", required=True, help="snapshot checkpoint")
    p.add_argument("--confidence", choices=CONFIDENCE_KINDS, help="default: config value")

    p = sub.add_parser("partition", parents=[common], help="balanced easy-to-hard stages")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--checkpoint", help="snapshot checkpoint to score with")
    source.add_argument("--scores", help="scores CSV written by the score command")
    p.add_argument("--stages", type=int, help="default: slkd.n_stages")

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("test", "train"), default="test")
    p.add_argument("--plan", help="plan CSV: also report accuracy and loss per stage")

    p = sub.add_parser("ablate-snapshots", parents=[common],
                       help="SLKD with student vs. teacher snapshots")
    p.add_argument("--teacher-dir", help="finished teacher run (default: <run>/teacher, "
                   "trained first if missing)")

    p = sub.add_parser("compare", parents=[common], help="all arms over several seeds")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--match-iterations", action="store_true",
                   help="also run KD stopped at each seed's SLKD iteration count")

    p = sub.add_parser("report", parents=[common], help="median table over finished runs")
    p.add_argument("--all", action="store_true",
                   help="include runs of every config, not only the given one")

    p = sub.add_parser("plot", parents=[common], help="SVG loss/accuracy curves")
    p.add_argument("--record", action="append", default=[], metavar="NAME=CSV",
                   help="record to plot (repeatable); default: every arm of the run")
    return parser


def _run_root(args):
    return args.out or os.environ.get(RUN_ROOT_ENV) or DEFAULT_RUN_ROOT


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _default_teacher(args, run_dir):
    path = args.teacher or os.path.join(run_dir, "teacher", "final.ckpt")
    if not os.path.exists(path):
        raise ConfigError("--teacher", "no teacher checkpoint at %s (run train-teacher first)"
                          % path)
    return path


def _check_arguments(args, config, run_dir):
    """Argument checks that must pass before anything is written."""
    if args.command in ("distill-kd", "distill-slkd") and not getattr(args, "no_teacher", False):
        _default_teacher(args, run_dir)
    if args.command == "distill-slkd":
        ef.check_schedule(config)
    for name in ("checkpoint", "scores", "plan"):
        path = getattr(args, name, None)
        if path and not os.path.exists(path):
            raise ConfigError("--" + name, "no such file %s" % path)
    if args.command == "partition" and args.stages is not None and args.stages < 1:
        raise ConfigError("--stages", "must be >= 1")
    for item in getattr(args, "record", []):
        if "=" not in item:
            raise ConfigError("--record", "expected NAME=CSV, got %r" % item)
    if args.command == "distill-kd":
        _iteration_budget(args, run_dir)


def _iteration_budget(args, run_dir):
    """The distill-kd stopping point: --iterations, the SLKD record's
    total for --match-slkd, else None."""
    if args.iterations is None and not args.match_slkd:
        return None
    if args.no_teacher:
        raise ConfigError("--no-teacher", "cannot be combined with an iteration budget")
    if args.iterations is not None:
        if args.iterations < 1:
            raise ConfigError("--iterations", "must be >= 1")
        return args.iterations
    path = os.path.join(run_dir, "slkd", "record.csv")
    if not os.path.exists(path):
        raise ConfigError("--match-slkd", "no SLKD record at %s (run distill-slkd first)" % path)
    return ef.TrainRecord.load(path).cumulative_iterations


def cmd_train_teacher(args, config, run_dir):
    result = ef.train_teacher(config, load_splits(config.data, config.seed),
                              os.path.join(run_dir, "teacher"), not args.no_progress)
    return _log_result(result, run_dir)


def cmd_distill_kd(args, config, run_dir):
    data = load_splits(config.data, config.seed)
    if args.no_teacher:
        result = ef.train_student(config, data, os.path.join(run_dir, "student"),
                                  not args.no_progress)
    else:
        budget = _iteration_budget(args, run_dir)
        out = os.path.join(run_dir, "kd" if budget is None else "kd-matched")
        result = ef.distill_kd(_default_teacher(args, run_dir), config, data, out,
                               not args.no_progress, max_iterations=budget)
    return _log_result(result, run_dir)


def cmd_distill_slkd(args, config, run_dir):
    teacher = _default_teacher(args, run_dir)
    out = os.path.join(run_dir, "slkd" if args.snapshot_source == "student" else "slkd-t")
    result = ef.distill_slkd(teacher, config, load_splits(config.data, config.seed), out,
                             args.snapshot_source, ef.teacher_history(os.path.dirname(teacher)),
                             not args.no_progress)
    for path, plan in zip(result.plan_paths, result.plans):
        logger.info("Plan %s (%s): stage sizes %s", path, plan.plan_id,
                    [len(s) for s in plan.stages])
    return _log_result(result, run_dir)


def cmd_score(args, config, run_dir):
    snapshot, _, _ = checkpoint.load(args.checkpoint)
    data = load_splits(config.data, config.seed)
    scores = score_dataset(snapshot, data.train, args.confidence or config.slkd.confidence)
    path = os.path.join(run_dir, "scores", "%s.csv" % checkpoint.checkpoint_id(args.checkpoint))
    export_scores(scores, path)
    difficulty = np.array([s.difficulty for s in scores])
    logger.info("Scored %d samples: mean difficulty %.4f, median %.4f", len(scores),
                difficulty.mean(), np.median(difficulty))
    print(path)
    return {"scores": _rel(path, run_dir), "snapshot": checkpoint.checkpoint_id(args.checkpoint)}


def cmd_partition(args, config, run_dir):
    n_stages = args.stages or config.slkd.n_stages
    if args.scores:
        scores = import_scores(args.scores)
        source = os.path.splitext(os.path.basename(args.scores))[0]
        class_count = None
    else:
        snapshot, _, _ = checkpoint.load(args.checkpoint)
        train = load_splits(config.data, config.seed).train
        scores = score_dataset(snapshot, train, config.slkd.confidence)
        source = checkpoint.checkpoint_id(args.checkpoint)
        class_count = train.class_count
    plan = partition_balanced(scores, n_stages, source, class_count)
    path = os.path.join(run_dir, "plans", "%s-n%d.csv" % (source, n_stages))
    export_plan(plan, path)
    for stage, members in enumerate(plan.stages, start=1):
        logger.info("Stage %d: %d samples", stage, len(members))
    print(path)
    return {"plans": {_rel(path, run_dir): plan.plan_id}, "snapshot": source}


def cmd_eval(args, config, run_dir):
    model, _, meta = checkpoint.load(args.checkpoint)
    data = getattr(load_splits(config.data, config.seed), args.split)
    result = ef.evaluate(model, data)
    yhat = predict_logits(model, data.images).argmax(axis=1)
    logger.info("%s on %s (%d samples)\n%s", args.checkpoint, args.split, len(data),
                verbose_overview(data.labels, yhat, data.class_count))
    if args.plan:
        plan = import_plan(args.plan, class_count=data.class_count)
        for lesson in lesson_report(model, plan, data):
            print("stage %d: size %d, accuracy %.4f, mean loss %.4f"
                  % (lesson.stage, lesson.size, lesson.accuracy, lesson.mean_loss))
    print("accuracy %.4f mean_loss %.4f" % (result.top1_accuracy, result.mean_loss))
    return {"checkpoints": {args.checkpoint: checkpoint.checkpoint_id(args.checkpoint)}}


def cmd_ablate_snapshots(args, config, run_dir):
    data = load_splits(config.data, config.seed)
    teacher_dir = args.teacher_dir or os.path.join(run_dir, "teacher")
    if os.path.exists(os.path.join(teacher_dir, "final.ckpt")):
        teacher = ef.load_teacher_result(teacher_dir)
    else:
        teacher = ef.train_teacher(config, data, teacher_dir, not args.no_progress)
    comparison = ef.ablate_snapshot_source(teacher, config, data,
                                           os.path.join(run_dir, "ablation"),
                                           not args.no_progress)
    sys.stdout.write(comparison.to_csv())
    return {"ablation": _rel(os.path.join(run_dir, "ablation", "ablation.csv"), run_dir),
            "teacher": teacher.checkpoint_id}


def cmd_compare(args, config, run_dir):
    root = _run_root(args)
    table = ef.compare_arms(config, args.seeds, root, show_progress=not args.no_progress,
                            matched_kd=args.match_iterations)
    path = os.path.join(root, "comparison-%s.csv" % config.config_hash()[:12])
    table.save(path)
    print(table.format())
    return {"comparison": path, "seeds": list(args.seeds)}


def cmd_report(args, config):
    root = _run_root(args)
    config_hash = None if args.all or config is None else config.config_hash()
    table = collect_runs(find_run_dirs(root, config_hash))
    if not len(table):
        raise ValueError("no finished runs under %s" % root)
    path = os.path.join(root, "report%s.csv" % ("-" + config_hash[:12] if config_hash else ""))
    table.save(path)
    logger.info("Wrote %s", path)
    print(table.format())


def cmd_plot(args, config):
    if args.record:
        records = []
        for item in args.record:
            name, path = item.split("=", 1)
            records.append((name, ef.TrainRecord.load(path)))
        out = os.path.join(_run_root(args), "plots")
    else:
        if config is None:
            raise ConfigError("--record", "give --record NAME=CSV or a config to plot")
        run_dir = os.path.join(_run_root(args), run_dir_name(config))
        records = [(arm, ef.TrainRecord.load(path)) for arm, path in
                   ((os.path.basename(os.path.dirname(p)), p)
                    for p in sorted(glob.glob(os.path.join(run_dir, "*", "record.csv"))))]
        out = os.path.join(run_dir, "plots")
    for path in emit_plots(records, out):
        print(path)


COMMANDS = {
    "train-teacher": cmd_train_teacher,
    "distill-kd": cmd_distill_kd,
    "distill-slkd": cmd_distill_slkd,
    "score": cmd_score,
    "partition": cmd_partition,
    "eval": cmd_eval,
    "ablate-snapshots": cmd_ablate_snapshots,
    "compare": cmd_compare,
}


def _rel(path, run_dir):
    return os.path.relpath(path, run_dir)


def _log_result(result, run_dir):
    """Log and print a finished arm; returns the ids it produced."""
    record = result.record
    logger.info("%s done: final acc %.4f, best acc %.4f, %d iterations, checkpoint %s (%s)",
                result.arm, record.final_accuracy, record.best_accuracy,
                record.cumulative_iterations, result.checkpoint, result.checkpoint_id)
    print(result.checkpoint)
    produced = {"arm": result.arm, "cumulative_iterations": record.cumulative_iterations,
                "checkpoints": {
                    _rel(result.checkpoint, run_dir): result.checkpoint_id,
                    _rel(result.best_checkpoint, run_dir):
                        checkpoint.checkpoint_id(result.best_checkpoint)}}
    if result.plans:
        produced["plans"] = {_rel(path, run_dir): plan.plan_id
                             for path, plan in zip(result.plan_paths, result.plans)}
        produced["snapshots"] = [plan.source_snapshot for plan in result.plans]
    return produced


def _write_run_meta(run_dir, command, config, started, status, error=None, produced=None):
    """``meta/<command>.yaml``: the resolved config, the ids of what the
    command wrote, timestamps and status."""
    meta = {"command": command, "seed": config.seed, "config_hash": config.config_hash(),
            "config": config.to_dict(), "started": started, "finished": _now(),
            "status": status}
    meta.update(produced or {})
    if error is not None:
        meta["error"] = error
    atomic_write_text(os.path.join(run_dir, "meta", "%s.yaml" % command),
                      yaml.safe_dump(meta, sort_keys=True))


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s - %(levelname)s - %(message)s")
    config = None
    try:
        if args.command in NEEDS_CONFIG or args.config or args.preset:
            config = load_config(args.config, args.preset, args.seed)
        run_dir = os.path.join(_run_root(args), run_dir_name(config)) if config else None
        _check_arguments(args, config, run_dir)
    except (ConfigError, ef.ScheduleError) as e:
        logger.error("invalid configuration: %s", e)
        return 2

    if args.command == "report":
        try:
            cmd_report(args, config)
        except ValueError as e:
            logger.error("%s", e)
            return 1
        return 0
    if args.command == "plot":
        try:
            cmd_plot(args, config)
        except ConfigError as e:
            logger.error("invalid configuration: %s", e)
            return 2
        except (OSError, ValueError) as e:
            logger.error("%s", e)
            return 1
        return 0

    os.makedirs(run_dir, exist_ok=True)
    atomic_write_text(os.path.join(run_dir, "config.yaml"), dump_config(config))
    started = _now()
    marker = os.path.join(run_dir, FAILED_MARKER)
    logger.info("%s: run directory %s", args.command, run_dir)
    try:
        produced = COMMANDS[args.command](args, config, run_dir)
    except Exception as e:
        logger.exception("%s failed", args.command)
        atomic_write_text(marker, "%s: %s: %s\n" % (args.command, type(e).__name__, e))
        _write_run_meta(run_dir, args.command, config, started, "failed", str(e))
        return 1
    if os.path.exists(marker):
        with open(marker, encoding="utf-8") as f:
            if f.readline().startswith(args.command + ":"):
                os.remove(marker)
    _write_run_meta(run_dir, args.command, config, started, "ok", produced=produced)
    return 0


if __name__ == "__main__":
    sys.exit(main())
