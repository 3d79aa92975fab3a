# -*- coding: utf-8 -*-
"""Training arms and the experimental frameworks built on them.

Arms:

* ``train_teacher``  supervised cross-entropy training of the teacher,
  keeping one checkpoint per epoch as its training history.
* ``train_student``  the student alone, same loop, no teacher.
* ``distill_kd``     uniform mini-batch distillation with
  ``losses.student_loss``.
* ``distill_slkd``   initial uniform distillation, then curriculum stages
  whose easy-to-hard subsets are rebuilt from a fresh snapshot at every
  stage boundary, then a final full-set phase.

Every arm writes ``final.ckpt``, ``best.ckpt`` (highest test accuracy)
and ``record.csv`` into its output directory and returns a
``TrainResult``. ``compare_arms`` repeats all four arms over several
seeds; ``ablate_snapshot_source`` pairs student- and teacher-snapshot
curricula.
"""

import csv
import io
import logging
import os
from dataclasses import dataclass, field
from functools import partial
from itertools import islice
from typing import Dict, List

import numpy as np
from sklearn.metrics import accuracy_score

from slkd import checkpoint
from slkd.config import run_dir_name
from slkd.curriculum import (active_set_sizes, export_plan, partition_balanced,
                             score_dataset, stage_active_set)
from slkd.data_readers import augment, load_splits, make_batches
from slkd.label_transformers import one_hot
from slkd.losses import (cross_entropy, distillation_objective, slkd_stage_loss_and_grad,
                         softmax_t)
from slkd.nn_core import Model, NonFiniteError, backward, forward, predict_logits
from slkd.reporting import ComparisonTable
from slkd.training_functions import lr_at, optimizer_step
from slkd.utils import atomic_write_text, progress

logger = logging.getLogger(__name__)

RECORD_HEADER = ["epoch", "stage", "active", "iters", "cum_iters", "train_loss", "test_acc", "lr"]
SNAPSHOT_SOURCES = ("student", "teacher")


class TrainingDivergedError(ArithmeticError):
    """Non-finite loss or gradient during training."""


class ScheduleError(ValueError):
    """A stage schedule that cannot run within the epoch budget."""


@dataclass(frozen=True)
class EpochRow:
    epoch: int
    stage: int
    active: int
    iters: int
    cum_iters: int
    train_loss: float
    test_acc: float
    lr: float


@dataclass
class TrainRecord:
    rows: List[EpochRow] = field(default_factory=list)

    def append(self, epoch, stage, active, iters, train_loss, test_acc, lr):
        cum = self.cumulative_iterations + iters
        row = EpochRow(epoch, stage, active, iters, cum, float(train_loss), float(test_acc),
                       float(lr))
        self.rows.append(row)
        return row

    @property
    def cumulative_iterations(self):
        return self.rows[-1].cum_iters if self.rows else 0

    @property
    def final_accuracy(self):
        return self.rows[-1].test_acc if self.rows else float("nan")

    @property
    def best_accuracy(self):
        return max(r.test_acc for r in self.rows) if self.rows else float("nan")

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(RECORD_HEADER)
        for r in self.rows:
            writer.writerow([r.epoch, r.stage, r.active, r.iters, r.cum_iters,
                             repr(r.train_loss), repr(r.test_acc), repr(r.lr)])
        return buf.getvalue()

    def save(self, path):
        atomic_write_text(path, self.to_csv())

    @classmethod
    def from_csv(cls, text):
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header != RECORD_HEADER:
            raise ValueError("expected record header %s, found %s" % (",".join(RECORD_HEADER), header))
        record = cls()
        for row in reader:
            e, s, a, i, c = (int(v) for v in row[:5])
            record.rows.append(EpochRow(e, s, a, i, c, float(row[5]), float(row[6]), float(row[7])))
        return record

    @classmethod
    def load(cls, path):
        with open(path, newline="", encoding="utf-8") as f:
            return cls.from_csv(f.read())


@dataclass(frozen=True)
class EvalResult:
    top1_accuracy: float
    mean_loss: float


@dataclass
class TrainResult:
    arm: str
    checkpoint: str
    checkpoint_id: str
    best_checkpoint: str
    record: TrainRecord
    history: Dict[int, str] = field(default_factory=dict)
    plans: list = field(default_factory=list)
    plan_paths: List[str] = field(default_factory=list)
    snapshots: List[str] = field(default_factory=list)


def evaluate(model, data, batch_size=256):
    """Top-1 accuracy and mean cross-entropy on un-augmented data."""
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    logits = predict_logits(model, data.images, batch_size)
    loss = cross_entropy(softmax_t(logits, 1.0), one_hot(data.labels, data.class_count))
    return EvalResult(float(accuracy_score(data.labels, logits.argmax(axis=1))), loss)


def _epoch_seed(seed, epoch):
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


def _ce_objective(logits, teacher_logits, labels):
    return distillation_objective(logits, None, labels, 0.0, 1.0)


class _Session(object):
    """One model being trained: optimizer state, epoch counter, record
    and the best-so-far checkpoint, carried across all phases of a run."""

    def __init__(self, arm, model, config, data, lr_schedule, out_dir, show_progress=False):
        self.arm, self.model, self.config, self.data = arm, model, config, data
        self.lr_schedule = lr_schedule
        self.out_dir = out_dir
        self.show_progress = show_progress
        self.policy = config.augment.policy(config.seed)
        self.state = None
        self.epoch = 0
        self.record = TrainRecord()
        self.best_accuracy = -1.0
        self.best_path = os.path.join(out_dir, "best.ckpt")
        os.makedirs(out_dir, exist_ok=True)

    def run_epoch(self, active, stage, objective, teacher=None, max_batches=None):
        """One pass over ``active``, or its first ``max_batches`` batches."""
        self.epoch += 1
        epoch, config, train = self.epoch, self.config, self.data.train
        lr = lr_at(config.optimizer.lr, self.lr_schedule, epoch)
        plan = make_batches(active, config.batch_size, _epoch_seed(config.seed, epoch))
        n_batches = len(plan) if max_batches is None else min(len(plan), max_batches)
        total, seen = 0.0, 0
        batches = progress(islice(plan.batches(), n_batches), self.show_progress,
                           total=n_batches, desc="%s epoch %d" % (self.arm, epoch))
        for b, idx in enumerate(batches):
            x = train.images[idx]
            if not self.policy.is_identity:
                x = augment(x, self.policy, epoch, b)
            labels = one_hot(train.labels[idx], train.class_count)
            try:
                logits = forward(self.model, x)
                teacher_logits = (forward(teacher, x, keep_cache=False)
                                  if teacher is not None else None)
                breakdown, grad = objective(logits, teacher_logits, labels)
                if not np.isfinite(breakdown.total):
                    raise NonFiniteError("non-finite loss")
                grads = backward(self.model, x, grad)
                self.model, self.state = optimizer_step(self.model, grads, lr, config.optimizer,
                                                        self.state)
            except NonFiniteError as e:
                raise TrainingDivergedError("%s: epoch %d, batch %d: %s" % (self.arm, epoch, b, e))
            total += breakdown.total * len(idx)
            seen += len(idx)
        self.model.cache = None
        try:
            acc = evaluate(self.model, self.data.test).top1_accuracy
        except NonFiniteError as e:
            raise TrainingDivergedError("%s: epoch %d, evaluation: %s" % (self.arm, epoch, e))
        row = self.record.append(epoch, stage, len(active), n_batches, total / seen, acc, lr)
        if acc > self.best_accuracy:
            self.best_accuracy = acc
            self.save(self.best_path, {"epoch": epoch, "test_acc": acc})
        logger.info("%s epoch %d stage %d: active %d, iters %d, loss %.4f, test acc %.4f, lr %g",
                    self.arm, epoch, stage, row.active, row.iters, row.train_loss, acc, lr)
        return row

    def save(self, path, meta=None):
        meta = dict(meta or {}, arm=self.arm, seed=self.config.seed)
        return checkpoint.save(self.model, self.state, meta, path)

    def finish(self, **extra):
        path = os.path.join(self.out_dir, "final.ckpt")
        ckpt_id = self.save(path, {"epoch": self.epoch})
        if self.best_accuracy < 0:
            self.save(self.best_path, {"epoch": self.epoch})
        self.record.save(os.path.join(self.out_dir, "record.csv"))
        return TrainResult(self.arm, path, ckpt_id, self.best_path, self.record, **extra)


def _check_data(data, model):
    if len(data.train) == 0:
        raise ValueError("training split is empty")
    if model.num_classes != data.train.class_count:
        raise ValueError("%s predicts %d classes, dataset has %d"
                         % (model.role, model.num_classes, data.train.class_count))


def _load_teacher(teacher_ckpt, data):
    teacher, _, _ = checkpoint.load(teacher_ckpt)
    _check_data(data, teacher)
    return teacher


def train_teacher(config, data, out_dir, show_progress=False):
    """Train the teacher with cross-entropy for ``config.teacher_epochs``.

    The initialization and every epoch's weights are saved under
    ``history/`` (used as snapshots by the teacher-source ablation).

    Returns
    -------
    TrainResult
        ``history`` maps epoch (0 = initialization) to checkpoint path.
    """
    model = Model(config.teacher_spec, role="teacher")
    _check_data(data, model)
    session = _Session("teacher", model, config, data, config.teacher_lr_schedule, out_dir,
                       show_progress)
    full = np.arange(len(data.train))
    history = {}

    def keep(epoch):
        path = os.path.join(out_dir, "history", "epoch_%04d.ckpt" % epoch)
        session.save(path, {"epoch": epoch})
        history[epoch] = path

    keep(0)
    for _ in range(config.teacher_epochs):
        session.run_epoch(full, 0, _ce_objective)
        keep(session.epoch)
    return session.finish(history=history)


def train_student(config, data, out_dir, show_progress=False):
    """The student trained alone with cross-entropy for ``epochs_total``."""
    model = Model(config.student_spec, role="student")
    _check_data(data, model)
    session = _Session("student", model, config, data, config.lr_schedule, out_dir, show_progress)
    full = np.arange(len(data.train))
    for _ in range(config.epochs_total):
        session.run_epoch(full, 0, _ce_objective)
    return session.finish()


def _kd_objective(config):
    return partial(distillation_objective, lam=config.kd.lam, tau=config.kd.tau,
                   mode=config.kd.mode)


def _stage_objective(config):
    return partial(slkd_stage_loss_and_grad, lam=config.kd.lam, tau=config.kd.tau)


def distill_kd(teacher_ckpt, config, data, out_dir, show_progress=False, max_iterations=None):
    """Uniform mini-batch distillation for ``epochs_total`` epochs.

    Teacher logits are recomputed for every (augmented) batch; the
    teacher is never updated.

    With ``max_iterations`` the arm is ``kd-matched``: training stops
    once that many iterations have run, part-way through an epoch if
    need be, and never runs past ``epochs_total``. Pass an SLKD run's
    ``cumulative_iterations`` to compare the two at equal cost.
    """
    if max_iterations is not None and max_iterations < 1:
        raise ValueError("max_iterations must be >= 1, got %r" % (max_iterations,))
    teacher = _load_teacher(teacher_ckpt, data)
    model = Model(config.student_spec, role="student")
    _check_data(data, model)
    arm = "kd" if max_iterations is None else "kd-matched"
    session = _Session(arm, model, config, data, config.lr_schedule, out_dir, show_progress)
    full = np.arange(len(data.train))
    objective = _kd_objective(config)
    for _ in range(config.epochs_total):
        budget = None
        if max_iterations is not None:
            budget = max_iterations - session.record.cumulative_iterations
            if budget <= 0:
                break
        session.run_epoch(full, 0, objective, teacher, max_batches=budget)
    if max_iterations is not None and session.record.cumulative_iterations < max_iterations:
        logger.warning("%s stopped at epochs_total=%d after %d of %d iterations", arm,
                       config.epochs_total, session.record.cumulative_iterations, max_iterations)
    return session.finish()


def check_schedule(config):
    """Reject a stage schedule that does not fit ``epochs_total``."""
    s = config.slkd
    if s.n_stages < 1 or len(s.stage_epochs) != s.n_stages:
        raise ScheduleError("stage schedule has %d stage lengths for n_stages=%d"
                            % (len(s.stage_epochs), s.n_stages))
    if s.initial_kd_epochs < 1 or min(s.stage_epochs) < 1 or s.final_epochs < 0:
        raise ScheduleError("initial and stage epoch counts must be >= 1, final >= 0")
    if s.total_epochs > config.epochs_total:
        raise ScheduleError("schedule needs %d epochs (%d + %s + %d), epochs_total is %d"
                            % (s.total_epochs, s.initial_kd_epochs, list(s.stage_epochs),
                               s.final_epochs, config.epochs_total))


def teacher_snapshot_epochs(config):
    """Teacher-history epoch used as the snapshot for each stage: the
    configured list, else the epoch completed just before each stage
    boundary (capped at the teacher's budget)."""
    if config.slkd.teacher_snapshot_epochs is not None:
        return list(config.slkd.teacher_snapshot_epochs)
    return [min(start - 1, config.teacher_epochs) for start in config.slkd.boundary_epochs()]


def distill_slkd(teacher_ckpt, config, data, out_dir, snapshot_source="student",
                 teacher_history=None, show_progress=False):
    """Distillation with a snapshot-driven easy-to-hard curriculum.

    1. ``initial_kd_epochs`` of uniform distillation (``student_loss``).
    2. For each stage i = 1..N: snapshot the student (or take the
       teacher-history checkpoint, for ``snapshot_source="teacher"``),
       score the whole training set with it, rebuild the balanced
       partition and train ``stage_epochs[i-1]`` epochs on
       X_1 | ... | X_i with ``slkd_stage_loss``.
    3. Full-set epochs until ``epochs_total`` (at least ``final_epochs``).

    Optimizer state and the LR schedule run on across phase boundaries.
    Plans go to ``plans/stage_<i>.csv``, snapshots to ``snapshots/``.

    Raises
    ------
    ScheduleError
        Before any training, if the schedule exceeds ``epochs_total``.
    ValueError
        If teacher snapshots are requested but missing from the history.
    """
    check_schedule(config)
    if snapshot_source not in SNAPSHOT_SOURCES:
        raise ValueError("snapshot_source must be one of %s" % ", ".join(SNAPSHOT_SOURCES))
    schedule = config.slkd
    if snapshot_source == "teacher":
        missing = [e for e in teacher_snapshot_epochs(config) if e not in (teacher_history or {})]
        if missing:
            raise ValueError("teacher snapshot history lacks epochs %s" % missing)
    teacher = _load_teacher(teacher_ckpt, data)
    model = Model(config.student_spec, role="student")
    _check_data(data, model)
    arm = "slkd" if snapshot_source == "student" else "slkd-teacher-snapshots"
    session = _Session(arm, model, config, data, config.lr_schedule, out_dir, show_progress)
    train = data.train
    full = np.arange(len(train))

    kd_objective = _kd_objective(config)
    for _ in range(schedule.initial_kd_epochs):
        session.run_epoch(full, 0, kd_objective, teacher)

    stage_objective = _stage_objective(config)
    plans, plan_paths, snapshots = [], [], []
    t_epochs = teacher_snapshot_epochs(config)
    for i, length in enumerate(schedule.stage_epochs, start=1):
        if snapshot_source == "student":
            snap_path = os.path.join(out_dir, "snapshots", "stage_%d.ckpt" % i)
            snapshot = session.model.copy(role="snapshot")
            snap_id = checkpoint.save(snapshot, None, {"epoch": session.epoch, "stage": i,
                                                       "source": "student"}, snap_path)
        else:
            snap_path = teacher_history[t_epochs[i - 1]]
            snapshot, _, _ = checkpoint.load(snap_path)
            snap_id = checkpoint.checkpoint_id(snap_path)
        plan = partition_balanced(score_dataset(snapshot, train, schedule.confidence),
                                  schedule.n_stages, snap_id, train.class_count)
        plan_path = os.path.join(out_dir, "plans", "stage_%d.csv" % i)
        export_plan(plan, plan_path)
        plans.append(plan)
        plan_paths.append(plan_path)
        snapshots.append(snap_path)
        active = stage_active_set(plan, i)
        logger.info("%s stage %d/%d from snapshot %s (epoch %d): plan %s, %d of %d samples active",
                    arm, i, schedule.n_stages, snap_id, session.epoch, plan.plan_id,
                    len(active), len(train))
        for _ in range(length):
            session.run_epoch(active, i, stage_objective, teacher)

    final_epochs = config.epochs_total - schedule.initial_kd_epochs - sum(schedule.stage_epochs)
    if final_epochs > schedule.final_epochs:
        logger.info("%s final phase extended to %d epochs to fill epochs_total=%d",
                    arm, final_epochs, config.epochs_total)
    for _ in range(final_epochs):
        session.run_epoch(full, schedule.n_stages + 1, stage_objective, teacher)
    return session.finish(plans=plans, plan_paths=plan_paths, snapshots=snapshots)


def planned_iterations(config, per_class_counts):
    """Closed-form SLKD iteration total: sum over epochs of
    ceil(|active set| / batch_size), using the balanced stage sizes
    implied by the class counts."""
    s, b = config.slkd, config.batch_size
    n = int(sum(per_class_counts))
    ceil = lambda size: -(-size // b)
    total = s.initial_kd_epochs * ceil(n)
    for length, size in zip(s.stage_epochs, active_set_sizes(per_class_counts, s.n_stages)):
        total += length * ceil(size)
    final = config.epochs_total - s.initial_kd_epochs - sum(s.stage_epochs)
    return total + final * ceil(n)


def uniform_iterations(config, n):
    return config.epochs_total * -(-n // config.batch_size)


@dataclass(frozen=True)
class ArmSummary:
    arm: str
    final_accuracy: float
    best_accuracy: float
    cumulative_iterations: int


@dataclass
class SnapshotComparison:
    """Paired Snapshot-S (student history) / Snapshot-T (teacher history)
    results of one seed."""

    seed: int
    rows: List[ArmSummary]

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["seed", "arm", "final_acc", "best_acc", "cum_iters"])
        for r in self.rows:
            writer.writerow([self.seed, r.arm, repr(r.final_accuracy), repr(r.best_accuracy),
                             r.cumulative_iterations])
        return buf.getvalue()


def _summary(name, result):
    return ArmSummary(name, result.record.final_accuracy, result.record.best_accuracy,
                      result.record.cumulative_iterations)


def ablate_snapshot_source(teacher_result, config, data, out_dir, show_progress=False):
    """Run ``distill_slkd`` twice, with curricula from student snapshots
    ("Snapshot-S") and from the teacher's training history ("Snapshot-T").

    Returns
    -------
    SnapshotComparison
        Also written to ``<out_dir>/ablation.csv``.
    """
    if not teacher_result.history:
        raise ValueError("teacher result has no snapshot history")
    student_arm = distill_slkd(teacher_result.checkpoint, config, data,
                               os.path.join(out_dir, "snapshot-s"), "student",
                               show_progress=show_progress)
    teacher_arm = distill_slkd(teacher_result.checkpoint, config, data,
                               os.path.join(out_dir, "snapshot-t"), "teacher",
                               teacher_history=teacher_result.history,
                               show_progress=show_progress)
    comparison = SnapshotComparison(config.seed, [_summary("Snapshot-S", student_arm),
                                                  _summary("Snapshot-T", teacher_arm)])
    atomic_write_text(os.path.join(out_dir, "ablation.csv"), comparison.to_csv())
    for row in comparison.rows:
        logger.info("%s: final acc %.4f, best acc %.4f, %d iterations", row.arm,
                    row.final_accuracy, row.best_accuracy, row.cumulative_iterations)
    return comparison


def compare_arms(config, seeds, out_dir, data_factory=None, show_progress=False,
                 matched_kd=False):
    """All four arms (teacher, student, kd, slkd) for every seed.

    Parameters
    ----------
    config : config.RunConfig
    seeds : list of int
    out_dir : str
        Run root; seed k writes ``<hash>-seed<k>/<arm>``, the layout
        ``reporting.collect_runs`` reads.
    data_factory : callable (seed -> DataSplits), optional
        Defaults to ``load_splits(config.data, seed)``.
    matched_kd : bool
        Also run ``kd-matched``, uniform KD stopped at the SLKD arm's
        iteration count.

    Returns
    -------
    reporting.ComparisonTable
    """
    table = ComparisonTable()
    for k, seed in enumerate(seeds, start=1):
        cfg = config.with_seed(seed)
        data = data_factory(seed) if data_factory else load_splits(cfg.data, seed)
        base = os.path.join(out_dir, run_dir_name(cfg))
        logger.info("Starting seed %d (%d/%d)", seed, k, len(seeds))
        teacher = train_teacher(cfg, data, os.path.join(base, "teacher"), show_progress)
        results = [teacher,
                   train_student(cfg, data, os.path.join(base, "student"), show_progress),
                   distill_kd(teacher.checkpoint, cfg, data, os.path.join(base, "kd"),
                              show_progress),
                   distill_slkd(teacher.checkpoint, cfg, data, os.path.join(base, "slkd"),
                                show_progress=show_progress)]
        if matched_kd:
            results.append(distill_kd(teacher.checkpoint, cfg, data,
                                      os.path.join(base, "kd-matched"), show_progress,
                                      max_iterations=results[-1].record.cumulative_iterations))
        for result in results:
            table.add(result.arm, seed, result.record.final_accuracy,
                      result.record.cumulative_iterations, result.record.best_accuracy)
    logger.info("Comparison over seeds %s:\n%s", list(seeds), table.format())
    return table


def load_teacher_result(teacher_dir):
    """Rebuild the ``TrainResult`` of a finished ``train_teacher`` run
    from its directory (final checkpoint, record and epoch history)."""
    path = os.path.join(teacher_dir, "final.ckpt")
    if not os.path.exists(path):
        raise ValueError("no finished teacher run in %s" % teacher_dir)
    return TrainResult("teacher", path, checkpoint.checkpoint_id(path),
                       os.path.join(teacher_dir, "best.ckpt"),
                       TrainRecord.load(os.path.join(teacher_dir, "record.csv")),
                       history=teacher_history(teacher_dir))


def teacher_history(teacher_dir):
    """Epoch -> checkpoint path for the ``history/epoch_<k>.ckpt`` files
    of a teacher run (empty when there are none)."""
    history_dir = os.path.join(teacher_dir, "history")
    history = {}
    if os.path.isdir(history_dir):
        for name in sorted(os.listdir(history_dir)):
            if name.startswith("epoch_") and name.endswith(".ckpt"):
                history[int(name[len("epoch_"):-len(".ckpt")])] = os.path.join(history_dir, name)
    return history
