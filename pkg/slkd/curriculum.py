# -*- coding: utf-8 -*-
"""Snapshot-driven, class-balanced easy-to-hard curricula.

A snapshot classifier scores every labeled training sample; the higher
the score, the harder the sample. Within each class the samples are
ordered easiest first (ties by ascending dataset index) and dealt in
consecutive blocks to stages 1..N, so every stage holds the same number
of each class (within one). Stage ``i`` trains on the cumulative union
X_1 | ... | X_i.
"""

import csv
import io
import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from sklearn.metrics import accuracy_score

from slkd.label_transformers import one_hot
from slkd.losses import cross_entropy, softmax_t
from slkd.nn_core import predict_logits
from slkd.utils import atomic_write_text, sha256_hex

logger = logging.getLogger(__name__)

CONFIDENCE_KINDS = ("true_class", "max_prob")
PLAN_HEADER = ["index", "class", "difficulty", "stage"]
SCORE_HEADER = ["index", "class", "difficulty"]


class UnbalanceableClassError(ValueError):
    """A class with fewer members than there are stages."""


@dataclass(frozen=True)
class ScoredSample:
    index: int
    label: int
    difficulty: float


@dataclass(frozen=True)
class LessonResult:
    stage: int
    size: int
    accuracy: float
    mean_loss: float


@dataclass(frozen=True)
class CurriculumPlan:
    """Disjoint, class-balanced stages X_1..X_N (sorted index arrays)
    together with the scores that produced them."""

    stages: Tuple[np.ndarray, ...]
    class_count: int
    source_snapshot: str
    scores: Tuple[ScoredSample, ...]

    @property
    def n_stages(self):
        return len(self.stages)

    def stage_of(self):
        """Map dataset index -> 1-based stage."""
        return {int(i): s + 1 for s, members in enumerate(self.stages) for i in members}

    def to_csv(self):
        stage_of = self.stage_of()
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(PLAN_HEADER)
        for sample in sorted(self.scores, key=lambda s: s.index):
            writer.writerow([sample.index, sample.label, repr(sample.difficulty),
                             stage_of[sample.index]])
        return buf.getvalue()

    @property
    def plan_id(self):
        return sha256_hex(self.to_csv())[:16]


def score_dataset(snapshot, data, confidence="true_class", batch_size=256):
    """Difficulty of every sample under a snapshot classifier.

    difficulty = 1 - p_snapshot(y_i | x_i) on un-augmented inputs
    (``confidence="max_prob"`` uses the largest class probability
    instead of the true-class one).

    Parameters
    ----------
    snapshot : nn_core.Model
    data : data_readers.Dataset
    confidence : str (default: "true_class")
    batch_size : int (default: 256)

    Returns
    -------
    list of ScoredSample
        In dataset index order.
    """
    if confidence not in CONFIDENCE_KINDS:
        raise ValueError("unknown confidence %r (expected one of %s)"
                         % (confidence, ", ".join(CONFIDENCE_KINDS)))
    if snapshot.num_classes != data.class_count:
        raise ValueError("snapshot predicts %d classes, dataset has %d"
                         % (snapshot.num_classes, data.class_count))
    probs = softmax_t(predict_logits(snapshot, data.images, batch_size), 1.0).probs
    if confidence == "true_class":
        conf = probs[np.arange(len(data)), data.labels]
    else:
        conf = probs.max(axis=1)
    difficulty = 1.0 - conf
    return [ScoredSample(i, int(y), float(d))
            for i, (y, d) in enumerate(zip(data.labels, difficulty))]


def partition_balanced(scores, n_stages, source_snapshot="", class_count=None):
    """Deal each class's samples, easiest first, into ``n_stages`` blocks.

    Block sizes within a class differ by at most one, the larger blocks
    going to the earlier stages.

    Raises
    ------
    UnbalanceableClassError
        If a class has fewer samples than ``n_stages``.
    """
    if n_stages < 1:
        raise ValueError("n_stages must be >= 1, got %r" % (n_stages,))
    scores = tuple(scores)
    if not scores:
        raise ValueError("cannot partition an empty scoring")
    seen = set()
    by_class = defaultdict(list)
    for sample in scores:
        if sample.index in seen:
            raise ValueError("index %d scored twice" % sample.index)
        if not np.isfinite(sample.difficulty):
            raise ValueError("index %d has non-finite difficulty" % sample.index)
        seen.add(sample.index)
        by_class[sample.label].append(sample)
    if class_count is None:
        class_count = max(by_class) + 1
    stages = [[] for _ in range(n_stages)]
    for label in sorted(by_class):
        members = sorted(by_class[label], key=lambda s: (s.difficulty, s.index))
        if len(members) < n_stages:
            raise UnbalanceableClassError("unbalanceable class %d: %d samples for %d stages"
                                          % (label, len(members), n_stages))
        for stage, block in enumerate(np.array_split(np.arange(len(members)), n_stages)):
            stages[stage].extend(members[k].index for k in block)
    plan = CurriculumPlan(tuple(np.sort(np.asarray(s, dtype=np.int64)) for s in stages),
                          int(class_count), source_snapshot,
                          tuple(sorted(scores, key=lambda s: s.index)))
    logger.debug("Partitioned %d samples into stages of sizes %s",
                 len(scores), [len(s) for s in plan.stages])
    return plan


def stage_active_set(plan, stage):
    """X_1 | ... | X_stage as a sorted index array."""
    if not 1 <= stage <= plan.n_stages:
        raise ValueError("stage %r out of range 1..%d" % (stage, plan.n_stages))
    return np.sort(np.concatenate(plan.stages[:stage]))


def lesson_report(model, plan, data, batch_size=256):
    """Top-1 accuracy and mean cross-entropy of ``model`` restricted to
    each stage X_i of ``plan``.

    Returns
    -------
    list of LessonResult
    """
    total = sum(len(s) for s in plan.stages)
    if total != len(data) or max(int(s.max()) for s in plan.stages if len(s)) >= len(data):
        raise ValueError("plan covers %d indices, dataset has %d samples" % (total, len(data)))
    logits = predict_logits(model, data.images, batch_size)
    results = []
    for stage, members in enumerate(plan.stages, start=1):
        if not len(members):
            results.append(LessonResult(stage, 0, float("nan"), float("nan")))
            continue
        labels = data.labels[members]
        stage_logits = logits[members]
        loss = cross_entropy(softmax_t(stage_logits, 1.0), one_hot(labels, data.class_count))
        acc = accuracy_score(labels, stage_logits.argmax(axis=1))
        results.append(LessonResult(stage, len(members), float(acc), loss))
    return results


def export_plan(plan, path):
    """Write ``index,class,difficulty,stage`` rows (UTF-8, LF)."""
    atomic_write_text(path, plan.to_csv())
    return plan.plan_id


def import_plan(path, source_snapshot="", class_count=None):
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != PLAN_HEADER:
            raise ValueError("%s: expected header %s, found %s"
                             % (path, ",".join(PLAN_HEADER), header))
        rows = [(int(i), int(c), float(d), int(s)) for i, c, d, s in reader]
    if not rows:
        raise ValueError("%s: plan has no rows" % path)
    n_stages = max(r[3] for r in rows)
    stages = [[] for _ in range(n_stages)]
    seen = set()
    for index, _, _, stage in rows:
        if stage < 1:
            raise ValueError("%s: index %d has stage %d, stages start at 1" % (path, index, stage))
        if index < 0:
            raise ValueError("%s: negative index %d" % (path, index))
        if index in seen:
            raise ValueError("%s: index %d appears twice" % (path, index))
        seen.add(index)
        stages[stage - 1].append(index)
    empty = [i for i, s in enumerate(stages, start=1) if not s]
    if empty:
        raise ValueError("%s: stage %d of %d has no samples" % (path, empty[0], n_stages))
    scores = tuple(sorted((ScoredSample(i, c, d) for i, c, d, _ in rows), key=lambda s: s.index))
    if class_count is None:
        class_count = max(r[1] for r in rows) + 1
    return CurriculumPlan(tuple(np.sort(np.asarray(s, dtype=np.int64)) for s in stages),
                          int(class_count), source_snapshot, scores)


def export_scores(scores, path):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SCORE_HEADER)
    for sample in scores:
        writer.writerow([sample.index, sample.label, repr(sample.difficulty)])
    atomic_write_text(path, buf.getvalue())


def active_set_sizes(per_class_counts, n_stages):
    """|X_1 | ... | X_i| for i = 1..n_stages, determined by the class
    counts alone (balanced dealing fixes every stage's size)."""
    sizes = np.zeros(n_stages, dtype=np.int64)
    for count in per_class_counts:
        if count:
            if count < n_stages:
                raise UnbalanceableClassError("unbalanceable class: %d samples for %d stages"
                                              % (count, n_stages))
            sizes += [len(block) for block in np.array_split(np.arange(count), n_stages)]
    return [int(s) for s in np.cumsum(sizes)]


def import_scores(path):
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != SCORE_HEADER:
            raise ValueError("%s: expected header %s, found %s"
                             % (path, ",".join(SCORE_HEADER), header))
        return [ScoredSample(int(i), int(c), float(d)) for i, c, d in reader]
