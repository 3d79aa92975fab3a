#!/usr/bin/python
##
## Usage: python -m unittest tests.curriculum_tests
##

import itertools
import os
import tempfile
import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from slkd.curriculum import (ScoredSample, UnbalanceableClassError, active_set_sizes,
                             export_plan, export_scores, import_plan, import_scores,
                             lesson_report, partition_balanced, score_dataset, stage_active_set)
from slkd.data_readers import Dataset
from slkd.nn_core import Model, ModelSpec, dense, flatten


def brute_force_partition(scores, n_stages):
    """Exhaustive search for the balanced partition.

    Within each class the stage sizes are fixed to the balanced sizes
    (larger blocks first). Among all such assignments, pick the one
    maximizing sum(stage * difficulty), so harder samples sit in later
    stages; among those, the one maximizing sum(stage * index), i.e.
    lower indices go to earlier stages on ties.
    """
    stages = [set() for _ in range(n_stages)]
    for label in sorted({s.label for s in scores}):
        members = [s for s in scores if s.label == label]
        sizes = [len(b) for b in np.array_split(np.arange(len(members)), n_stages)]
        best_key, best = None, None
        for assignment in _assignments(members, sizes):
            primary = sum((stage + 1) * s.difficulty for stage, block in enumerate(assignment)
                          for s in block)
            secondary = sum((stage + 1) * s.index for stage, block in enumerate(assignment)
                            for s in block)
            key = (-primary, -secondary)
            if best_key is None or key < best_key:
                best_key, best = key, assignment
        for stage, block in enumerate(best):
            stages[stage].update(s.index for s in block)
    return [sorted(s) for s in stages]


def _assignments(members, sizes):
    if not sizes:
        yield []
        return
    for block in itertools.combinations(members, sizes[0]):
        rest = [m for m in members if m not in block]
        for tail in _assignments(rest, sizes[1:]):
            yield [block] + tail


def random_scores(rng, max_samples=12):
    n_stages = int(rng.integers(1, 4))
    n_classes = int(rng.integers(1, 4))
    while n_classes * n_stages > max_samples:
        n_classes -= 1
    counts = [n_stages] * n_classes
    for _ in range(int(rng.integers(0, max_samples - sum(counts) + 1))):
        counts[int(rng.integers(0, n_classes))] += 1
    labels = rng.permutation(np.repeat(np.arange(n_classes), counts))
    # Multiples of 1/8 keep every cost sum exact and make ties common.
    difficulties = rng.integers(0, 9, size=len(labels)) / 8.0
    scores = [ScoredSample(i, int(y), float(d)) for i, (y, d) in enumerate(zip(labels, difficulties))]
    return scores, n_stages


class PartitionOracleTests(unittest.TestCase):

    def testMatchesBruteForce(self):
        rng = np.random.default_rng(2024)
        for trial in range(120):
            scores, n_stages = random_scores(rng)
            plan = partition_balanced(scores, n_stages)
            expected = brute_force_partition(scores, n_stages)
            self.assertEqual([list(s) for s in plan.stages], expected,
                             "trial %d, %d stages" % (trial, n_stages))

    def testTiesGoByIndex(self):
        scores = [ScoredSample(i, 0, 0.5) for i in range(6)]
        plan = partition_balanced(scores, 3)
        self.assertEqual([list(s) for s in plan.stages], [[0, 1], [2, 3], [4, 5]])

    def testLargerBlocksFirst(self):
        scores = [ScoredSample(i, 0, i / 10.0) for i in range(7)]
        self.assertEqual([len(s) for s in partition_balanced(scores, 3).stages], [3, 2, 2])


class BalanceTests(unittest.TestCase):

    def testBalanceOnLargeRandomData(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            n_classes = int(rng.integers(1, 11))
            n_stages = int(rng.integers(1, 6))
            counts = rng.integers(n_stages, 101, size=n_classes)
            labels = rng.permutation(np.repeat(np.arange(n_classes), counts))[:1000]
            labels = labels[np.isin(labels, np.flatnonzero(np.bincount(labels) >= n_stages))]
            scores = [ScoredSample(i, int(y), float(d))
                      for i, (y, d) in enumerate(zip(labels, rng.random(len(labels))))]
            plan = partition_balanced(scores, n_stages)
            everything = np.concatenate(plan.stages)
            self.assertEqual(len(everything), len(scores))
            assert_array_equal(np.sort(everything), np.arange(len(scores)))
            per_stage = np.array([np.bincount(labels[s], minlength=n_classes)
                                  for s in plan.stages])
            self.assertLessEqual(int((per_stage.max(axis=0) - per_stage.min(axis=0)).max()), 1)
            sizes = [len(s) for s in plan.stages]
            self.assertEqual(np.cumsum(sizes).tolist(),
                             active_set_sizes(np.bincount(labels), n_stages))

    def testEasierStagesFirstWithinClass(self):
        rng = np.random.default_rng(1)
        labels = np.repeat([0, 1], 30)
        scores = [ScoredSample(i, int(y), float(d))
                  for i, (y, d) in enumerate(zip(labels, rng.random(60)))]
        plan = partition_balanced(scores, 3)
        difficulty = np.array([s.difficulty for s in scores])
        for label in (0, 1):
            blocks = [difficulty[s[labels[s] == label]] for s in plan.stages]
            for easy, hard in zip(blocks, blocks[1:]):
                self.assertLessEqual(easy.max(), hard.min())

    def testInputOrderIrrelevant(self):
        rng = np.random.default_rng(3)
        scores = [ScoredSample(i, i % 4, float(d)) for i, d in enumerate(rng.random(40))]
        a = partition_balanced(scores, 3)
        b = partition_balanced([scores[k] for k in rng.permutation(40)], 3)
        for x, y in zip(a.stages, b.stages):
            assert_array_equal(x, y)
        self.assertEqual(a.plan_id, b.plan_id)

    def testUnbalanceableClass(self):
        scores = [ScoredSample(0, 0, 0.1), ScoredSample(1, 0, 0.2), ScoredSample(2, 1, 0.3)]
        with self.assertRaises(UnbalanceableClassError):
            partition_balanced(scores, 2)

    def testDuplicateIndex(self):
        with self.assertRaises(ValueError):
            partition_balanced([ScoredSample(0, 0, 0.1), ScoredSample(0, 0, 0.2)], 1)


class ActiveSetTests(unittest.TestCase):

    def setUp(self):
        self.plan = partition_balanced([ScoredSample(i, i % 2, i / 10.0) for i in range(10)], 3)

    def testCumulative(self):
        self.assertEqual(len(stage_active_set(self.plan, 1)), len(self.plan.stages[0]))
        assert_array_equal(stage_active_set(self.plan, 3), np.arange(10))
        self.assertTrue(set(stage_active_set(self.plan, 1)) <= set(stage_active_set(self.plan, 2)))

    def testOutOfRange(self):
        for stage in (0, 4):
            with self.assertRaises(ValueError):
                stage_active_set(self.plan, stage)

    def testDeskPresetSizes(self):
        self.assertEqual(active_set_sizes([100] * 10, 3), [340, 670, 1000])


def two_feature_snapshot():
    spec = ModelSpec((1, 1, 2), (flatten(), dense(2, 2, scheme="identity")))
    return Model(spec, role="snapshot")


class ScoringTests(unittest.TestCase):

    def setUp(self):
        images = np.array([[2.0, 0.0], [2.0, 0.0], [0.0, 0.0]], dtype=np.float32)
        self.data = Dataset(images.reshape(3, 1, 1, 2), [0, 1, 1], 2)
        self.sigmoid2 = 1.0 / (1.0 + np.exp(-2.0))

    def testTrueClassDifficulty(self):
        scores = score_dataset(two_feature_snapshot(), self.data)
        assert_allclose([s.difficulty for s in scores],
                        [1 - self.sigmoid2, self.sigmoid2, 0.5], rtol=1e-6)
        self.assertEqual([s.index for s in scores], [0, 1, 2])
        self.assertEqual([s.label for s in scores], [0, 1, 1])

    def testMaxProbDifficulty(self):
        scores = score_dataset(two_feature_snapshot(), self.data, confidence="max_prob")
        assert_allclose([s.difficulty for s in scores],
                        [1 - self.sigmoid2, 1 - self.sigmoid2, 0.5], rtol=1e-6)

    def testClassCountMismatch(self):
        data = Dataset(np.zeros((1, 1, 1, 2)), [0], 3)
        with self.assertRaises(ValueError):
            score_dataset(two_feature_snapshot(), data)

    def testLessonReport(self):
        snapshot = two_feature_snapshot()
        plan = partition_balanced(score_dataset(snapshot, self.data), 1)
        lessons = lesson_report(snapshot, plan, self.data)
        self.assertEqual(len(lessons), 1)
        self.assertEqual(lessons[0].size, 3)
        # Sample 2 ties and argmax picks class 0, so only sample 0 is right.
        self.assertAlmostEqual(lessons[0].accuracy, 1 / 3.0)
        expected = -np.mean(np.log([self.sigmoid2, 1 - self.sigmoid2, 0.5]))
        self.assertAlmostEqual(lessons[0].mean_loss, expected, places=5)


class CsvTests(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        rng = np.random.default_rng(0)
        self.scores = [ScoredSample(i, i % 3, float(d)) for i, d in enumerate(rng.random(15))]

    def tearDown(self):
        self.tmp.cleanup()

    def testPlanRoundTrip(self):
        plan = partition_balanced(self.scores, 3, "abc", 3)
        path = os.path.join(self.tmp.name, "plan.csv")
        plan_id = export_plan(plan, path)
        loaded = import_plan(path, "abc", 3)
        for a, b in zip(plan.stages, loaded.stages):
            assert_array_equal(a, b)
        self.assertEqual(loaded.plan_id, plan_id)
        with open(path, newline="", encoding="utf-8") as f:
            text = f.read()
        self.assertTrue(text.startswith("index,class,difficulty,stage\n"))
        self.assertNotIn("\r", text)

    def testScoresRoundTrip(self):
        path = os.path.join(self.tmp.name, "scores.csv")
        export_scores(self.scores, path)
        self.assertEqual(import_scores(path), self.scores)

    def testBadHeader(self):
        path = os.path.join(self.tmp.name, "bad.csv")
        with open(path, "w") as f:
            f.write("a,b\n")
        with self.assertRaises(ValueError):
            import_plan(path)

    def write_plan(self, rows):
        path = os.path.join(self.tmp.name, "edited.csv")
        with open(path, "w", encoding="utf-8") as f:
            f.write("index,class,difficulty,stage\n")
            for row in rows:
                f.write("%d,%d,%r,%d\n" % row)
        return path

    def testStageZeroRejected(self):
        path = self.write_plan([(0, 0, 0.1, 0), (1, 0, 0.2, 1), (2, 0, 0.3, 2)])
        with self.assertRaisesRegex(ValueError, "edited.csv: index 0 has stage 0"):
            import_plan(path)

    def testDuplicateIndexRejected(self):
        path = self.write_plan([(0, 0, 0.1, 1), (1, 0, 0.2, 1), (1, 0, 0.3, 2)])
        with self.assertRaisesRegex(ValueError, "edited.csv: index 1 appears twice"):
            import_plan(path)

    def testEmptyStageRejected(self):
        path = self.write_plan([(0, 0, 0.1, 1), (1, 0, 0.2, 3)])
        with self.assertRaisesRegex(ValueError, "edited.csv: stage 2 of 3 has no samples"):
            import_plan(path)

    def testNegativeIndexRejected(self):
        path = self.write_plan([(-1, 0, 0.1, 1)])
        with self.assertRaisesRegex(ValueError, "negative index -1"):
            import_plan(path)


if __name__ == "__main__":
    unittest.main()
