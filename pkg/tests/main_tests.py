#!/usr/bin/python
##
## Usage: python -m unittest tests.main_tests
##

import contextlib
import io
import os
import tempfile
import unittest

import yaml

from slkd import checkpoint
from slkd.__main__ import main
from slkd.config import load_config, run_dir_name
from slkd.curriculum import import_plan
from slkd.experiment_frameworks import TrainRecord

TINY = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                    "sample_data", "tiny_blobs.yaml")


class CliTestCase(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = os.path.join(self.tmp.name, "runs")
        self.run_dir = os.path.join(self.root, run_dir_name(load_config(TINY)))

    def tearDown(self):
        self.tmp.cleanup()

    def run_cli(self, *argv, config=TINY):
        out = io.StringIO()
        args = list(argv) + ["--out", self.root, "--no-progress"]
        if config:
            args += ["--config", config]
        with contextlib.redirect_stdout(out):
            code = main(args)
        return code, out.getvalue()

    def in_run(self, *parts):
        return os.path.join(self.run_dir, *parts)

    def read_meta(self, command):
        with open(self.in_run("meta", "%s.yaml" % command), encoding="utf-8") as f:
            return yaml.safe_load(f)

    def read_record(self, arm):
        return TrainRecord.load(self.in_run(arm, "record.csv"))

    def write_config(self, text):
        path = os.path.join(self.tmp.name, "overlay.yaml")
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
        return path


class ConfigErrorTests(CliTestCase):

    def testNegativeTau(self):
        path = self.write_config("kd: {tau: -1.0}\n")
        with self.assertLogs("slkd", level="ERROR") as logs:
            code, _ = self.run_cli("train-teacher", "--preset", "desk-blobs", config=path)
        self.assertEqual(code, 2)
        self.assertIn("kd.tau", "\n".join(logs.output))
        self.assertFalse(os.path.exists(self.root))

    def testScheduleLongerThanBudget(self):
        with open(TINY, encoding="utf-8") as f:
            raw = yaml.safe_load(f)
        raw["epochs_total"] = 5
        code, _ = self.run_cli("distill-slkd", config=self.write_config(yaml.safe_dump(raw)))
        self.assertEqual(code, 2)
        self.assertFalse(os.path.exists(self.root))

    def testMissingTeacher(self):
        with self.assertLogs("slkd", level="ERROR") as logs:
            code, _ = self.run_cli("distill-kd")
        self.assertEqual(code, 2)
        self.assertIn("--teacher", "\n".join(logs.output))
        self.assertFalse(os.path.exists(self.run_dir))

    def testBadRecordArgument(self):
        code, _ = self.run_cli("plot", "--record", "kd.csv", config=None)
        self.assertEqual(code, 2)

    def testBudgetWithoutTeacher(self):
        with self.assertLogs("slkd", level="ERROR") as logs:
            code, _ = self.run_cli("distill-kd", "--no-teacher", "--iterations", "5")
        self.assertEqual(code, 2)
        self.assertIn("--no-teacher", "\n".join(logs.output))
        self.assertFalse(os.path.exists(self.run_dir))


class EndToEndTests(CliTestCase):

    def testFullRun(self):
        code, out = self.run_cli("train-teacher")
        self.assertEqual(code, 0)
        self.assertEqual(out.strip(), self.in_run("teacher", "final.ckpt"))
        self.assertTrue(os.path.exists(self.in_run("config.yaml")))
        meta = self.read_meta("train-teacher")
        self.assertEqual(meta["status"], "ok")
        self.assertEqual(meta["config_hash"], load_config(TINY).config_hash())

        self.assertEqual(self.run_cli("distill-kd")[0], 0)
        self.assertEqual(self.run_cli("distill-kd", "--no-teacher")[0], 0)
        with self.assertLogs("slkd", level="ERROR") as logs:
            self.assertEqual(self.run_cli("distill-kd", "--match-slkd")[0], 2)
        self.assertIn("--match-slkd", "\n".join(logs.output))
        self.assertEqual(self.run_cli("distill-slkd")[0], 0)
        self.assertEqual(self.run_cli("distill-slkd", "--snapshot-source", "teacher")[0], 0)
        self.assertEqual(self.run_cli("distill-kd", "--match-slkd")[0], 0)
        self.assertEqual(self.read_record("kd-matched").cumulative_iterations,
                         self.read_record("slkd").cumulative_iterations)

        meta = self.read_meta("distill-slkd")
        self.assertEqual(meta["status"], "ok")
        self.assertEqual(meta["config"], load_config(TINY).to_dict())
        self.assertEqual(meta["checkpoints"][os.path.join("slkd-t", "final.ckpt")],
                         checkpoint.checkpoint_id(self.in_run("slkd-t", "final.ckpt")))
        self.assertEqual(sorted(meta["plans"]),
                         [os.path.join("slkd-t", "plans", "stage_%d.csv" % i) for i in (1, 2, 3)])
        for path, plan_id in meta["plans"].items():
            self.assertEqual(import_plan(self.in_run(path)).plan_id, plan_id)
        history = self.in_run("teacher", "history", "epoch_%04d.ckpt")
        self.assertEqual(meta["snapshots"],
                         [checkpoint.checkpoint_id(history % e) for e in (2, 3, 4)])
        self.assertEqual(self.read_meta("train-teacher")["checkpoints"],
                         {os.path.join("teacher", "final.ckpt"):
                          checkpoint.checkpoint_id(self.in_run("teacher", "final.ckpt")),
                          os.path.join("teacher", "best.ckpt"):
                          checkpoint.checkpoint_id(self.in_run("teacher", "best.ckpt"))})
        for arm in ("teacher", "student", "kd", "slkd", "slkd-t"):
            self.assertTrue(os.path.exists(self.in_run(arm, "record.csv")), arm)
        self.assertTrue(os.path.exists(self.in_run("slkd", "plans", "stage_3.csv")))

        code, out = self.run_cli("eval", "--checkpoint", self.in_run("slkd", "final.ckpt"),
                                 "--split", "train",
                                 "--plan", self.in_run("slkd", "plans", "stage_3.csv"))
        self.assertEqual(code, 0)
        lines = out.splitlines()
        self.assertEqual([l.split(":")[0] for l in lines[:3]], ["stage 1", "stage 2", "stage 3"])
        self.assertTrue(lines[-1].startswith("accuracy "))

        code, out = self.run_cli("report")
        self.assertEqual(code, 0)
        self.assertIn("slkd", out)
        report = os.path.join(self.root, "report-%s.csv"
                              % load_config(TINY).config_hash()[:12])
        self.assertTrue(os.path.exists(report))

        code, out = self.run_cli("plot")
        self.assertEqual(code, 0)
        self.assertTrue(os.path.exists(self.in_run("plots", "train_loss.svg")))
        self.assertTrue(os.path.exists(self.in_run("plots", "test_acc.svg")))

    def testScoreAndPartition(self):
        self.assertEqual(self.run_cli("train-teacher")[0], 0)
        snapshot = self.in_run("teacher", "history", "epoch_0002.ckpt")
        code, out = self.run_cli("score", "--checkpoint", snapshot)
        self.assertEqual(code, 0)
        scores = out.strip()
        self.assertTrue(scores.startswith(self.in_run("scores")))

        code, out = self.run_cli("partition", "--scores", scores, "--stages", "2")
        self.assertEqual(code, 0)
        self.assertTrue(out.strip().endswith("-n2.csv"))
        code, out = self.run_cli("partition", "--checkpoint", snapshot)
        self.assertEqual(code, 0)
        self.assertTrue(out.strip().endswith("-n3.csv"))

    def testFailedMarker(self):
        self.assertEqual(self.run_cli("train-teacher")[0], 0)
        bogus = os.path.join(self.tmp.name, "bogus.ckpt")
        with open(bogus, "wb") as f:
            f.write(b"not a checkpoint")
        with self.assertLogs("slkd", level="ERROR"):
            code, _ = self.run_cli("score", "--checkpoint", bogus)
        self.assertEqual(code, 1)
        with open(self.in_run("FAILED"), encoding="utf-8") as f:
            self.assertTrue(f.read().startswith("score: "))
        with open(self.in_run("meta", "score.yaml"), encoding="utf-8") as f:
            self.assertEqual(yaml.safe_load(f)["status"], "failed")

        code, _ = self.run_cli("score", "--checkpoint", self.in_run("teacher", "final.ckpt"))
        self.assertEqual(code, 0)
        self.assertFalse(os.path.exists(self.in_run("FAILED")))

    def testReportWithoutRuns(self):
        code, _ = self.run_cli("report")
        self.assertEqual(code, 1)


if __name__ == "__main__":
    unittest.main()
