# -*- coding: utf-8 -*-
#!/usr/bin/python

"""
How hard is each lesson? Runs SLKD on the desk-blobs preset and reports,
for every stage plan, the accuracy and loss of the snapshot that built
it and of the final student on each stage X_i.

Usage:
From top level (/path/to/repo/slkd), issue the command
     `python -m experiments.lessons`
"""

import logging
import os

from slkd import checkpoint
from slkd import experiment_frameworks
from slkd.config import load_config, run_dir_name
from slkd.curriculum import lesson_report
from slkd.data_readers import load_splits

logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s")

config = load_config(preset="desk-blobs")
out_dir = os.path.join(os.environ.get("SLKD_RUN_ROOT", "runs"), run_dir_name(config))
data = load_splits(config.data, config.seed)

teacher = experiment_frameworks.train_teacher(config, data, os.path.join(out_dir, "teacher"))
result = experiment_frameworks.distill_slkd(teacher.checkpoint, config, data,
                                            os.path.join(out_dir, "slkd"))
final, _, _ = checkpoint.load(result.checkpoint)

print("\n-- AFTER COMPLETION --")
for i, (plan, snap) in enumerate(zip(result.plans, result.snapshots), start=1):
    snapshot, _, _ = checkpoint.load(snap)
    print("Plan of stage %d (%s):" % (i, plan.plan_id))
    for name, model in (("snapshot", snapshot), ("final", final)):
        for lesson in lesson_report(model, plan, data.train):
            print("  %-8s X_%d  size %4d  accuracy %.4f  loss %.4f"
                  % (name, lesson.stage, lesson.size, lesson.accuracy, lesson.mean_loss))
