# -*- coding: utf-8 -*-
#!/usr/bin/python

"""
Where should the curriculum come from? SLKD with difficulty scored by
student snapshots (Snapshot-S) against scoring by checkpoints from the
teacher's own training history (Snapshot-T), over three seeds.

Usage:
From top level (/path/to/repo/slkd), issue the command
     `python -m experiments.snapshot_source`
"""

import logging
import os

import numpy as np

from slkd import experiment_frameworks
from slkd.config import load_config, run_dir_name
from slkd.data_readers import load_splits

logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s")

root = os.environ.get("SLKD_RUN_ROOT", "runs")
accuracy = {"Snapshot-S": [], "Snapshot-T": []}

for seed in [0, 1, 2]:
    config = load_config(preset="desk-blobs", seed=seed)
    out_dir = os.path.join(root, run_dir_name(config))
    data = load_splits(config.data, seed)
    teacher = experiment_frameworks.train_teacher(config, data, os.path.join(out_dir, "teacher"))
    comparison = experiment_frameworks.ablate_snapshot_source(
        teacher, config, data, os.path.join(out_dir, "ablation"))
    for row in comparison.rows:
        accuracy[row.arm].append(row.final_accuracy)

print("\n-- AFTER COMPLETION --")
for arm, values in accuracy.items():
    print("%s: %.4f +/- %.4f  %s" % (arm, np.mean(values), np.std(values), np.round(values, 4)))
