# -*- coding: utf-8 -*-
#!/usr/bin/python

"""
Main comparison on the desk-blobs preset: teacher, student alone,
uniform KD and SLKD, five seeds each.

Usage:
From top level (/path/to/repo/slkd), issue the command
     `python -m experiments.desk_blobs`
"""

import logging
import os

import numpy as np
import scipy.stats

from slkd import experiment_frameworks
from slkd.config import load_config

logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s")

run_experiment = True
out_dir = os.environ.get("SLKD_RUN_ROOT", "runs")
seeds = [0, 1, 2, 3, 4]

if run_experiment:
    config = load_config(preset="desk-blobs")
    table = experiment_frameworks.compare_arms(config, seeds, out_dir)
    table.save(os.path.join(out_dir, "comparison-%s.csv" % config.config_hash()[:12]))

    # Print out the results
    print("\n-- AFTER COMPLETION --")
    print(table.format())
    print()
    for arm, row in table.rows.items():
        acc = np.array([row.final[s] for s in row.seeds])
        print("%-8s mean accuracy: %.4f +/- %.4f" % (arm, acc.mean(), acc.std()))

    # Paired by seed: same data, same student initialization.
    slkd = [table.rows["slkd"].final[s] for s in seeds]
    kd = [table.rows["kd"].final[s] for s in seeds]
    if slkd != kd:
        print("SLKD vs. KD, Wilcoxon signed-rank: p = %.3f"
              % scipy.stats.wilcoxon(slkd, kd).pvalue)
