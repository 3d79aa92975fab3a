# -*- coding: utf-8 -*-
#!/usr/bin/python

#################################################
# Usage:
# From top level (/path/to/repo/slkd), issue the command
#      `python -m experiments.toy`
#
# Toy experiment -- machinery is hooked up and
# working. Not a real comparison: 36 training
# points and 8 epochs, too few to tell the arms
# apart.
#################################################

import logging
import tempfile

from slkd import experiment_frameworks
from slkd.config import load_config

logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s")

config = load_config("sample_data/tiny_blobs.yaml")

print("Toy framework:")
print("  Data:      3 Gaussian blobs x 12 samples")
print("  Teacher:   4-16-3 MLP, %d epochs" % config.teacher_epochs)
print("  Student:   4-8-3 MLP, %d epochs" % config.epochs_total)
print("  Schedule:  %d initial + %s stages + %d final"
      % (config.slkd.initial_kd_epochs, list(config.slkd.stage_epochs), config.slkd.final_epochs))
print()

with tempfile.TemporaryDirectory() as out_dir:
    table = experiment_frameworks.compare_arms(config, [0], out_dir)
    print(table.format())
