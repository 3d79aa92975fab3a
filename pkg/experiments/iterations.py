# -*- coding: utf-8 -*-
#!/usr/bin/python

"""
Training cost of SLKD against uniform KD for every preset: the number
of mini-batch iterations each schedule needs, from the class counts
alone. No training is done.

Usage:
From top level (/path/to/repo/slkd), issue the command
     `python -m experiments.iterations`
"""

from slkd import experiment_frameworks
from slkd.config import PRESETS, parse_config

# Training images per class in CIFAR-10 and CIFAR-100.
CIFAR_PER_CLASS = {10: 5000, 100: 500}

print("%-12s %8s %10s %10s %8s" % ("preset", "samples", "slkd", "kd", "saved"))
for name in sorted(PRESETS):
    config = parse_config(PRESETS[name])
    if config.data.kind == "blobs":
        per_class = config.data.per_class
    else:
        per_class = CIFAR_PER_CLASS[config.data.class_count]
    counts = [per_class] * config.data.class_count
    slkd = experiment_frameworks.planned_iterations(config, counts)
    kd = experiment_frameworks.uniform_iterations(config, sum(counts))
    print("%-12s %8d %10d %10d %7.1f%%" % (name, sum(counts), slkd, kd, 100.0 * (kd - slkd) / kd))
