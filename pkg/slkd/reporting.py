# -*- coding: utf-8 -*-
"""Aggregation of finished runs and static plots of their records."""

import csv
import glob
import io
import logging
import os
from collections import OrderedDict

import matplotlib
matplotlib.use("Agg")
from matplotlib.figure import Figure
import numpy as np
from sklearn.metrics import classification_report, confusion_matrix

from slkd.utils import atomic_write_text, median

logger = logging.getLogger(__name__)

ARMS = ("teacher", "student", "kd", "kd-matched", "slkd", "slkd-t")
TABLE_HEADER = ["arm", "median_acc", "median_best_acc", "seeds", "per_seed_acc", "cum_iters"]
PLOT_METRICS = (("train_loss", "training loss"), ("test_acc", "test accuracy"))
SVG_SALT = "slkd"
AXIS_MARGIN = 0.05


class ArmRow(object):
    """Per-seed results of one arm. Medians are derived, never stored."""

    def __init__(self, arm):
        self.arm = arm
        self.final = OrderedDict()
        self.best = OrderedDict()
        self.iterations = OrderedDict()

    @property
    def seeds(self):
        return sorted(self.final)

    @property
    def median_accuracy(self):
        return median(self.final.values())

    @property
    def median_best_accuracy(self):
        return median(self.best.values())

    @property
    def median_iterations(self):
        return int(round(median(self.iterations.values())))


class ComparisonTable(object):
    """Arms x seeds accuracy table: median test accuracy over seeds per arm."""

    def __init__(self):
        self.rows = OrderedDict()

    def add(self, arm, seed, final_accuracy, cumulative_iterations, best_accuracy=None):
        row = self.rows.setdefault(arm, ArmRow(arm))
        if seed in row.final:
            raise ValueError("arm %s already has a result for seed %d" % (arm, seed))
        row.final[seed] = float(final_accuracy)
        row.best[seed] = float(final_accuracy if best_accuracy is None else best_accuracy)
        row.iterations[seed] = int(cumulative_iterations)
        return row

    def __len__(self):
        return len(self.rows)

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TABLE_HEADER)
        for row in self.rows.values():
            writer.writerow([row.arm, repr(row.median_accuracy), repr(row.median_best_accuracy),
                             " ".join(str(s) for s in row.seeds),
                             " ".join(repr(row.final[s]) for s in row.seeds),
                             row.median_iterations])
        return buf.getvalue()

    def save(self, path):
        atomic_write_text(path, self.to_csv())

    def format(self):
        lines = ["%-24s %10s %10s %8s %12s" % ("arm", "median", "best", "seeds", "iterations")]
        for row in self.rows.values():
            lines.append("%-24s %10.4f %10.4f %8d %12d" % (
                row.arm, row.median_accuracy, row.median_best_accuracy, len(row.final),
                row.median_iterations))
        return "\n".join(lines)


def collect_runs(run_dirs, arms=ARMS):
    """Build a ComparisonTable from finished run directories.

    A run directory is ``<root>/<hash>-seed<k>``; each arm that ran in it
    left ``<arm>/record.csv``. Directories carrying a ``FAILED`` marker
    or an unfinished arm are skipped.
    """
    from slkd.experiment_frameworks import TrainRecord

    table = ComparisonTable()
    for run_dir in sorted(run_dirs):
        if os.path.exists(os.path.join(run_dir, "FAILED")):
            logger.warning("Skipping failed run %s", run_dir)
            continue
        name = os.path.basename(os.path.normpath(run_dir))
        if "-seed" not in name:
            logger.debug("Skipping %s: not a run directory", run_dir)
            continue
        seed = int(name.rsplit("-seed", 1)[1])
        for arm in arms:
            path = os.path.join(run_dir, arm, "record.csv")
            if not os.path.exists(path):
                continue
            record = TrainRecord.load(path)
            if not record.rows:
                continue
            table.add(arm, seed, record.final_accuracy, record.cumulative_iterations,
                      record.best_accuracy)
    return table


def find_run_dirs(root, config_hash=None):
    pattern = "%s-seed*" % (config_hash[:12] if config_hash else "*")
    return [d for d in glob.glob(os.path.join(root, pattern)) if os.path.isdir(d)]


def verbose_overview(y, yhat, class_count=None):
    """Classification report and confusion matrix (rows are truth,
    columns are predictions) as one printable block."""
    labels = list(range(class_count)) if class_count else None
    return "\n".join([
        "Classification report:",
        classification_report(y, yhat, labels=labels, digits=3, zero_division=0),
        "Confusion matrix:",
        str(confusion_matrix(y, yhat, labels=labels)),
        "  (Rows are truth; columns are predictions)"])


def axis_limits(values, margin=AXIS_MARGIN):
    """(low, high) spanning ``values`` with ``margin`` of the range added
    on each side; a constant series gets a margin of its magnitude (or 1)."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    span = hi - lo
    if span == 0:
        span = max(abs(lo), 1.0)
    return lo - margin * span, hi + margin * span


def _series(record, metric):
    x = [r.cum_iters for r in record.rows]
    y = [getattr(r, metric) for r in record.rows]
    return x, y


def emit_plots(records, out_dir):
    """One SVG per metric, one line per arm, x = cumulative iterations.

    Parameters
    ----------
    records : list of (str, TrainRecord)
        Arm name and its record, in legend order.
    out_dir : str

    Returns
    -------
    list of str
        Paths of ``train_loss.svg`` and ``test_acc.svg``.
    """
    if not records:
        raise ValueError("no records to plot")
    for name, record in records:
        if not record.rows:
            raise ValueError("record %r is empty" % name)
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    with matplotlib.rc_context({"svg.hashsalt": SVG_SALT, "svg.fonttype": "none"}):
        for metric, label in PLOT_METRICS:
            fig = Figure(figsize=(7, 4.5))
            fig.patch.set_facecolor("white")
            ax = fig.add_subplot(1, 1, 1)
            xs, ys = [], []
            for name, record in records:
                x, y = _series(record, metric)
                ax.plot(x, y, "-o" if len(x) == 1 else "-", label=name)
                xs += x
                ys += y
            ax.set_xlim(*axis_limits(xs))
            ax.set_ylim(*axis_limits(ys))
            ax.set_xlabel("iterations")
            ax.set_ylabel(label)
            ax.set_title("%s vs. iterations" % label.capitalize())
            ax.legend()
            path = os.path.join(out_dir, "%s.svg" % metric)
            fig.savefig(path, format="svg", metadata={"Date": None})
            paths.append(path)
            logger.info("Wrote %s", path)
    return paths
