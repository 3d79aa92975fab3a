# -*- coding: utf-8 -*-
"""Run configuration: schema, validation and named presets.

A config is a YAML mapping (see ``sample_data/desk_blobs.yaml`` for
every field). It may overlay one of the named presets; the result is
validated field by field and every violation is reported with its
dotted path, e.g. ``kd.tau: must be > 0``.
"""

import copy
import logging
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import yaml

from slkd.curriculum import CONFIDENCE_KINDS
from slkd.data_readers import AugmentPolicy
from slkd.losses import WEIGHTING_MODES
from slkd.nn_core import ModelSpec, ShapeError
from slkd.utils import canonical_json, sha256_hex

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """A config violation at a dotted field path."""

    def __init__(self, field, message):
        super(ConfigError, self).__init__("%s: %s" % (field, message))
        self.field = field


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "sgd"
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class KDConfig:
    tau: float = 4.0
    lam: float = 16.0
    mode: str = "additive"


@dataclass(frozen=True)
class StageSchedule:
    """Initial uniform-KD epochs, then one entry of ``stage_epochs`` per
    curriculum stage (stage i trains on X_1 | ... | X_i, so the last
    stage already covers the full set), then ``final_epochs`` more
    full-set epochs without a new snapshot."""

    n_stages: int = 3
    initial_kd_epochs: int = 10
    stage_epochs: Tuple[int, ...] = (10, 10, 10)
    final_epochs: int = 20
    confidence: str = "true_class"
    teacher_snapshot_epochs: Optional[Tuple[int, ...]] = None

    @property
    def total_epochs(self):
        return self.initial_kd_epochs + sum(self.stage_epochs) + self.final_epochs

    def boundary_epochs(self):
        """First epoch (1-based) of each stage; the snapshot for stage i
        is the student as it stands when epoch ``boundary_epochs()[i-1]``
        starts."""
        starts, epoch = [], self.initial_kd_epochs + 1
        for length in self.stage_epochs:
            starts.append(epoch)
            epoch += length
        return starts


@dataclass(frozen=True)
class AugmentConfig:
    pad: Optional[int] = None
    hflip: Optional[float] = None
    seed: Optional[int] = None

    def policy(self, run_seed):
        return AugmentPolicy(self.pad, self.hflip, run_seed if self.seed is None else self.seed)


@dataclass(frozen=True)
class DataConfig:
    kind: str = "blobs"
    class_count: Optional[int] = 10
    per_class: int = 100
    test_per_class: int = 50
    dims: int = 20
    spread: float = 0.25
    label_noise: float = 0.0
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    train_files: Tuple[str, ...] = ()
    test_files: Tuple[str, ...] = ()
    label_bytes: int = 1


@dataclass(frozen=True)
class RunConfig:
    teacher: ModelSpec
    student: ModelSpec
    optimizer: OptimizerConfig
    lr_schedule: Tuple[Tuple[int, float], ...]
    teacher_lr_schedule: Tuple[Tuple[int, float], ...]
    epochs_total: int
    teacher_epochs: int
    batch_size: int
    kd: KDConfig
    slkd: StageSchedule
    augment: AugmentConfig
    data: DataConfig
    seed: int = 0

    @property
    def teacher_spec(self):
        return self.teacher.with_seed(self.seed)

    @property
    def student_spec(self):
        return self.student.with_seed(self.seed)

    def with_seed(self, seed):
        return replace(self, seed=int(seed))

    def to_dict(self):
        """The resolved config in the same schema ``parse_config`` reads."""
        def spec(s):
            d = s.to_dict()
            d.pop("seed")
            return d
        slkd = self.slkd
        return {
            "seed": self.seed,
            "epochs_total": self.epochs_total,
            "teacher_epochs": self.teacher_epochs,
            "batch_size": self.batch_size,
            "teacher": spec(self.teacher),
            "student": spec(self.student),
            "optimizer": dict(vars(self.optimizer)),
            "lr_schedule": [list(x) for x in self.lr_schedule],
            "teacher_lr_schedule": [list(x) for x in self.teacher_lr_schedule],
            "kd": {"tau": self.kd.tau, "lambda": self.kd.lam, "mode": self.kd.mode},
            "slkd": {"n_stages": slkd.n_stages, "initial_kd_epochs": slkd.initial_kd_epochs,
                     "stage_epochs": list(slkd.stage_epochs), "final_epochs": slkd.final_epochs,
                     "confidence": slkd.confidence,
                     "teacher_snapshot_epochs": (None if slkd.teacher_snapshot_epochs is None
                                                 else list(slkd.teacher_snapshot_epochs))},
            "augment": dict(vars(self.augment)),
            "data": {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(self.data).items()},
        }

    def config_hash(self):
        """SHA-256 of the canonical resolved config, seed excluded."""
        d = self.to_dict()
        d.pop("seed")
        return sha256_hex(canonical_json(d))


class _Fields(object):
    """Typed, path-aware access to one mapping of the raw config."""

    def __init__(self, raw, prefix, allowed):
        self.prefix = prefix
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError(prefix or "<root>", "must be a mapping")
        for key in raw:
            if key not in allowed:
                raise ConfigError(self.path(key), "unknown field")
        self.raw = raw

    def path(self, key):
        return "%s.%s" % (self.prefix, key) if self.prefix else str(key)

    def get(self, key, default, kind, check=None, message="invalid value"):
        value = self.raw.get(key, default)
        if value is None:
            return None
        path = self.path(key)
        if kind is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(path, "expected an integer, got %r" % (value,))
        elif kind is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(path, "expected a number, got %r" % (value,))
            value = float(value)
        elif kind is str:
            if not isinstance(value, str):
                raise ConfigError(path, "expected a string, got %r" % (value,))
        elif kind is list:
            if not isinstance(value, (list, tuple)):
                raise ConfigError(path, "expected a list, got %r" % (value,))
            value = list(value)
        if check is not None and not check(value):
            raise ConfigError(path, message)
        return value


def _model_spec(raw, prefix):
    f = _Fields(raw, prefix, ("input_shape", "layers"))
    shape = f.get("input_shape", None, list)
    layers = f.get("layers", None, list)
    if shape is None or layers is None:
        raise ConfigError(prefix, "needs input_shape and layers")
    try:
        spec = ModelSpec.from_dict({"input_shape": shape, "layers": layers})
        spec.output_shapes()
    except (ShapeError, TypeError, ValueError) as e:
        raise ConfigError(prefix + ".layers", str(e))
    return spec


def _schedule(raw, path):
    if raw is None:
        return ()
    if not isinstance(raw, (list, tuple)):
        raise ConfigError(path, "expected a list of [epoch, multiplier] pairs")
    out = []
    for k, item in enumerate(raw):
        if (not isinstance(item, (list, tuple)) or len(item) != 2
                or isinstance(item[0], bool) or not isinstance(item[0], int)
                or not isinstance(item[1], (int, float)) or item[0] < 1 or not item[1] > 0):
            raise ConfigError("%s[%d]" % (path, k),
                              "expected [epoch >= 1, multiplier > 0], got %r" % (item,))
        if out and item[0] <= out[-1][0]:
            raise ConfigError("%s[%d]" % (path, k), "epochs must be strictly increasing")
        out.append((int(item[0]), float(item[1])))
    return tuple(out)


def _int_list(f, key, default, check, message):
    values = f.get(key, default, list)
    if values is None:
        return None
    for k, v in enumerate(values):
        if isinstance(v, bool) or not isinstance(v, int) or not check(v):
            raise ConfigError("%s[%d]" % (f.path(key), k), message)
    return tuple(values)


def parse_config(raw):
    """Validate a raw mapping and build a ``RunConfig``.

    Raises
    ------
    ConfigError
        On the first violation, naming its dotted path.
    """
    top = _Fields(raw, "", ("seed", "epochs_total", "teacher_epochs", "batch_size", "teacher",
                            "student", "optimizer", "lr_schedule", "teacher_lr_schedule", "kd",
                            "slkd", "augment", "data"))
    positive = lambda v: v > 0
    non_negative = lambda v: v >= 0

    seed = top.get("seed", 0, int, non_negative, "must be >= 0")
    epochs_total = top.get("epochs_total", None, int, non_negative, "must be >= 0")
    if epochs_total is None:
        raise ConfigError("epochs_total", "is required")
    teacher_epochs = top.get("teacher_epochs", epochs_total, int, non_negative, "must be >= 0")
    batch_size = top.get("batch_size", 128, int, positive, "must be >= 1")
    if "teacher" not in top.raw or "student" not in top.raw:
        raise ConfigError("teacher" if "teacher" not in top.raw else "student", "is required")
    teacher = _model_spec(top.raw["teacher"], "teacher")
    student = _model_spec(top.raw["student"], "student")
    if teacher.num_classes != student.num_classes:
        raise ConfigError("student.layers", "predicts %d classes, teacher predicts %d"
                          % (student.num_classes, teacher.num_classes))

    o = _Fields(top.raw.get("optimizer"), "optimizer",
                ("kind", "lr", "momentum", "weight_decay", "beta1", "beta2", "eps"))
    optimizer = OptimizerConfig(
        kind=o.get("kind", "sgd", str, lambda v: v in ("sgd", "adam"), "must be sgd or adam"),
        lr=o.get("lr", 0.1, float, positive, "must be > 0"),
        momentum=o.get("momentum", 0.9, float, lambda v: 0 <= v < 1, "must be in [0, 1)"),
        weight_decay=o.get("weight_decay", 5e-4, float, non_negative, "must be >= 0"),
        beta1=o.get("beta1", 0.9, float, lambda v: 0 <= v < 1, "must be in [0, 1)"),
        beta2=o.get("beta2", 0.999, float, lambda v: 0 <= v < 1, "must be in [0, 1)"),
        eps=o.get("eps", 1e-8, float, positive, "must be > 0"))
    lr_schedule = _schedule(top.raw.get("lr_schedule"), "lr_schedule")
    teacher_lr_schedule = (_schedule(top.raw["teacher_lr_schedule"], "teacher_lr_schedule")
                           if top.raw.get("teacher_lr_schedule") is not None else lr_schedule)

    k = _Fields(top.raw.get("kd"), "kd", ("tau", "lambda", "mode"))
    mode = k.get("mode", "additive", str, lambda v: v in WEIGHTING_MODES,
                 "must be one of %s" % ", ".join(WEIGHTING_MODES))
    lam = k.get("lambda", 16.0 if mode == "additive" else 0.9, float, non_negative, "must be >= 0")
    if mode == "convex" and lam > 1:
        raise ConfigError("kd.lambda", "convex mode needs lambda in [0, 1]")
    kd = KDConfig(tau=k.get("tau", 4.0, float, positive, "must be > 0"), lam=lam, mode=mode)

    s = _Fields(top.raw.get("slkd"), "slkd", ("n_stages", "initial_kd_epochs", "stage_epochs",
                                              "final_epochs", "confidence",
                                              "teacher_snapshot_epochs"))
    n_stages = s.get("n_stages", 3, int, positive, "must be >= 1")
    stage_epochs = _int_list(s, "stage_epochs", [10] * n_stages, positive, "must be >= 1")
    if len(stage_epochs) != n_stages:
        raise ConfigError("slkd.stage_epochs", "needs exactly n_stages=%d entries, has %d"
                          % (n_stages, len(stage_epochs)))
    snapshot_epochs = _int_list(s, "teacher_snapshot_epochs", None, positive, "must be >= 1")
    if snapshot_epochs is not None and len(snapshot_epochs) != n_stages:
        raise ConfigError("slkd.teacher_snapshot_epochs", "needs exactly n_stages=%d entries"
                          % n_stages)
    slkd = StageSchedule(
        n_stages=n_stages,
        initial_kd_epochs=s.get("initial_kd_epochs", 10, int, positive, "must be >= 1"),
        stage_epochs=stage_epochs,
        final_epochs=s.get("final_epochs", 0, int, non_negative, "must be >= 0"),
        confidence=s.get("confidence", "true_class", str, lambda v: v in CONFIDENCE_KINDS,
                         "must be one of %s" % ", ".join(CONFIDENCE_KINDS)),
        teacher_snapshot_epochs=snapshot_epochs)
    if slkd.total_epochs > epochs_total:
        raise ConfigError("slkd", "schedule needs %d epochs, epochs_total is %d"
                          % (slkd.total_epochs, epochs_total))

    a = _Fields(top.raw.get("augment"), "augment", ("pad", "hflip", "seed"))
    augment = AugmentConfig(pad=a.get("pad", None, int, non_negative, "must be >= 0"),
                            hflip=a.get("hflip", None, float, lambda v: 0 <= v <= 1,
                                        "must be in [0, 1]"),
                            seed=a.get("seed", None, int, non_negative, "must be >= 0"))

    d = _Fields(top.raw.get("data"), "data", tuple(DataConfig.__dataclass_fields__))
    kind = d.get("kind", "blobs", str, lambda v: v in ("blobs", "idx", "cifar"),
                 "must be blobs, idx or cifar")
    data = DataConfig(
        kind=kind,
        class_count=d.get("class_count", 10 if kind == "blobs" else None, int, positive,
                          "must be >= 1"),
        per_class=d.get("per_class", 100, int, positive, "must be >= 1"),
        test_per_class=d.get("test_per_class", 50, int, positive, "must be >= 1"),
        dims=d.get("dims", 20, int, positive, "must be >= 1"),
        spread=d.get("spread", 0.25, float, non_negative, "must be >= 0"),
        label_noise=d.get("label_noise", 0.0, float, lambda v: 0 <= v <= 1, "must be in [0, 1]"),
        train_images=d.get("train_images", None, str),
        train_labels=d.get("train_labels", None, str),
        test_images=d.get("test_images", None, str),
        test_labels=d.get("test_labels", None, str),
        train_files=tuple(d.get("train_files", [], list)),
        test_files=tuple(d.get("test_files", [], list)),
        label_bytes=d.get("label_bytes", 1, int, lambda v: v in (1, 2), "must be 1 or 2"))
    if kind == "idx" and None in (data.train_images, data.train_labels,
                                  data.test_images, data.test_labels):
        raise ConfigError("data", "idx data needs train_images, train_labels, test_images, test_labels")
    if kind == "cifar" and not (data.train_files and data.test_files):
        raise ConfigError("data", "cifar data needs train_files and test_files")
    if data.class_count is not None and data.class_count != teacher.num_classes:
        raise ConfigError("data.class_count", "is %d, models predict %d classes"
                          % (data.class_count, teacher.num_classes))

    return RunConfig(teacher=teacher, student=student, optimizer=optimizer,
                     lr_schedule=lr_schedule, teacher_lr_schedule=teacher_lr_schedule,
                     epochs_total=epochs_total, teacher_epochs=teacher_epochs,
                     batch_size=batch_size, kd=kd, slkd=slkd, augment=augment, data=data,
                     seed=seed)


def _merge(base, overlay):
    out = copy.deepcopy(base)
    for key, value in (overlay or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path=None, preset=None, seed=None):
    """Resolve a preset, an optional YAML overlay and a seed override.

    Parameters
    ----------
    path : str or None
        YAML file; keys override the preset's.
    preset : str or None
        One of ``PRESETS``.
    seed : int or None
        Replaces the config's ``seed``.
    """
    if path is None and preset is None:
        raise ConfigError("<root>", "give a config file, a preset, or both")
    raw = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError("preset", "unknown preset %r (expected one of %s)"
                              % (preset, ", ".join(sorted(PRESETS))))
        raw = copy.deepcopy(PRESETS[preset])
    if path is not None:
        try:
            with open(path, encoding="utf-8") as f:
                overlay = yaml.safe_load(f)
        except OSError as e:
            raise ConfigError("<file>", "cannot read %s: %s" % (path, e))
        except yaml.YAMLError as e:
            raise ConfigError("<file>", "%s is not valid YAML: %s" % (path, e))
        if overlay is not None and not isinstance(overlay, dict):
            raise ConfigError("<root>", "%s must hold a mapping" % path)
        raw = _merge(raw, overlay)
    if seed is not None:
        raw["seed"] = seed
    return parse_config(raw)


def dump_config(config):
    return yaml.safe_dump(config.to_dict(), sort_keys=True, default_flow_style=None)


def _mlp(dims, hidden, classes):
    layers, width = [["flatten"]], dims
    for h in hidden:
        layers += [["dense", width, h], ["relu"]]
        width = h
    return {"input_shape": [1, 1, dims], "layers": layers + [["dense", width, classes]]}


def _cifar_teacher(classes):
    return {"input_shape": [3, 32, 32],
            "layers": [["conv3x3", 3, 32], ["relu"], ["conv3x3", 32, 32], ["relu"], ["maxpool2x2"],
                       ["conv3x3", 32, 64], ["relu"], ["maxpool2x2"], ["flatten"],
                       ["dense", 64 * 8 * 8, 256], ["relu"], ["dense", 256, classes]]}


def _cifar_student(classes):
    return {"input_shape": [3, 32, 32],
            "layers": [["conv3x3", 3, 16], ["relu"], ["maxpool2x2"],
                       ["conv3x3", 16, 32], ["relu"], ["maxpool2x2"], ["flatten"],
                       ["dense", 32 * 8 * 8, classes]]}


PRESETS = {
    # 1250 teacher against 196 student parameters; the six-unit student layer
    # is narrower than the nine directions the class centers span.
    # 10 + 3 x 10 + 20 = 60 epochs.
    "desk-blobs": {
        "seed": 0,
        "epochs_total": 60,
        "teacher_epochs": 40,
        "batch_size": 64,
        "teacher": _mlp(20, [40], 10),
        "student": _mlp(20, [6], 10),
        "optimizer": {"kind": "sgd", "lr": 0.05, "momentum": 0.9, "weight_decay": 5e-4},
        "lr_schedule": [[30, 0.1], [45, 0.1]],
        "teacher_lr_schedule": [[30, 0.1]],
        "kd": {"tau": 4.0, "lambda": 1.0, "mode": "additive"},
        "slkd": {"n_stages": 3, "initial_kd_epochs": 10, "stage_epochs": [10, 10, 10],
                 "final_epochs": 20},
        "augment": {},
        "data": {"kind": "blobs", "class_count": 10, "per_class": 100, "test_per_class": 200,
                 "dims": 20, "spread": 0.25, "label_noise": 0.2},
    },
    # Five snapshots at epochs 41, 71, 101, 131, 161; the last stage is the
    # full set for 100 epochs. 40 + 4 x 30 + 100 = 260.
    "paper-n5": {
        "seed": 0,
        "epochs_total": 260,
        "teacher_epochs": 200,
        "batch_size": 128,
        "teacher": _cifar_teacher(10),
        "student": _cifar_student(10),
        "optimizer": {"kind": "sgd", "lr": 0.1, "momentum": 0.9, "weight_decay": 5e-4},
        "lr_schedule": [[60, 0.1], [120, 0.1], [160, 0.1]],
        "kd": {"tau": 4.0, "lambda": 16.0, "mode": "additive"},
        "slkd": {"n_stages": 5, "initial_kd_epochs": 40, "stage_epochs": [30, 30, 30, 30, 100],
                 "final_epochs": 0},
        "augment": {"pad": 4, "hflip": 0.5},
        "data": {"kind": "cifar", "class_count": 10, "label_bytes": 1,
                 "train_files": ["data/cifar-10-batches-bin/data_batch_%d.bin" % i
                                 for i in range(1, 6)],
                 "test_files": ["data/cifar-10-batches-bin/test_batch.bin"]},
    },
    # Snapshots loaded at epochs 41, 71 and 141; teacher snapshots for the
    # teacher-source ablation come from epochs 60, 120 and 160.
    "paper-n3": {
        "seed": 0,
        "epochs_total": 200,
        "teacher_epochs": 200,
        "batch_size": 128,
        "teacher": _cifar_teacher(100),
        "student": _cifar_student(100),
        "optimizer": {"kind": "sgd", "lr": 0.1, "momentum": 0.9, "weight_decay": 5e-4},
        "lr_schedule": [[60, 0.1], [120, 0.1], [160, 0.1]],
        "kd": {"tau": 4.0, "lambda": 16.0, "mode": "additive"},
        "slkd": {"n_stages": 3, "initial_kd_epochs": 40, "stage_epochs": [30, 70, 60],
                 "final_epochs": 0, "teacher_snapshot_epochs": [60, 120, 160]},
        "augment": {"pad": 4, "hflip": 0.5},
        "data": {"kind": "cifar", "class_count": 100, "label_bytes": 2,
                 "train_files": ["data/cifar-100-binary/train.bin"],
                 "test_files": ["data/cifar-100-binary/test.bin"]},
    },
}


def run_dir_name(config):
    """``<config hash[:12]>-seed<seed>``: runs of one config share the
    prefix, so ``report`` can gather them across seeds."""
    return "%s-seed%d" % (config.config_hash()[:12], config.seed)
