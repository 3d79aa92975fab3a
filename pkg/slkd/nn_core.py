# -*- coding: utf-8 -*-
"""Minimal feed-forward network core.

Layer specs, parameter initialization, a forward pass that caches the
activations it needs, and exact analytic backpropagation for the small
set of layers used to build desk-scale teacher and student classifiers.

Tensors are plain ``numpy`` arrays of dtype float32, rank at most 4 and
laid out as (batch, channels, height, width). Reductions accumulate in
float64 and are cast back to the parameter dtype, so a model cast with
``Model.astype(np.float64)`` behaves as an exact 64-bit shadow of itself.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

logger = logging.getLogger(__name__)

LAYER_KINDS = ("dense", "relu", "conv3x3", "maxpool2x2", "flatten")
PARAM_KINDS = ("dense", "conv3x3")
INIT_SCHEMES = ("he_uniform", "zeros", "identity")
ROLES = ("teacher", "student", "snapshot")


class ShapeError(ValueError):
    """A batch or layer stack whose shapes do not compose."""


class NonFiniteError(ArithmeticError):
    """NaN or Inf produced by (or fed to) a network operation."""


class ForwardCacheError(ValueError):
    """Backward pass requested without a matching forward pass."""


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a declarative stack.

    ``in_features``/``out_features`` are the fan-in/fan-out of a dense
    layer and the channel counts of a 3x3 convolution; they are unused
    for parameter-free layers.
    """

    kind: str
    in_features: int = 0
    out_features: int = 0
    pad: int = 1
    stride: int = 1
    init_scheme: str = "he_uniform"
    init_seed: Optional[int] = None

    @property
    def has_params(self):
        return self.kind in PARAM_KINDS

    def param_shapes(self):
        if self.kind == "dense":
            return {"weight": (self.in_features, self.out_features),
                    "bias": (self.out_features,)}
        if self.kind == "conv3x3":
            return {"weight": (self.out_features, self.in_features, 3, 3),
                    "bias": (self.out_features,)}
        return {}

    def to_list(self):
        """Compact list form used in config files and checkpoints."""
        if self.kind == "dense":
            out = [self.kind, self.in_features, self.out_features]
        elif self.kind == "conv3x3":
            out = [self.kind, self.in_features, self.out_features, self.pad, self.stride]
        else:
            out = [self.kind]
        if self.init_scheme != "he_uniform" or self.init_seed is not None:
            out.append({"scheme": self.init_scheme, "seed": self.init_seed})
        return out

    @classmethod
    def from_list(cls, item):
        item = list(item)
        init = {}
        if item and isinstance(item[-1], dict):
            init = item.pop()
        if not item or item[0] not in LAYER_KINDS:
            raise ShapeError("unknown layer kind in %r (expected one of %s)"
                             % (item, ", ".join(LAYER_KINDS)))
        kind, args = item[0], [int(a) for a in item[1:]]
        kwargs = {"init_scheme": init.get("scheme", "he_uniform"),
                  "init_seed": init.get("seed")}
        if kind == "dense":
            if len(args) != 2:
                raise ShapeError("dense layer needs [dense, in, out], got %r" % (item,))
            return cls(kind, args[0], args[1], **kwargs)
        if kind == "conv3x3":
            if len(args) not in (2, 3, 4):
                raise ShapeError("conv3x3 layer needs [conv3x3, in_ch, out_ch(, pad, stride)], got %r" % (item,))
            pad = args[2] if len(args) > 2 else 1
            stride = args[3] if len(args) > 3 else 1
            return cls(kind, args[0], args[1], pad=pad, stride=stride, **kwargs)
        if args:
            raise ShapeError("%s layer takes no arguments, got %r" % (kind, item))
        return cls(kind, **kwargs)


def dense(n_in, n_out, scheme="he_uniform", seed=None):
    return LayerSpec("dense", n_in, n_out, init_scheme=scheme, init_seed=seed)


def conv3x3(in_ch, out_ch, pad=1, stride=1, scheme="he_uniform", seed=None):
    return LayerSpec("conv3x3", in_ch, out_ch, pad=pad, stride=stride,
                     init_scheme=scheme, init_seed=seed)


def relu():
    return LayerSpec("relu")


def maxpool2x2():
    return LayerSpec("maxpool2x2")


def flatten():
    return LayerSpec("flatten")


@dataclass(frozen=True)
class ModelSpec:
    """Input shape (without the batch axis), the layer stack and the seed
    from which per-layer initialization seeds are derived."""

    input_shape: Tuple[int, ...]
    layers: Tuple[LayerSpec, ...]
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))

    def output_shapes(self):
        """Per-layer output shapes (batch axis excluded).

        Raises
        ------
        ShapeError
            Naming the first layer whose declared shape does not compose
            with the shape flowing into it.
        """
        if not self.input_shape or len(self.input_shape) > 3 or min(self.input_shape) < 1:
            raise ShapeError("input shape %r must have 1 to 3 positive extents"
                             % (self.input_shape,))
        if not self.layers:
            raise ShapeError("model has no layers")
        shape = self.input_shape
        shapes = []
        for i, layer in enumerate(self.layers):
            shape = _layer_output_shape(i, layer, shape)
            shapes.append(shape)
        if len(shape) != 1:
            raise ShapeError("last layer %d (%s) must produce (batch, classes), produces %r"
                             % (len(self.layers) - 1, self.layers[-1].kind, shape))
        return shapes

    @property
    def num_classes(self):
        return self.output_shapes()[-1][0]

    def with_seed(self, seed):
        return replace(self, seed=int(seed))

    def to_dict(self):
        return {"input_shape": list(self.input_shape),
                "layers": [layer.to_list() for layer in self.layers],
                "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(input_shape=tuple(d["input_shape"]),
                   layers=tuple(LayerSpec.from_list(item) for item in d["layers"]),
                   seed=int(d.get("seed", 0)))


def _layer_output_shape(i, layer, shape):
    def fail(msg):
        raise ShapeError("layer %d (%s): %s" % (i, layer.kind, msg))

    if layer.kind == "dense":
        if layer.in_features < 1 or layer.out_features < 1:
            fail("fan-in and fan-out must be positive")
        if shape != (layer.in_features,):
            fail("expects input (%d,), receives %r" % (layer.in_features, shape))
        return (layer.out_features,)
    if layer.kind == "relu":
        return shape
    if layer.kind == "flatten":
        return (int(np.prod(shape)),)
    if layer.kind == "conv3x3":
        if layer.in_features < 1 or layer.out_features < 1:
            fail("channel counts must be positive")
        if layer.stride != 1:
            fail("only stride 1 is supported, got %d" % layer.stride)
        if layer.pad < 0:
            fail("padding must be non-negative")
        if len(shape) != 3 or shape[0] != layer.in_features:
            fail("expects input (%d, h, w), receives %r" % (layer.in_features, shape))
        h, w = shape[1] + 2 * layer.pad - 2, shape[2] + 2 * layer.pad - 2
        if h < 1 or w < 1:
            fail("input %r too small for a 3x3 kernel with pad %d" % (shape, layer.pad))
        return (layer.out_features, h, w)
    if layer.kind == "maxpool2x2":
        if len(shape) != 3 or shape[1] % 2 or shape[2] % 2:
            fail("expects (c, h, w) with even h and w, receives %r" % (shape,))
        return (shape[0], shape[1] // 2, shape[2] // 2)
    fail("unknown layer kind")


def param_count(spec):
    """Analytic parameter count: in*out + out per dense layer and
    9*in_ch*out_ch + out_ch per convolution."""
    total = 0
    for layer in spec.layers:
        if layer.kind == "dense":
            total += layer.in_features * layer.out_features + layer.out_features
        elif layer.kind == "conv3x3":
            total += 9 * layer.in_features * layer.out_features + layer.out_features
    return total


def init_params(spec):
    """He-uniform fan-in initialization for weights, zero biases.

    Each layer draws from its own generator, seeded by the layer's
    explicit ``init_seed`` or by ``(spec.seed, layer index)``.
    """
    spec.output_shapes()
    params = {}
    for i, layer in enumerate(spec.layers):
        if not layer.has_params:
            continue
        shapes = layer.param_shapes()
        seed = layer.init_seed if layer.init_seed is not None else [spec.seed, i]
        rng = np.random.default_rng(seed)
        if layer.init_scheme == "he_uniform":
            fan_in = layer.in_features * (9 if layer.kind == "conv3x3" else 1)
            limit = np.sqrt(6.0 / fan_in)
            weight = rng.uniform(-limit, limit, size=shapes["weight"])
        elif layer.init_scheme == "zeros":
            weight = np.zeros(shapes["weight"])
        elif layer.init_scheme == "identity":
            if layer.kind != "dense" or layer.in_features != layer.out_features:
                raise ShapeError("layer %d (%s): identity init needs a square dense layer"
                                 % (i, layer.kind))
            weight = np.eye(layer.in_features)
        else:
            raise ShapeError("layer %d (%s): unknown init scheme %r"
                             % (i, layer.kind, layer.init_scheme))
        params["%d.weight" % i] = weight.astype(np.float32)
        params["%d.bias" % i] = np.zeros(shapes["bias"], dtype=np.float32)
    return params


@dataclass
class ForwardCache:
    batch: np.ndarray
    inputs: List[np.ndarray]
    aux: List[object]
    output_shape: Tuple[int, ...]


class Model(object):
    """An instantiated layer stack.

    Parameters
    ----------
    spec : ModelSpec
    params : dict of str -> np.ndarray, optional
        ``"<layer>.weight"`` / ``"<layer>.bias"`` arrays. Freshly
        initialized from ``spec`` when omitted.
    role : str
        One of "teacher", "student", "snapshot".
    """

    def __init__(self, spec, params=None, role="student"):
        if role not in ROLES:
            raise ValueError("unknown model role %r (expected one of %s)" % (role, ", ".join(ROLES)))
        self.spec = spec
        self.role = role
        self.params = init_params(spec) if params is None else dict(params)
        self.cache = None
        expected = {}
        for i, layer in enumerate(spec.layers):
            for name, shape in layer.param_shapes().items():
                expected["%d.%s" % (i, name)] = shape
        if set(expected) != set(self.params):
            raise ShapeError("parameters %s do not match spec parameters %s"
                             % (sorted(self.params), sorted(expected)))
        for name, shape in expected.items():
            if tuple(self.params[name].shape) != tuple(shape):
                raise ShapeError("parameter %s has shape %r, spec declares %r"
                                 % (name, self.params[name].shape, shape))
        # Spec order, so iteration over params is deterministic.
        self.params = {name: self.params[name] for name in expected}

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype if self.params else np.dtype(np.float32)

    @property
    def num_classes(self):
        return self.spec.num_classes

    @property
    def parameter_count(self):
        return int(sum(p.size for p in self.params.values()))

    def astype(self, dtype):
        """Copy with every parameter cast to ``dtype`` (e.g. a float64 shadow)."""
        return Model(self.spec, {k: v.astype(dtype) for k, v in self.params.items()}, self.role)

    def copy(self, role=None):
        return Model(self.spec, {k: v.copy() for k, v in self.params.items()},
                     role or self.role)

    def __repr__(self):
        return "Model(role=%r, layers=%d, params=%d)" % (
            self.role, len(self.spec.layers), self.parameter_count)


def _acc(a):
    return np.asarray(a, dtype=np.float64)


def _dense_forward(model, i, layer, x):
    w, b = model.params["%d.weight" % i], model.params["%d.bias" % i]
    z = _acc(x) @ _acc(w) + _acc(b)
    return z.astype(w.dtype), None


def _dense_backward(model, i, layer, x, aux, dz):
    w = model.params["%d.weight" % i]
    dz64 = _acc(dz)
    grads = {"%d.weight" % i: (_acc(x).T @ dz64).astype(w.dtype),
             "%d.bias" % i: dz64.sum(axis=0).astype(w.dtype)}
    return (dz64 @ _acc(w).T).astype(w.dtype), grads


def _relu_forward(model, i, layer, x):
    mask = x > 0
    return np.where(mask, x, 0).astype(x.dtype), mask


def _relu_backward(model, i, layer, x, mask, dz):
    return np.where(mask, dz, 0).astype(dz.dtype), {}


def _conv_forward(model, i, layer, x):
    w, b = model.params["%d.weight" % i], model.params["%d.bias" % i]
    p = layer.pad
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    windows = sliding_window_view(xp, (3, 3), axis=(2, 3))
    z = np.einsum("nchwij,ocij->nohw", _acc(windows), _acc(w), optimize=True)
    z += _acc(b)[None, :, None, None]
    return z.astype(w.dtype), windows


def _conv_backward(model, i, layer, x, windows, dz):
    w = model.params["%d.weight" % i]
    p = layer.pad
    h, wd = x.shape[2], x.shape[3]
    dz64 = _acc(dz)
    grads = {"%d.weight" % i: np.einsum("nchwij,nohw->ocij", _acc(windows), dz64,
                                        optimize=True).astype(w.dtype),
             "%d.bias" % i: dz64.sum(axis=(0, 2, 3)).astype(w.dtype)}
    # Full correlation of the output gradient with the flipped kernel.
    dzp = np.pad(dz64, ((0, 0), (0, 0), (2, 2), (2, 2)))
    dwin = sliding_window_view(dzp, (3, 3), axis=(2, 3))
    dxp = np.einsum("nohwij,ocij->nchw", dwin, _acc(w)[:, :, ::-1, ::-1], optimize=True)
    return dxp[:, :, p:p + h, p:p + wd].astype(w.dtype), grads


def _pool_blocks(x):
    n, c, h, w = x.shape
    return (x.reshape(n, c, h // 2, 2, w // 2, 2)
             .transpose(0, 1, 2, 4, 3, 5)
             .reshape(n, c, h // 2, w // 2, 4))


def _pool_forward(model, i, layer, x):
    blocks = _pool_blocks(x)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, arg


def _pool_backward(model, i, layer, x, arg, dz):
    n, c, h, w = x.shape
    g = np.zeros((n, c, h // 2, w // 2, 4), dtype=dz.dtype)
    np.put_along_axis(g, arg[..., None], dz[..., None], axis=-1)
    dx = g.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
    return dx, {}


def _flatten_forward(model, i, layer, x):
    return x.reshape(x.shape[0], -1), None


def _flatten_backward(model, i, layer, x, aux, dz):
    return dz.reshape(x.shape), {}


_FORWARD = {"dense": _dense_forward, "relu": _relu_forward, "conv3x3": _conv_forward,
            "maxpool2x2": _pool_forward, "flatten": _flatten_forward}
_BACKWARD = {"dense": _dense_backward, "relu": _relu_backward, "conv3x3": _conv_backward,
             "maxpool2x2": _pool_backward, "flatten": _flatten_backward}


def _check_batch(model, batch):
    batch = np.asarray(batch)
    expected = model.spec.input_shape
    first = model.spec.layers[0]
    if batch.ndim != len(expected) + 1 or tuple(batch.shape[1:]) != expected:
        raise ShapeError("layer 0 (%s) expects batches of shape (n, %s), got %r"
                         % (first.kind, ", ".join(map(str, expected)), batch.shape))
    if batch.shape[0] < 1:
        raise ShapeError("layer 0 (%s) received an empty batch" % first.kind)
    if not np.all(np.isfinite(batch)):
        raise NonFiniteError("input batch contains NaN or Inf")
    return batch.astype(model.dtype, copy=False)


def forward(model, batch, keep_cache=True):
    """Logits of ``model`` on ``batch``.

    Parameters
    ----------
    model : Model
    batch : np.ndarray
        Shape ``(n,) + model.spec.input_shape``, n >= 1.
    keep_cache : bool (default: True)
        Store the activations needed by ``backward``. Inference-only
        passes (teacher outputs, scoring, evaluation) leave it off.

    Returns
    -------
    np.ndarray
        ``(n, num_classes)`` logits in the parameter dtype.
    """
    x = _check_batch(model, batch)
    inputs, aux = [], []
    for i, layer in enumerate(model.spec.layers):
        inputs.append(x)
        x, extra = _FORWARD[layer.kind](model, i, layer, x)
        aux.append(extra)
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("non-finite logits from %r" % (model,))
    if keep_cache:
        model.cache = ForwardCache(batch, inputs, aux, x.shape)
    return x


def _same_batch(cached, batch):
    if cached is batch:
        return True
    batch = np.asarray(batch)
    return cached.shape == batch.shape and np.array_equal(cached, batch)


def backward(model, batch, loss_grad):
    """Gradients of a scalar loss with respect to every parameter.

    Parameters
    ----------
    model : Model
        Must hold the cache of a forward pass on ``batch``.
    batch : np.ndarray
    loss_grad : np.ndarray
        d(loss)/d(logits), same shape as the logits.

    Returns
    -------
    dict of str -> np.ndarray
        One gradient per parameter, same names and shapes, spec order.
    """
    cache = model.cache
    if cache is None or not _same_batch(cache.batch, batch):
        raise ForwardCacheError("backward called without a forward pass on this batch")
    g = np.asarray(loss_grad, dtype=model.dtype)
    if g.shape != cache.output_shape:
        raise ShapeError("loss gradient shape %r does not match logits shape %r"
                         % (g.shape, cache.output_shape))
    grads = {}
    for i in range(len(model.spec.layers) - 1, -1, -1):
        layer = model.spec.layers[i]
        g, layer_grads = _BACKWARD[layer.kind](model, i, layer, cache.inputs[i], cache.aux[i], g)
        grads.update(layer_grads)
    return {name: grads[name] for name in model.params}


def predict_logits(model, images, batch_size=256):
    """Cache-free forward pass over a whole array, in index order."""
    images = np.asarray(images)
    if len(images) == 0:
        return np.zeros((0, model.num_classes), dtype=model.dtype)
    chunks = [forward(model, images[start:start + batch_size], keep_cache=False)
              for start in range(0, len(images), batch_size)]
    return np.concatenate(chunks, axis=0)
