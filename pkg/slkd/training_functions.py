# -*- coding: utf-8 -*-
"""Parameter update rules and the step learning-rate schedule.

Both optimizers update ``model.params`` in place and return the model
together with the (also updated) optimizer state, so a training loop
reads as ``model, state = sgd_step(model, grads, ...)``.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from slkd.nn_core import NonFiniteError

logger = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    """Per-parameter optimizer buffers.

    ``slots`` maps a buffer name ("velocity" for SGD, "m"/"v" for Adam)
    to a dict of arrays keyed like ``model.params``. ``step`` counts
    completed updates.
    """

    kind: str
    step: int = 0
    slots: Dict[str, Dict[str, np.ndarray]] = field(default_factory=dict)

    def buffer(self, slot, name, like):
        bank = self.slots.setdefault(slot, {})
        if name not in bank:
            bank[name] = np.zeros_like(like)
        return bank[name]


def _check_grads(model, grads):
    if set(grads) != set(model.params):
        raise ValueError("gradients %s do not match parameters %s"
                         % (sorted(grads), sorted(model.params)))
    for name, g in grads.items():
        if g.shape != model.params[name].shape:
            raise ValueError("gradient %s has shape %r, parameter has %r"
                             % (name, g.shape, model.params[name].shape))
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite gradient for %s; step aborted" % name)


def sgd_step(model, grads, lr, momentum=0.9, weight_decay=0.0, state=None):
    """One SGD-with-momentum update.

    v <- momentum * v + grad + weight_decay * param
    param <- param - lr * v

    Parameters
    ----------
    model : nn_core.Model
    grads : dict of str -> np.ndarray
    lr : float
        Must be > 0.
    momentum : float (default: 0.9)
        In [0, 1).
    weight_decay : float (default: 0.0)
        Must be >= 0.
    state : OptimizerState or None
        A fresh state (zero velocity) is created when None.

    Returns
    -------
    (Model, OptimizerState)
    """
    if not lr > 0:
        raise ValueError("lr must be > 0, got %r" % (lr,))
    if not 0 <= momentum < 1:
        raise ValueError("momentum must be in [0, 1), got %r" % (momentum,))
    if not weight_decay >= 0:
        raise ValueError("weight_decay must be >= 0, got %r" % (weight_decay,))
    state = state or OptimizerState("sgd")
    if state.kind != "sgd":
        raise ValueError("optimizer state is for %r, not sgd" % state.kind)
    _check_grads(model, grads)
    for name, param in model.params.items():
        v = state.buffer("velocity", name, param)
        v *= momentum
        v += grads[name]
        if weight_decay:
            v += weight_decay * param
        param -= lr * v
    state.step += 1
    return model, state


def adam_step(model, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8, state=None,
              weight_decay=0.0):
    """One Adam update with bias-corrected first and second moments.

    m <- beta1 * m + (1 - beta1) * g
    v <- beta2 * v + (1 - beta2) * g**2
    param <- param - lr * m_hat / (sqrt(v_hat) + eps)

    ``weight_decay`` adds an L2 term to the gradient before the moments.
    """
    if not lr > 0:
        raise ValueError("lr must be > 0, got %r" % (lr,))
    if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
        raise ValueError("betas must be in [0, 1), got %r, %r" % (beta1, beta2))
    if not eps > 0:
        raise ValueError("eps must be > 0, got %r" % (eps,))
    state = state or OptimizerState("adam")
    if state.kind != "adam":
        raise ValueError("optimizer state is for %r, not adam" % state.kind)
    _check_grads(model, grads)
    t = state.step + 1
    for name, param in model.params.items():
        g = grads[name]
        if weight_decay:
            g = g + weight_decay * param
        m = state.buffer("m", name, param)
        v = state.buffer("v", name, param)
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * np.square(g)
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        param -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.dtype)
    state.step = t
    return model, state


def optimizer_step(model, grads, lr, optimizer, state=None):
    """Dispatch on an ``OptimizerConfig`` (see ``slkd.config``)."""
    if optimizer.kind == "sgd":
        return sgd_step(model, grads, lr, optimizer.momentum, optimizer.weight_decay, state)
    if optimizer.kind == "adam":
        return adam_step(model, grads, lr, optimizer.beta1, optimizer.beta2, optimizer.eps,
                         state, weight_decay=optimizer.weight_decay)
    raise ValueError("unknown optimizer %r" % optimizer.kind)


def lr_at(base_lr, schedule, epoch):
    """Learning rate in effect at ``epoch`` (1-based): the base rate times
    every multiplier whose boundary epoch is <= ``epoch``."""
    lr = base_lr
    for boundary, multiplier in schedule:
        if boundary <= epoch:
            lr *= multiplier
    return lr
