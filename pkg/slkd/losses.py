# -*- coding: utf-8 -*-
"""Objective functions for supervised and distillation training.

Losses are reduced with the arithmetic mean over the batch. Every
function that the trainer differentiates has a ``*_grad`` companion
returning d(loss)/d(student logits); teacher logits never receive a
gradient.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, softmax

CE_FLOOR = 1e-12
WEIGHTING_MODES = ("additive", "convex")


@dataclass(frozen=True)
class SoftTargets:
    """Row-wise softmax of logits / temperature."""

    probs: np.ndarray
    temperature: float


@dataclass(frozen=True)
class LossBreakdown:
    ce: float
    kd: float
    total: float
    lam: float


def _check_tau(tau):
    if not tau > 0:
        raise ValueError("temperature tau must be > 0, got %r" % (tau,))


def softmax_t(logits, tau=1.0):
    """Temperature-softened softmax, max-subtracted for stability.

    Parameters
    ----------
    logits : np.ndarray
        (batch, classes).
    tau : float (default: 1.0)
        Temperature, > 0.

    Returns
    -------
    SoftTargets
        float64 probabilities.
    """
    _check_tau(tau)
    z = np.asarray(logits, dtype=np.float64) / tau
    return SoftTargets(softmax(z, axis=1), float(tau))


def _check_one_hot(labels, shape):
    labels = np.asarray(labels)
    if labels.shape != shape:
        raise ValueError("labels shape %r does not match probabilities %r" % (labels.shape, shape))
    if not (np.all((labels == 0) | (labels == 1)) and np.all(labels.sum(axis=1) == 1)):
        raise ValueError("labels must be one-hot rows")
    return labels


def cross_entropy(probs, labels):
    """Mean over the batch of -log p_true, with p clamped at 1e-12.

    Parameters
    ----------
    probs : SoftTargets or np.ndarray
    labels : np.ndarray
        One-hot rows, same shape as the probabilities.
    """
    p = probs.probs if isinstance(probs, SoftTargets) else np.asarray(probs, dtype=np.float64)
    labels = _check_one_hot(labels, p.shape)
    p_true = np.sum(p * labels, axis=1)
    return float(np.mean(-np.log(np.maximum(p_true, CE_FLOOR))))


def cross_entropy_grad(logits, labels):
    """(softmax(logits) - labels) / batch: the gradient of the mean
    cross-entropy of softmax(logits) with respect to the logits."""
    p = softmax_t(logits, 1.0).probs
    labels = _check_one_hot(labels, p.shape)
    return (p - labels) / p.shape[0]


def _check_pair(teacher_logits, student_logits):
    t = np.asarray(teacher_logits, dtype=np.float64)
    s = np.asarray(student_logits, dtype=np.float64)
    if t.shape != s.shape:
        raise ValueError("teacher logits %r and student logits %r differ in shape"
                         % (t.shape, s.shape))
    return t, s


def kd_loss(teacher_logits, student_logits, tau):
    """tau^2 * mean KL(P_T || P_S) of the temperature-softened outputs.

    The teacher distribution is the reference (first) argument of the
    divergence. Computed in log space so saturated rows stay finite.
    """
    _check_tau(tau)
    t, s = _check_pair(teacher_logits, student_logits)
    log_pt = log_softmax(t / tau, axis=1)
    log_ps = log_softmax(s / tau, axis=1)
    kl = np.sum(np.exp(log_pt) * (log_pt - log_ps), axis=1)
    # Rounding can leave identical rows a hair below zero.
    return float(tau * tau * max(np.mean(kl), 0.0))


def kd_loss_grad(teacher_logits, student_logits, tau):
    """tau * (P_S - P_T) / batch: gradient of ``kd_loss`` with respect to
    the student logits. Zero exactly when the softened distributions agree."""
    _check_tau(tau)
    t, s = _check_pair(teacher_logits, student_logits)
    return tau * (softmax(s / tau, axis=1) - softmax(t / tau, axis=1)) / t.shape[0]


def _check_lambda(lam, mode):
    if mode not in WEIGHTING_MODES:
        raise ValueError("unknown weighting mode %r (expected one of %s)"
                         % (mode, ", ".join(WEIGHTING_MODES)))
    if mode == "convex" and not 0 <= lam <= 1:
        raise ValueError("convex weighting needs lambda in [0, 1], got %r" % (lam,))
    if mode == "additive" and not lam >= 0:
        raise ValueError("additive weighting needs lambda >= 0, got %r" % (lam,))


def _weights(lam, mode):
    _check_lambda(lam, mode)
    return (1.0 - lam, lam) if mode == "convex" else (1.0, lam)


def student_loss(ce, kd, lam, mode="additive"):
    """Combined student objective.

    convex:   (1 - lambda) * ce + lambda * kd,  lambda in [0, 1]
    additive: ce + lambda * kd,                 lambda >= 0
    """
    w_ce, w_kd = _weights(lam, mode)
    return w_ce * ce + w_kd * kd


def distillation_objective(student_logits, teacher_logits, labels, lam, tau, mode="additive"):
    """Loss breakdown and gradient of ``student_loss`` for one batch.

    Returns
    -------
    (LossBreakdown, np.ndarray)
        The gradient is with respect to the student logits.
    """
    w_ce, w_kd = _weights(lam, mode)
    ce = cross_entropy(softmax_t(student_logits, 1.0), labels)
    grad = w_ce * cross_entropy_grad(student_logits, labels)
    if teacher_logits is None:
        if lam != 0:
            raise ValueError("lambda %r needs teacher logits" % (lam,))
        return LossBreakdown(ce, 0.0, student_loss(ce, 0.0, lam, mode), float(lam)), grad
    kd = kd_loss(teacher_logits, student_logits, tau)
    grad = grad + w_kd * kd_loss_grad(teacher_logits, student_logits, tau)
    return LossBreakdown(ce, kd, student_loss(ce, kd, lam, mode), float(lam)), grad


def slkd_stage_loss(student_logits, teacher_logits, labels, lam, tau=4.0):
    """Objective of one curriculum stage: CE(y, student) + lambda * KD.

    The second term is the temperature-softened, tau^2-scaled divergence
    of ``kd_loss``. The teacher entropy that separates a cross-entropy
    from a KL is constant in the student and is left out.
    """
    breakdown, _ = slkd_stage_loss_and_grad(student_logits, teacher_logits, labels, lam, tau)
    return breakdown


def slkd_stage_loss_and_grad(student_logits, teacher_logits, labels, lam, tau=4.0):
    return distillation_objective(student_logits, teacher_logits, labels, lam, tau,
                                  mode="additive")
