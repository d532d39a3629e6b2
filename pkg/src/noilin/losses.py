"""Training objectives on logits."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


def _check_labels(logits: Tensor, labels) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if logits.values.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"labels of shape {labels.shape} do not match logits {logits.shape}")
    c = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in [0, {c})")
    return labels


def cross_entropy_per_sample(logits, labels) -> Tensor:
    logits = T.as_tensor(logits)
    labels = _check_labels(logits, labels)
    return T.mul(T.take_rows(T.log_softmax(logits), labels), -1.0)


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels``."""
    return T.mean(cross_entropy_per_sample(logits, labels))


def kl_divergence_per_sample(p_logits, q_logits) -> Tensor:
    p_logits, q_logits = T.as_tensor(p_logits), T.as_tensor(q_logits)
    if p_logits.shape != q_logits.shape:
        raise ShapeError(f"kl_divergence: shapes {p_logits.shape} and {q_logits.shape} differ")
    log_p = T.log_softmax(p_logits)
    log_q = T.log_softmax(q_logits)
    p = T.softmax(p_logits)
    return T.sum(T.mul(p, T.sub(log_p, log_q)), axis=1)


def kl_divergence(p_logits, q_logits) -> Tensor:
    """Batch mean of KL(softmax(p) || softmax(q))."""
    return T.mean(kl_divergence_per_sample(p_logits, q_logits))


def trades_loss(model, x_nat, x_adv, y, beta: float = 6.0) -> Tensor:
    """CE on natural logits plus ``beta`` times KL(f(x_nat) || f(x_adv))."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    x_nat, x_adv = T.as_tensor(x_nat), T.as_tensor(x_adv)
    if x_nat.shape != x_adv.shape:
        raise ShapeError(f"natural batch {x_nat.shape} and adversarial batch {x_adv.shape} differ")
    nat = model(x_nat)
    adv = model(x_adv)
    return T.add(cross_entropy(nat, y), T.mul(kl_divergence(nat, adv), float(beta)))


def smooth_label(y: int, num_classes: int, rho: float) -> np.ndarray:
    if num_classes < 2:
        raise ValueError("label smoothing needs at least two classes")
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"rho must lie in [0, 1), got {rho}")
    if not 0 <= y < num_classes:
        raise ValueError(f"label {y} outside [0, {num_classes})")
    out = np.full(num_classes, rho / (num_classes - 1))
    out[y] = 1.0 - rho
    return out


def smooth_labels(labels, num_classes: int, rho: float) -> np.ndarray:
    return np.stack([smooth_label(int(y), num_classes, rho) for y in labels]) if len(labels) else np.zeros((0, num_classes))


def soft_cross_entropy_per_sample(logits, target) -> Tensor:
    logits = T.as_tensor(logits)
    target = np.asarray(target, dtype=np.float64)
    if target.shape != logits.shape:
        raise ShapeError(f"target shape {target.shape} does not match logits {logits.shape}")
    if np.any(target < 0) or not np.allclose(target.sum(axis=1), 1.0, rtol=0, atol=1e-9):
        raise ValueError("target rows must be non-negative and sum to 1")
    return T.mul(T.sum(T.mul(T.log_softmax(logits), Tensor(target)), axis=1), -1.0)


def soft_cross_entropy(logits, target) -> Tensor:
    """Mean of -sum_j target_j log softmax(logits)_j."""
    return T.mean(soft_cross_entropy_per_sample(logits, target))
