"""Softmax, cross-entropy and the mimicry (distillation) loss.

The distillation term weights the teacher's log-probabilities by the
student's tempered distribution, ``L_C(H(s/T), H(t/T))``. That is the
argument order used by the method this package implements; the more common
convention swaps the two.
"""

from __future__ import annotations

import numpy as np

PROB_FLOOR = 1e-12


def softmax(v, T: float = 1.0) -> np.ndarray:
    """Row-wise softmax of ``v / T`` with max subtraction."""
    if T <= 0:
        raise ValueError("temperature must be positive")
    z = np.asarray(v, dtype=float) / T
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(v, T: float = 1.0) -> np.ndarray:
    z = np.asarray(v) / T
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(y, p) -> float | np.ndarray:
    """``-sum_k y_k log p_k`` along the last axis, with ``p`` clamped at 1e-12."""
    y = np.asarray(y, dtype=float)
    p = np.maximum(np.asarray(p, dtype=float), PROB_FLOOR)
    out = -(y * np.log(p)).sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def distillation_loss(y, s, t, alpha: float, T: float) -> float | np.ndarray:
    """``(1-a) L_C(y, H(s)) + a T^2 L_C(H(s/T), H(t/T))`` for one example or a batch of rows."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    hard = cross_entropy(y, softmax(s, 1.0))
    if alpha == 0.0:
        return hard
    soft = cross_entropy(softmax(s, T), softmax(t, T))
    return (1.0 - alpha) * hard + alpha * T * T * soft


def supervised_loss_and_grad(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over a batch of integer labels and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    logp = log_softmax(logits)
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def distillation_loss_and_grad(
    logits: np.ndarray,
    labels: np.ndarray,
    teacher_logits: np.ndarray,
    alpha: float,
    T: float,
) -> tuple[float, np.ndarray]:
    """Batch-mean mimicry loss and its gradient w.r.t. the student logits."""
    n = logits.shape[0]
    hard, g_hard = supervised_loss_and_grad(logits, labels)
    p = softmax(logits, T)
    c = -np.log(np.maximum(softmax(teacher_logits, T), PROB_FLOOR))
    per_row = (p * c).sum(axis=1)
    soft = per_row.mean()
    # d/ds_j sum_k p_k c_k = p_j (c_j - sum_k p_k c_k) / T
    g_soft = p * (c - per_row[:, None]) / T / n
    loss = (1.0 - alpha) * hard + alpha * T * T * soft
    grad = (1.0 - alpha) * g_hard + alpha * T * T * g_soft
    return float(loss), grad.astype(logits.dtype, copy=False)
