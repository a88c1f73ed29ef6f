"""Softmax and the mean cross-entropy objective."""

from typing import Sequence, Union

import numpy as np

from app.utils.error_handler import InvalidParameterError, ShapeError


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis, stabilized by max-subtraction."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(
    logits: np.ndarray, labels: Union[int, Sequence[int], np.ndarray]
) -> tuple[float, np.ndarray]:
    """
    Mean cross-entropy of softmax(logits) against integer labels.

    A 1-D logits vector is treated as a batch of one and its gradient is
    returned 1-D as well.

    Args:
        logits: (N, o) or (o,) raw scores
        labels: N class indices (or one index)

    Returns:
        (loss, dLoss/dLogits) where loss = mean(-log p[label]) and the
        gradient is (softmax - one_hot) / N
    """
    single = logits.ndim == 1
    batch = np.atleast_2d(logits)
    targets = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n, classes = batch.shape
    if classes < 2:
        raise ShapeError(f"need at least 2 classes, got {classes}")
    if len(targets) != n:
        raise ShapeError(f"{len(targets)} labels for {n} rows of logits")
    if targets.min() < 0 or targets.max() >= classes:
        raise InvalidParameterError(f"labels must lie in [0, {classes})")

    shifted = batch - batch.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_z - shifted[rows, targets]))

    grad = np.exp(shifted - log_z[:, None])
    grad[rows, targets] -= 1.0
    grad /= n
    return loss, grad[0] if single else grad
