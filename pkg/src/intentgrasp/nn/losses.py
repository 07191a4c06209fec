from __future__ import annotations

import numpy as np


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.moveaxis(np.asarray(logits, dtype=np.float64), axis, -1)
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    # the max term contributes exactly 1; log1p keeps precision when the rest is tiny
    np.put_along_axis(e, np.argmax(shifted, axis=-1)[..., None], 0.0, axis=-1)
    out = shifted - np.log1p(np.sum(e, axis=-1, keepdims=True))
    return np.moveaxis(out, -1, axis)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    p = np.exp(log_softmax(logits, axis=axis))
    return p / p.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits, label: int) -> tuple[float, np.ndarray]:
    """Loss ``-log p[label]`` and the probability vector for one sample."""
    z = np.asarray(logits, dtype=np.float64).ravel()
    if not 0 <= int(label) < z.size:
        raise ValueError(f"label {label} out of range for {z.size} classes")
    logp = log_softmax(z)
    return float(-logp[int(label)]), softmax(z)


def nll_from_logprobs(logp: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood over a batch and its gradient w.r.t. ``logp``.

    ``logp`` is ``(N, n)`` log-probabilities (output of a softmax head),
    ``labels`` are 0-based class indices.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = logp.shape[0]
    if labels.shape != (n,):
        raise ValueError("one label per row is required")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= logp.shape[1]:
        raise ValueError("label out of range")
    rows = np.arange(n)
    loss = float(-logp[rows, labels].mean())
    grad = np.zeros_like(logp)
    grad[rows, labels] = -1.0 / n
    return loss, grad
