"""Class-balanced (adaptive-weight) cross-entropy over H x W x 3 maps, with its gradient.

Each pixel is weighted by lambda of its true class, lambda_c = N / N_c
(0 for empty classes), and the sum is divided by 3HW.
"""
from __future__ import annotations

import numpy as np

N_CLASSES = 3


def as_one_hot(labels) -> np.ndarray:
    """Accept an (..., H, W) class-index map or an (..., H, W, 3) one-hot tensor."""
    labels = np.asarray(labels)
    if labels.ndim >= 3 and labels.shape[-1] == N_CLASSES and np.issubdtype(labels.dtype, np.floating):
        if not np.all((labels == 0) | (labels == 1)) or not np.all(labels.sum(axis=-1) == 1):
            raise ValueError("one-hot labels need exactly one 1 per pixel")
        return labels.astype(np.float64)
    if np.issubdtype(labels.dtype, np.floating) and not np.all(labels == np.round(labels)):
        raise ValueError("class indices must be integers")
    idx = labels.astype(np.int64)
    if idx.min(initial=0) < 0 or idx.max(initial=0) >= N_CLASSES:
        raise ValueError("class indices must be 0, 1 or 2")
    return np.eye(N_CLASSES)[idx]


def class_counts(one_hot: np.ndarray) -> np.ndarray:
    return one_hot.reshape(-1, N_CLASSES).sum(axis=0)


def penalty_weights(counts) -> np.ndarray:
    """lambda_c = sum(N) / N_c for N_c > 0, else 0."""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    with np.errstate(divide="ignore"):
        return np.where(counts > 0, total / np.where(counts > 0, counts, 1.0), 0.0)


def adaptive_weight_mask(labels, per_batch: bool = False) -> np.ndarray:
    """M[..., i, j, k] = lambda(class k) where the one-hot label is 1, else 0.

    Weights are computed per sample (per map) unless `per_batch` pools the
    counts over a leading batch axis.
    """
    one_hot = as_one_hot(labels)
    if one_hot.ndim == 3 or per_batch:
        lam = penalty_weights(class_counts(one_hot))
        return one_hot * lam
    lam = np.stack([penalty_weights(class_counts(s)) for s in one_hot])
    return one_hot * lam[:, None, None, :]


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _check(pred, labels):
    pred = np.asarray(pred, dtype=np.float64)
    one_hot = as_one_hot(labels)
    if pred.shape != one_hot.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match labels {one_hot.shape}")
    if not np.all(np.isfinite(pred)):
        raise ValueError("logits must be finite")
    return pred, one_hot


def _norm(shape) -> float:
    # 3HW per map; a batch is averaged over its maps
    h, w = shape[-3], shape[-2]
    b = int(np.prod(shape[:-3])) if len(shape) > 3 else 1
    return 3.0 * h * w * b


def weighted_ce_loss(pred, labels, per_batch: bool = False) -> float:
    """L = -1/(3HW) * sum M * Psi * log softmax(pred)."""
    pred, one_hot = _check(pred, labels)
    mask = adaptive_weight_mask(one_hot, per_batch)
    return float(-(mask * one_hot * log_softmax(pred)).sum() / _norm(pred.shape))


def weighted_ce_grad(pred, labels, per_batch: bool = False) -> np.ndarray:
    """dL/dpred = lambda(pixel class) * (softmax - Psi) / (3HW)."""
    pred, one_hot = _check(pred, labels)
    mask = adaptive_weight_mask(one_hot, per_batch)
    lam = mask.sum(axis=-1, keepdims=True)
    prob = np.exp(log_softmax(pred))
    return lam * (prob - one_hot) / _norm(pred.shape)


def finite_difference_check(pred, labels, h: float = 1e-4, floor: float = 1e-8, per_batch: bool = False) -> dict:
    """Compare the analytic gradient with central differences, element by element.

    Relative error is |a - n| / max(|a|, |n|, floor).
    """
    pred, one_hot = _check(pred, labels)
    analytic = weighted_ce_grad(pred, one_hot, per_batch)
    numeric = np.empty_like(pred)
    flat = pred.reshape(-1)
    out = numeric.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = weighted_ce_loss(pred, one_hot, per_batch)
        flat[i] = keep - h
        down = weighted_ce_loss(pred, one_hot, per_batch)
        flat[i] = keep
        out[i] = (up - down) / (2 * h)
    rel = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return {"max_abs_error": float(np.abs(analytic - numeric).max()), "max_rel_error": float(rel.max()),
            "analytic": analytic, "numeric": numeric}
