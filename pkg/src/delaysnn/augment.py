"""Training-time augmentation of framed event data: time/channel masking and
temporal CutMix."""
from __future__ import annotations

import numpy as np

from .core import RngStream

__all__ = ["augment_mask", "augment_cutmix", "augment_batch"]


def augment_mask(frames: np.ndarray, rng: RngStream, prob: float = 0.5,
                 time_frac: float = 0.1, chan_frac: float = 0.1) -> np.ndarray:
    """Zero random time rows and channel columns of a [T, C] frame tensor.

    Each of the two masks is applied independently with probability ``prob``
    and covers ``round(frac * size)`` distinct rows or columns.
    """
    out = frames.copy()
    T, C = frames.shape
    if rng.random() < prob:
        k = int(round(time_frac * T))
        if k:
            out[rng.choice(T, k), :] = 0.0
    if rng.random() < prob:
        k = int(round(chan_frac * C))
        if k:
            out[:, rng.choice(C, k)] = 0.0
    return out


def augment_cutmix(a: np.ndarray, b: np.ndarray, label_a: int, label_b: int, n_classes: int,
                   rng: RngStream, lam: float | None = None):
    """Paste a contiguous time segment of ``b`` into ``a``.

    The segment covers ``round(lam * T)`` frames (``lam ~ U[0, 1)`` unless
    given) at a uniformly drawn start; the soft label weights follow the
    number of frames actually taken from each sample.
    """
    if a.shape != b.shape:
        raise ValueError(f"cutmix needs equal shapes, got {a.shape} and {b.shape}")
    T = a.shape[0]
    if lam is None:
        lam = float(rng.random())
    n = int(round(lam * T))
    start = int(rng.integers(0, T - n + 1))
    out = a.copy()
    out[start:start + n] = b[start:start + n]
    frac = n / T
    label = np.zeros(n_classes)
    label[label_a] += 1.0 - frac
    label[label_b] += frac
    return out, label


def augment_batch(frames: np.ndarray, labels: np.ndarray, n_classes: int, rng: RngStream,
                  mask_prob: float = 0.5, time_frac: float = 0.1, chan_frac: float = 0.1,
                  cutmix_prob: float = 0.5):
    """Augment a batch [B, T, C]; returns frames and soft labels [B, n_classes]."""
    B = frames.shape[0]
    out = np.empty_like(frames)
    soft = np.zeros((B, n_classes))
    soft[np.arange(B), labels] = 1.0
    for i in range(B):
        x = frames[i]
        if cutmix_prob > 0 and B > 1 and rng.random() < cutmix_prob:
            j = int(rng.integers(0, B))
            x, soft[i] = augment_cutmix(x, frames[j], int(labels[i]), int(labels[j]), n_classes, rng)
        out[i] = augment_mask(x, rng, mask_prob, time_frac, chan_frac) if mask_prob > 0 else x
    return out, soft
