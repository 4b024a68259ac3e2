"""Loss, training epochs, evaluation and the finite-difference gradient check."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass

import numpy as np

from .augment import augment_batch
from .bptt import bptt_backward
from .core import RngStream, finite_diff_grad
from .network import Network, NetworkSpec
from .optim import CLIP_RANGES, OptimState, adamw_update, clip_neuron_params, cosine_lr

__all__ = [
    "TrainConfig",
    "cross_entropy",
    "softmax_cross_entropy",
    "train_epoch",
    "evaluate",
    "fit",
    "check_clip_ranges",
    "gradient_check",
]

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    base_lr: float = 1e-2
    weight_decay: float = 1e-5
    dropout: float = 0.4
    batch_size: int = 128
    epochs: int = 50
    seed: int = 0
    augment: bool = True
    mask_prob: float = 0.5
    mask_time_frac: float = 0.1
    mask_chan_frac: float = 0.1
    cutmix_prob: float = 0.5
    debug_checks: bool = False


def cross_entropy(logits: np.ndarray, label: int):
    """Loss and gradient for a single logit vector."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.shape[0]:
        raise ValueError(f"label {label} out of range for {logits.shape[0]} classes")
    z = logits - logits.max()
    e = np.exp(z)
    p = e / e.sum()
    loss = float(np.log(e.sum()) - z[label])
    d = p.copy()
    d[label] -= 1.0
    return loss, d


def softmax_cross_entropy(logits: np.ndarray, targets: np.ndarray):
    """Mean cross-entropy over a batch.

    ``targets`` is either integer labels [B] or soft label rows [B, C].
    Returns ``(loss, dL/dlogits)``.
    """
    B, C = logits.shape
    if targets.ndim == 1:
        if targets.min() < 0 or targets.max() >= C:
            raise ValueError("label out of range")
        soft = np.zeros((B, C))
        soft[np.arange(B), targets] = 1.0
    else:
        soft = targets
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    loss = float(-(soft * logp).sum() / B)
    return loss, (np.exp(logp) - soft) / B


def check_clip_ranges(net: Network) -> None:
    for i, p in enumerate(net.layers):
        for name, (lo, hi) in CLIP_RANGES.items():
            arr = getattr(p, name)
            if arr is not None and (arr.min() < lo or arr.max() > hi):
                raise AssertionError(f"layer {i} {name} left [{lo}, {hi}]")


def _batches(n: int, batch_size: int, order: np.ndarray):
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train_epoch(net: Network, opt: OptimState, frames: np.ndarray, labels: np.ndarray,
                config: TrainConfig, epoch: int, rng: RngStream, step_hook=None) -> dict:
    """One pass over the training set with shuffling, augmentation, BPTT,
    AdamW and clipping. ``step_hook(net)`` runs after every optimizer step."""
    n = len(labels)
    if n == 0:
        raise ValueError("empty training set")
    lr = cosine_lr(epoch, config.epochs, opt.lr_base)
    n_classes = net.spec.c_out
    params = net.parameters()
    total_loss = 0.0
    correct = 0
    t0 = time.perf_counter()
    for bi, idx in enumerate(_batches(n, config.batch_size, rng.permutation(n))):
        x, y = frames[idx], labels[idx]
        if config.augment:
            x, target = augment_batch(x, y, n_classes, rng, config.mask_prob, config.mask_time_frac,
                                      config.mask_chan_frac, config.cutmix_prob)
        else:
            target = y
        logits, tape = net.forward(x, training=True, rng=rng)
        loss, dlogits = softmax_cross_entropy(logits, target)
        if not np.isfinite(loss):
            raise FloatingPointError(
                f"non-finite loss at epoch {epoch} batch {bi}: "
                f"max |logit| {np.abs(logits).max() if np.isfinite(logits).any() else 'nan'}")
        grads = bptt_backward(net, tape, dlogits)
        adamw_update(opt, params, grads, lr)
        clip_neuron_params(net)
        for p in net.layers:
            if p.V is not None:
                np.fill_diagonal(p.V, 0.0)
        if config.debug_checks:
            check_clip_ranges(net)
        if step_hook is not None:
            step_hook(net)
        total_loss += loss * len(idx)
        correct += int((logits.argmax(axis=1) == y).sum())
    return {"loss": total_loss / n, "accuracy": correct / n, "seconds": time.perf_counter() - t0, "lr": lr}


def evaluate(net: Network, frames: np.ndarray, labels: np.ndarray, batch_size: int = 256) -> dict:
    """Inference-mode loss and top-1 accuracy."""
    n = len(labels)
    if n == 0:
        raise ValueError("empty evaluation set")
    t0 = time.perf_counter()
    total_loss = 0.0
    correct = 0
    for idx in _batches(n, batch_size, np.arange(n)):
        logits, _ = net.forward(frames[idx], training=False)
        loss, _ = softmax_cross_entropy(logits, labels[idx])
        total_loss += loss * len(idx)
        correct += int((logits.argmax(axis=1) == labels[idx]).sum())
    return {"loss": total_loss / n, "accuracy": correct / n, "seconds": time.perf_counter() - t0}


def fit(net: Network, train, test, config: TrainConfig, metrics_path=None, step_hook=None) -> list[dict]:
    """Train for ``config.epochs`` epochs; ``train``/``test`` are (frames, labels)
    pairs. Writes one JSON line per epoch to ``metrics_path`` when given."""
    rng = RngStream(config.seed).spawn(1)
    opt = OptimState(lr_base=config.base_lr, weight_decay=config.weight_decay)
    history = []
    sink = open(metrics_path, "a") if metrics_path else None
    try:
        for epoch in range(config.epochs):
            tr = train_epoch(net, opt, train[0], train[1], config, epoch, rng, step_hook)
            te = evaluate(net, test[0], test[1]) if test is not None else None
            row = {
                "epoch": epoch,
                "lr": tr["lr"],
                "train_loss": tr["loss"],
                "train_acc": tr["accuracy"],
                "test_acc": te["accuracy"] if te else None,
                "seconds": tr["seconds"],
            }
            history.append(row)
            log.info("epoch %d lr %.3g loss %.4f train %.3f test %s (%.1fs)", epoch, row["lr"],
                     row["train_loss"], row["train_acc"], row["test_acc"], row["seconds"])
            if sink:
                sink.write(json.dumps(row) + "\n")
                sink.flush()
    finally:
        if sink:
            sink.close()
    return history


def gradient_check(spec: NetworkSpec, batch: int = 3, T: int = 10, seed: int = 0,
                   eps: float = 1e-6) -> dict[str, float]:
    """Compare BPTT with central differences on the relaxed (sigmoid) twin.

    Returns, per parameter group, ``max|g_bptt - g_fd| / max|g_fd|``.
    Dropout is disabled; batch norm runs in training mode.
    """
    spec = NetworkSpec.from_dict({**spec.to_dict(), "spike_mode": "sigmoid", "dropout_rate": 0.0})
    rng = RngStream(seed)
    net = Network(spec, rng.spawn(0))
    data_rng = rng.spawn(1)
    x = (data_rng.random((batch, T, spec.c_in)) < 0.3).astype(np.float64)
    y = data_rng.integers(0, spec.c_out, batch)

    def loss_only() -> float:
        logits, _ = net.forward(x, training=True)
        return softmax_cross_entropy(logits, y)[0]

    logits, tape = net.forward(x, training=True)
    _, dlogits = softmax_cross_entropy(logits, y)
    grads = bptt_backward(net, tape, dlogits)
    errors = {}
    for name, arr in net.parameters().items():
        mask = net.trainable_mask(name)
        saved = arr.copy()

        def f(v, arr=arr, mask=mask):
            arr[...] = v if mask is None else np.where(mask, v, 0.0)
            try:
                return loss_only()
            finally:
                arr[...] = saved

        fd = finite_diff_grad(f, saved, eps)
        if mask is not None:
            fd = np.where(mask, fd, 0.0)
        scale = np.abs(fd).max()
        diff = np.abs(grads[name] - fd).max()
        errors[name] = float(diff / scale) if scale > 0 else float(diff)
    return errors
