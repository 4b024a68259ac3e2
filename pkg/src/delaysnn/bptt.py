"""Reverse-mode differentiation through the unrolled spiking dynamics.

The spike nonlinearity contributes its surrogate derivative (or, for the
relaxed sigmoid model, the exact one). The reset term ``-alpha*theta*s`` is
differentiated through ``s`` like every other use of the spikes. Gradients of
the delay buffer flow backwards through the transposed shift: from slot ``j``
at step ``t+1`` to slot ``j-1`` at step ``t``, and from slot 0 into the
feedforward drive.
"""
from __future__ import annotations

import numpy as np

from .network import POST_UPDATE, BatchNorm, delay_drive_adjoint, LayerCache, LayerParams, Network, ReadoutCache, Tape

__all__ = ["cell_backward", "layer_backward", "readout_backward", "bptt_backward"]


def cell_backward(cache: LayerCache, p: LayerParams, g_s: np.ndarray, g_u: np.ndarray | None = None):
    """Backpropagate through the neuron recurrence of one layer.

    ``g_s`` is dL/ds for the pre-dropout spikes [T, B, h]; ``g_u`` optionally
    adds a direct loss gradient on the membrane trajectory ``cache.u``.
    Returns dL/dff [T, B, h] and a dict of parameter gradients.
    """
    spec = cache.spec
    T, B, h = cache.s.shape
    n_d = spec.n_d
    adaptive = spec.model.adaptive
    post = spec.delay_timing == POST_UPDATE
    theta = cache.theta
    alpha = p.alpha
    reset = alpha * theta
    u_hist, w_hist, s_hist, ds_hist, is_hist = cache.u, cache.w, cache.s, cache.ds, cache.i_s

    g_ff = np.empty((T, B, h))
    g_alpha = np.zeros(h)
    g_beta = np.zeros(h) if adaptive else None
    g_a = np.zeros(h) if adaptive else None
    g_b = np.zeros(h) if adaptive else None
    g_V = np.zeros((h, h)) if spec.recurrent else None
    g_asd = None
    # gu_hist[t] = dL/du[t+1], the gradient reaching the delay read-out added at step t
    gu_hist = np.empty((T, B, h)) if n_d else None

    gu_next = np.zeros((B, h))
    gw_next = np.zeros((B, h)) if adaptive else None
    for t in range(T - 1, -1, -1):
        s_t = s_hist[t]
        u_t = u_hist[t]
        g_is = (1.0 - alpha) * gu_next
        g_ff_t = g_is.copy()
        g_st = g_s[t] - reset * gu_next
        if adaptive:
            w_t = w_hist[t]
            g_st = g_st + p.b * gw_next
            g_alpha += (gu_next * (u_t - is_hist[t] + w_t - theta * s_t)).sum(axis=0)
            g_a += (gw_next * u_t).sum(axis=0)
            g_beta += (gw_next * w_t).sum(axis=0)
            g_b += (gw_next * s_t).sum(axis=0)
        else:
            g_alpha += (gu_next * (u_t - is_hist[t] - theta * s_t)).sum(axis=0)
        if g_V is not None:
            g_st = g_st + g_is @ p.V
            g_V += g_is.T @ s_t
        if n_d:
            gu_hist[t] = gu_next
        g_ff[t] = g_ff_t
        gu_t = alpha * gu_next + g_st * ds_hist[t]
        if g_u is not None:
            gu_t = gu_t + g_u[t]
        if adaptive:
            gu_t = gu_t + p.a * gw_next
            gw_next = -(1.0 - alpha) * gu_next + p.beta * gw_next
        gu_next = gu_t

    if n_d:
        g_delay, g_asd = delay_drive_adjoint(gu_hist, cache.ff, p.asd, 0 if post else 1)
        g_ff += g_delay
    grads = {"alpha": g_alpha}
    if adaptive:
        grads.update(beta=g_beta, a=g_a, b=g_b)
    if g_V is not None:
        np.fill_diagonal(g_V, 0.0)
        grads["V"] = g_V
    if g_asd is not None:
        grads["asd"] = g_asd
    return g_ff, grads


def layer_backward(cache: LayerCache, p: LayerParams, bn: BatchNorm | None, g_out: np.ndarray):
    """Gradient of a full hidden layer; returns (dL/dx [T, B, h_prev], grads)."""
    T, B, h = cache.s.shape
    g_s = g_out if cache.mask is None else g_out * cache.mask
    g_ff, grads = cell_backward(cache, p, g_s)
    g_pre = g_ff.reshape(T * B, h)
    if bn is not None:
        g_pre, g_gamma, g_bias = bn.backward(cache.bn_cache, g_pre)
        grads["bn.gamma"] = g_gamma
        grads["bn.bias"] = g_bias
    x2 = cache.x.reshape(T * B, -1)
    grads["W"] = g_pre.T @ x2
    g_x = (g_pre @ p.W).reshape(T, B, -1)
    return g_x, grads


def readout_backward(W_out: np.ndarray, bn_out: BatchNorm | None, cache: ReadoutCache, dlogits: np.ndarray):
    T, B, h = cache.spikes.shape
    c_out = W_out.shape[0]
    g_y = np.broadcast_to(dlogits / T, (T, B, c_out)).reshape(T * B, c_out)
    grads = {}
    if bn_out is not None:
        g_y, grads["bn.gamma"], grads["bn.bias"] = bn_out.backward(cache.bn_cache, g_y)
    s2 = cache.spikes.reshape(T * B, h)
    grads["W"] = g_y.T @ s2
    g_spikes = (g_y @ W_out).reshape(T, B, h)
    return g_spikes, grads


def bptt_backward(net: Network, tape: Tape, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients for every entry of ``net.parameters()`` given dL/dlogits [B, c_out].

    Coefficient rows of frozen delay schemes get no entry.
    """
    if dlogits.shape != (tape.batch, net.spec.c_out):
        raise ValueError(f"dlogits has shape {dlogits.shape}, expected {(tape.batch, net.spec.c_out)}")
    if len(tape.layers) != len(net.layers):
        raise ValueError("tape does not match the network depth")
    out: dict[str, np.ndarray] = {}
    g, rgrads = readout_backward(net.W_out, net.bn_out, tape.readout, dlogits)
    for k, v in rgrads.items():
        out["readout." + k] = v
    for i in range(len(net.layers) - 1, -1, -1):
        ls = net.spec.layers[i]
        g, lgrads = layer_backward(tape.layers[i], net.layers[i], net.bns[i], g)
        for k, v in lgrads.items():
            if k == "asd" and not ls.scheme.trainable:
                continue
            out[f"layers.{i}.{k}"] = v
    return out
