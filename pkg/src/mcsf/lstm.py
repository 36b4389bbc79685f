"""Batched LSTM and bidirectional LSTM with hand-written backpropagation.

Gate layout along the 4h axis is (input, forget, candidate, output).  Every
sequence starts from zero hidden and cell state.  The core routines take a
leading axis ``S`` of independent weight sets so both directions of a
bidirectional layer advance in the same time loop.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit as sigmoid


def lstm_forward(x, W, U, b):
    """Run ``S`` independent LSTMs.

    x: (S, B, L, d_in); W: (S, 4h, d_in); U: (S, 4h, h); b: (S, 4h).  Any of
    them may carry extra leading axes, which broadcast (the finite-difference
    oracle uses this to evaluate many perturbed weight sets at once).
    Returns hidden states (..., S, B, L, h) and the cache for :func:`lstm_backward`.
    """
    h = U.shape[-1]
    Wt = np.swapaxes(W, -1, -2)[..., None, :, :]
    zin = x @ Wt + b[..., None, None, :]
    Ut = np.swapaxes(U, -1, -2)
    lead = np.broadcast_shapes(zin.shape[:-2], U.shape[:-2] + (1,))
    L = zin.shape[-2]
    zin = np.broadcast_to(zin, lead + zin.shape[-2:])
    hs = np.zeros(lead + (L + 1, h))
    cs = np.zeros(lead + (L + 1, h))
    gates = np.empty(lead + (L, 4 * h))
    for t in range(L):
        z = zin[..., t, :] + hs[..., t, :] @ Ut
        a = gates[..., t, :]
        sigmoid(z, out=a)
        a[..., 2 * h:3 * h] = np.tanh(z[..., 2 * h:3 * h])
        cs[..., t + 1, :] = a[..., h:2 * h] * cs[..., t, :] + a[..., :h] * a[..., 2 * h:3 * h]
        hs[..., t + 1, :] = a[..., 3 * h:] * np.tanh(cs[..., t + 1, :])
    return hs[..., 1:, :], (x, W, U, hs, cs, gates)


def lstm_backward(dH, cache):
    """Backpropagation through time for an unbatched (S, B, L, .) forward.

    Returns (dx, dW, dU, db), each with the leading S axis.
    """
    x, W, U, hs, cs, gates = cache
    S, B, L, h = dH.shape
    dZ = np.empty((S, B, L, 4 * h))
    dh_next = np.zeros((S, B, h))
    dc_next = np.zeros((S, B, h))
    for t in reversed(range(L)):
        a = gates[:, :, t]
        i, f, g, o = a[..., :h], a[..., h:2 * h], a[..., 2 * h:3 * h], a[..., 3 * h:]
        tc = np.tanh(cs[:, :, t + 1])
        dh = dH[:, :, t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz = dZ[:, :, t]
        dz[..., :h] = dc * g * i * (1.0 - i)
        dz[..., h:2 * h] = dc * cs[:, :, t] * f * (1.0 - f)
        dz[..., 2 * h:3 * h] = dc * i * (1.0 - g * g)
        dz[..., 3 * h:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = dz @ U
    flat = dZ.reshape(S, B * L, 4 * h)
    dW = flat.transpose(0, 2, 1) @ x.reshape(S, B * L, -1)
    dU = flat.transpose(0, 2, 1) @ hs[:, :, :-1].reshape(S, B * L, h)
    db = flat.sum(axis=1)
    dx = dZ @ W[:, None]
    return dx, dW, dU, db


def stack_broadcast(arrays, axis):
    return np.stack(np.broadcast_arrays(*arrays), axis=axis)


def bilstm_forward(x, fwd, bwd):
    """``fwd``/``bwd`` are (W, U, b) triples; x is (..., B, L, d).

    Output (..., B, L, 2h): [forward | backward] hidden states per step.
    """
    xs = stack_broadcast([x, x[..., ::-1, :]], axis=-4)
    W = stack_broadcast([fwd[0], bwd[0]], axis=-3)
    U = stack_broadcast([fwd[1], bwd[1]], axis=-3)
    b = stack_broadcast([fwd[2], bwd[2]], axis=-2)
    H, cache = lstm_forward(xs, W, U, b)
    return np.concatenate([H[..., 0, :, :, :], H[..., 1, :, ::-1, :]], axis=-1), cache


def bilstm_backward(dH, cache):
    """Returns (dx, fwd grads (dW, dU, db), bwd grads (dW, dU, db))."""
    h = dH.shape[2] // 2
    dHs = np.stack([dH[:, :, :h], dH[:, ::-1, h:]])
    dx, dW, dU, db = lstm_backward(dHs, cache)
    return dx[0] + dx[1, :, ::-1], (dW[0], dU[0], db[0]), (dW[1], dU[1], db[1])
