"""Pure-Python fallback for the alignment-lattice kernels.

Same recurrences and the same logadd arithmetic as the compiled Cython
module; used when the extension is unavailable or when the
FT_LATTICE_BACKEND environment variable forces it.
"""
from __future__ import annotations

import math

import numpy as np

NEG_INF = -math.inf


def _logadd(x: float, y: float) -> float:
    if x == NEG_INF:
        return y
    if y == NEG_INF:
        return x
    if x < y:
        x, y = y, x
    return x + math.log1p(math.exp(y - x))


def forward_alphas(logp: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Log forward variables over the (T, U+1) grid.

    alpha[t, u] is the log-probability of all partial alignments that have
    consumed t frames and emitted the first u target labels.
    """
    T, U1, _ = logp.shape
    U = U1 - 1
    a = np.full((T, U1), NEG_INF)
    a[0, 0] = 0.0
    for t in range(1, T):
        a[t, 0] = a[t - 1, 0] + logp[t - 1, 0, 0]
    for u in range(1, U1):
        a[0, u] = a[0, u - 1] + logp[0, u - 1, targets[u - 1]]
    for t in range(1, T):
        row = a[t]
        prev = a[t - 1]
        for u in range(1, U1):
            row[u] = _logadd(
                prev[u] + logp[t - 1, u, 0],
                row[u - 1] + logp[t, u - 1, targets[u - 1]],
            )
    return a


def backward_betas(logp: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Log backward variables on a (T+1, U+1) grid.

    beta[t, u] is the log-probability of completing the alignment from the
    state "t frames consumed, u labels emitted", before any emission at
    (t, u).  Row T is the terminal row: 0 at (T, U), -inf elsewhere.
    """
    T = logp.shape[0]
    U = logp.shape[1] - 1
    b = np.full((T + 1, U + 1), NEG_INF)
    b[T, U] = 0.0
    for t in range(T - 1, -1, -1):
        b[t, U] = logp[t, U, 0] + b[t + 1, U]
        for u in range(U - 1, -1, -1):
            b[t, u] = _logadd(
                logp[t, u, 0] + b[t + 1, u],
                logp[t, u, targets[u]] + b[t, u + 1],
            )
    return b


def loss_only(logp: np.ndarray, targets: np.ndarray) -> float:
    T = logp.shape[0]
    U = logp.shape[1] - 1
    a = forward_alphas(logp, targets)
    return -(a[T - 1, U] + logp[T - 1, U, 0])


def loss_and_grad(logp: np.ndarray, targets: np.ndarray):
    """Negative alignment-marginal log-probability and its gradient.

    Returns ``(loss, grad)`` with grad of the loss w.r.t. every entry of
    ``logp``; nonzero only at the blank slot and at the next target label.
    """
    T = logp.shape[0]
    U = logp.shape[1] - 1
    a = forward_alphas(logp, targets)
    b = backward_betas(logp, targets)
    log_z = b[0, 0]
    if log_z == NEG_INF:
        raise ValueError("alignment set has zero probability")
    grad = np.zeros_like(logp)
    grad[:, :, 0] = -np.exp(a + logp[:, :, 0] + b[1:, :] - log_z)
    for u in range(U):
        grad[:, u, targets[u]] = -np.exp(
            a[:, u] + logp[:, u, targets[u]] + b[:T, u + 1] - log_z
        )
    return -log_z, grad
