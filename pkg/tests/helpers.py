"""Shared test utilities: finite-difference gradient oracle."""
import numpy as np


def numeric_grad(loss_fn, param, eps=1e-5):
    """Central finite differences of ``loss_fn()`` w.r.t. every entry of param."""
    flat = param.data.reshape(-1)
    g = np.zeros(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = loss_fn()
        flat[i] = orig - eps
        down = loss_fn()
        flat[i] = orig
        g[i] = (up - down) / (2.0 * eps)
    return g.reshape(param.data.shape)


def assert_grad_close(analytic, numeric, tol=1e-4):
    """Elementwise |a - n| <= tol * (1 + |n|)."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    err = np.abs(analytic - numeric) / (1.0 + np.abs(numeric))
    assert err.max() <= tol, f"gradient mismatch, worst rel err {err.max():g}"
