"""Compiled vs pure-Python lattice kernel equivalence."""
import numpy as np
import pytest

import fnt.lattice as lattice

try:
    compiled = lattice.kernels("compiled")
    HAVE_COMPILED = True
except ImportError:
    HAVE_COMPILED = False

pure = lattice.kernels("python")

needs_compiled = pytest.mark.skipif(
    not HAVE_COMPILED, reason="compiled lattice extension not built"
)


def test_active_backend_is_reported():
    assert lattice.BACKEND in ("compiled", "python")


@needs_compiled
def test_backends_agree_on_loss_and_grad():
    rng = np.random.default_rng(123)
    for _ in range(50):
        T = int(rng.integers(1, 12))
        U = int(rng.integers(0, 6))
        V = int(rng.integers(1, 8))
        lat = lattice.random_lattice(rng, T, U, V)
        targets = lat.target_array()
        loss_c, grad_c = compiled.loss_and_grad(lat.logp, targets)
        loss_p, grad_p = pure.loss_and_grad(lat.logp, targets)
        assert abs(loss_c - loss_p) <= 1e-12 * max(1.0, abs(loss_p))
        np.testing.assert_allclose(grad_c, grad_p, rtol=0, atol=1e-12)


@needs_compiled
def test_backends_agree_on_alphas_and_betas():
    rng = np.random.default_rng(321)
    for _ in range(20):
        lat = lattice.random_lattice(
            rng, int(rng.integers(1, 10)), int(rng.integers(0, 5)), 4
        )
        targets = lat.target_array()
        np.testing.assert_allclose(
            compiled.forward_alphas(lat.logp, targets),
            pure.forward_alphas(lat.logp, targets),
            rtol=0,
            atol=1e-12,
        )
        np.testing.assert_allclose(
            compiled.backward_betas(lat.logp, targets),
            pure.backward_betas(lat.logp, targets),
            rtol=0,
            atol=1e-12,
        )


def test_alpha_beta_consistency():
    # total path mass from the forward pass equals the backward pass root
    rng = np.random.default_rng(11)
    for _ in range(20):
        lat = lattice.random_lattice(
            rng, int(rng.integers(1, 8)), int(rng.integers(0, 5)), 3
        )
        targets = lat.target_array()
        a = pure.forward_alphas(lat.logp, targets)
        b = pure.backward_betas(lat.logp, targets)
        total = a[lat.T - 1, lat.U] + lat.logp[lat.T - 1, lat.U, 0]
        assert b[0, 0] == pytest.approx(total, abs=1e-10)
