import math

import numpy as np
import pytest

from fnt import lattice
from fnt.lattice import (
    AlignmentPath,
    LatticeLogProbs,
    brute_force_loss,
    collapse_alignment,
    enumerate_alignments,
    forward_alphas,
    loss_and_grad,
    random_lattice,
    transducer_loss,
    transducer_loss_grad,
    uniform_lattice,
)

C, A, T_ = 4, 5, 6  # arbitrary vocabulary ids for the "C A T" example


def closed_form_uniform_loss(T, U, V):
    # with uniform rows every path scores (V+1)^-(T+U) and there are
    # C(T-1+U, U) monotone paths
    return -math.log(math.comb(T - 1 + U, U)) + (T + U) * math.log(V + 1)


def test_collapse_cat_example():
    path = AlignmentPath(tokens=(0, C, 0, A, 0, T_))
    assert collapse_alignment(path) == (C, A, T_)


def test_collapse_degenerate():
    assert collapse_alignment((0, 0, 0)) == ()
    assert collapse_alignment((C, A, T_)) == (C, A, T_)


def test_alpha_base_case():
    lat = random_lattice(np.random.default_rng(0), 1, 0, 2)
    a = forward_alphas(lat)
    assert a.shape == (1, 1)
    assert a[0, 0] == 0.0


def test_alpha_two_frame_uniform():
    # T=2, U=1, uniform over 2 symbols: two partial paths of two steps each
    lat = uniform_lattice(2, 1, 1)
    a = forward_alphas(lat)
    assert a[1, 1] == pytest.approx(-math.log(2), abs=1e-12)


def test_alpha_mass_bounded():
    # prefixes of a fixed length n partition by cell along the anti-diagonal
    # t+u = n, so each anti-diagonal carries at most unit probability
    # (row sums are NOT bounded: a path crosses one row at several cells)
    rng = np.random.default_rng(42)
    for _ in range(20):
        T = int(rng.integers(1, 5))
        U = int(rng.integers(0, 4))
        lat = random_lattice(rng, T, U, int(rng.integers(1, 4)))
        mass = np.exp(forward_alphas(lat))
        for n in range(T + U + 1):
            diag = sum(
                mass[t, n - t] for t in range(T) if 0 <= n - t <= U
            )
            assert diag <= 1.0 + 1e-9


def test_loss_single_alignment():
    lat = random_lattice(np.random.default_rng(1), 1, 1, 3)
    want = -(lat.logp[0, 0, lat.targets[0]] + lat.logp[0, 1, 0])
    assert transducer_loss(lat) == pytest.approx(want, abs=1e-12)


@pytest.mark.parametrize("T", range(1, 6))
@pytest.mark.parametrize("U", range(0, 5))
@pytest.mark.parametrize("V", [1, 2, 3])
def test_loss_uniform_closed_form(T, U, V):
    lat = uniform_lattice(T, U, V)
    assert transducer_loss(lat) == pytest.approx(
        closed_form_uniform_loss(T, U, V), abs=1e-9
    )


def test_loss_matches_brute_force_on_random_lattices():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        T = int(rng.integers(1, 5))
        U = int(rng.integers(0, 4))
        V = int(rng.integers(1, 4))
        lat = random_lattice(rng, T, U, V)
        assert abs(transducer_loss(lat) - brute_force_loss(lat)) < 1e-9


def test_loss_nonnegative():
    rng = np.random.default_rng(3)
    for _ in range(20):
        lat = random_lattice(rng, int(rng.integers(1, 6)), int(rng.integers(0, 4)), 3)
        assert transducer_loss(lat) >= -1e-12


def test_brute_force_path_counts():
    lat = random_lattice(np.random.default_rng(4), 2, 1, 2)
    paths = list(enumerate_alignments(lat.T, lat.targets))
    assert len(paths) == 2

    lat0 = random_lattice(np.random.default_rng(5), 3, 0, 2)
    paths0 = list(enumerate_alignments(lat0.T, lat0.targets))
    assert len(paths0) == 1
    assert paths0[0].tokens == (0, 0, 0)


def test_brute_force_guard():
    lat = uniform_lattice(10, 3, 1)
    with pytest.raises(ValueError):
        brute_force_loss(lat)


def test_enumerated_paths_are_valid_alignments():
    rng = np.random.default_rng(6)
    lat = random_lattice(rng, 3, 2, 3)
    paths = list(enumerate_alignments(lat.T, lat.targets))
    assert len(paths) == math.comb(lat.T - 1 + lat.U, lat.U)
    for p in paths:
        assert len(p.tokens) == lat.T + lat.U
        assert p.blank_count() == lat.T
        assert p.labels() == lat.targets


def test_grad_single_path_occupancy_one():
    lat = random_lattice(np.random.default_rng(7), 1, 1, 3)
    grad = transducer_loss_grad(lat)
    want = np.zeros_like(lat.logp)
    want[0, 0, lat.targets[0]] = -1.0
    want[0, 1, 0] = -1.0
    np.testing.assert_allclose(grad, want, atol=1e-12)


def test_grad_matches_finite_differences():
    rng = np.random.default_rng(8)
    for _ in range(5):
        T = int(rng.integers(2, 5))
        U = int(rng.integers(1, 4))
        V = int(rng.integers(1, 4))
        lat = random_lattice(rng, T, U, V)
        _, grad = loss_and_grad(lat)
        eps = 1e-5
        # perturb raw entries; the loss is defined on the raw array so the
        # row-normalization constraint does not apply to the derivative
        for _ in range(15):
            t = int(rng.integers(0, T))
            u = int(rng.integers(0, U + 1))
            k = int(rng.integers(0, V + 1))
            bumped = lat.logp.copy()
            bumped[t, u, k] += eps
            up = lattice.kernels().loss_only(bumped, lat.target_array())
            bumped[t, u, k] -= 2 * eps
            down = lattice.kernels().loss_only(bumped, lat.target_array())
            numeric = (up - down) / (2 * eps)
            denom = max(1.0, abs(numeric))
            assert abs(grad[t, u, k] - numeric) / denom < 1e-5


def test_grad_total_occupancy():
    rng = np.random.default_rng(9)
    for _ in range(20):
        T = int(rng.integers(1, 6))
        U = int(rng.integers(0, 5))
        lat = random_lattice(rng, T, U, 3)
        _, grad = loss_and_grad(lat)
        assert -grad.sum() == pytest.approx(T + U, abs=1e-6)


def test_grad_zero_outside_blank_and_target_slots():
    lat = random_lattice(np.random.default_rng(10), 3, 2, 3)
    grad = transducer_loss_grad(lat)
    for u in range(lat.U + 1):
        allowed = {0} | ({lat.targets[u]} if u < lat.U else set())
        for k in range(lat.V + 1):
            if k not in allowed:
                assert (grad[:, u, k] == 0.0).all()


def test_empty_target_loss_is_blank_run():
    lat = random_lattice(np.random.default_rng(11), 4, 0, 2)
    want = -lat.logp[:, 0, 0].sum()
    assert transducer_loss(lat) == pytest.approx(want, abs=1e-12)


def test_lattice_validation():
    bad = np.zeros((2, 2, 3))  # rows not normalized
    with pytest.raises(ValueError):
        LatticeLogProbs(logp=bad, targets=(1,))
    lat = uniform_lattice(2, 1, 2)
    with pytest.raises(ValueError):
        LatticeLogProbs(logp=lat.logp, targets=(0,))  # blank is not a target
    with pytest.raises(ValueError):
        LatticeLogProbs(logp=lat.logp, targets=(5,))  # out of vocabulary
    with pytest.raises(ValueError):
        LatticeLogProbs(logp=lat.logp, targets=(1, 2))  # wrong target count
