"""Exact transducer alignment-lattice loss.

Log-space forward-backward over the (T+1) x (U+1) alignment grid, the
analytic gradient w.r.t. the per-(t, u) output log-probabilities, and a
brute-force enumeration oracle for small grids.

Grid convention: a path consumes one frame per blank and one target label
per non-blank, and always terminates with the blank that consumes the last
frame after the last label.  The last axis of ``logp`` holds the blank at
index 0 and vocabulary tokens at indices 1..V.

The inner kernels have a compiled (Cython) implementation and a
pure-Python fallback with identical arithmetic.  Selection happens at
import time; set FT_LATTICE_BACKEND=python or =compiled to force one.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

_choice = os.environ.get("FT_LATTICE_BACKEND", "auto").lower()
if _choice in ("auto", "compiled"):
    try:
        from fnt.lattice import _kernels as _impl

        BACKEND = "compiled"
    except ImportError:
        if _choice == "compiled":
            raise ImportError(
                "FT_LATTICE_BACKEND=compiled but the extension is not built; "
                "run `pip install -e . --no-build-isolation`"
            )
        from fnt.lattice import _kernels_py as _impl

        BACKEND = "python"
elif _choice == "python":
    from fnt.lattice import _kernels_py as _impl

    BACKEND = "python"
else:
    raise ValueError(f"bad FT_LATTICE_BACKEND value: {_choice!r}")

BLANK = 0

# enumeration guard: number of paths is C(T-1+U, U)
MAX_BRUTE_FORCE_SYMBOLS = 12


def kernels(name: str | None = None):
    """Kernel module for ``name`` ('compiled' or 'python'); default: active."""
    if name is None:
        return _impl
    if name == "python":
        from fnt.lattice import _kernels_py

        return _kernels_py
    if name == "compiled":
        from fnt.lattice import _kernels

        return _kernels
    raise ValueError(f"unknown backend {name!r}")


@dataclass(frozen=True)
class LatticeLogProbs:
    """Per-(t, u) output log-distributions over {blank} + vocabulary.

    ``logp`` has shape (T, U+1, V+1); every (t, u) row must exponentiate
    and sum to 1 within 1e-9.  ``targets`` are token ids in 1..V.
    ``node`` optionally carries the autodiff tensor this array came from.
    """

    logp: np.ndarray
    targets: tuple
    node: object = field(default=None, compare=False)

    def __post_init__(self):
        logp = np.ascontiguousarray(self.logp, dtype=np.float64)
        object.__setattr__(self, "logp", logp)
        object.__setattr__(self, "targets", tuple(int(y) for y in self.targets))
        if logp.ndim != 3 or logp.shape[0] < 1:
            raise ValueError(f"logp must be (T>=1, U+1, V+1), got {logp.shape}")
        if logp.shape[1] != len(self.targets) + 1:
            raise ValueError(
                f"label axis {logp.shape[1]} != U+1 for {len(self.targets)} targets"
            )
        if any(not (1 <= y <= self.V) for y in self.targets):
            raise ValueError(f"target ids must lie in [1, {self.V}]")
        row_lse = _np_logsumexp_last(logp)
        worst = float(np.abs(row_lse).max())
        if worst > 1e-9:
            raise ValueError(f"rows are not log-normalized (|logsumexp|={worst:g})")

    @property
    def T(self) -> int:
        return self.logp.shape[0]

    @property
    def U(self) -> int:
        return self.logp.shape[1] - 1

    @property
    def V(self) -> int:
        return self.logp.shape[2] - 1

    def target_array(self) -> np.ndarray:
        return np.asarray(self.targets, dtype=np.int64)


@dataclass(frozen=True)
class AlignmentPath:
    """Length T+U symbol sequence over {blank} + vocabulary."""

    tokens: tuple

    def blank_count(self) -> int:
        return sum(1 for s in self.tokens if s == BLANK)

    def labels(self) -> tuple:
        return collapse_alignment(self.tokens)


def _np_logsumexp_last(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(x - m).sum(axis=-1, keepdims=True)))[..., 0]


def collapse_alignment(path) -> tuple:
    """Remove every blank from an alignment, keeping label order."""
    tokens = path.tokens if isinstance(path, AlignmentPath) else path
    return tuple(s for s in tokens if s != BLANK)


def forward_alphas(lat: LatticeLogProbs) -> np.ndarray:
    """Log forward variables, shape (T, U+1); alpha[0, 0] = 0."""
    return _impl.forward_alphas(lat.logp, lat.target_array())


def transducer_loss(lat: LatticeLogProbs) -> float:
    """Negative log-probability of the target sequence over all alignments."""
    return float(_impl.loss_only(lat.logp, lat.target_array()))


def transducer_loss_grad(lat: LatticeLogProbs) -> np.ndarray:
    """Gradient of the loss w.r.t. every entry of ``lat.logp``."""
    return loss_and_grad(lat)[1]


def loss_and_grad(lat: LatticeLogProbs):
    """(loss, gradient) in one forward-backward pass."""
    loss, grad = _impl.loss_and_grad(lat.logp, lat.target_array())
    return float(loss), grad


def enumerate_alignments(T: int, targets):
    """Yield every monotone alignment for T frames and the given labels."""
    targets = tuple(targets)
    U = len(targets)

    def walk(t, u, prefix):
        if t == T and u == U:
            yield AlignmentPath(tokens=prefix)
            return
        if t < T:
            yield from walk(t + 1, u, prefix + (BLANK,))
            if u < U:
                yield from walk(t, u + 1, prefix + (targets[u],))

    yield from walk(0, 0, ())


def brute_force_loss(lat: LatticeLogProbs) -> float:
    """Loss by explicit enumeration of the alignment preimage set.

    Guarded to T+U <= 12; the path count C(T-1+U, U) explodes beyond that.
    """
    T, U = lat.T, lat.U
    if T + U > MAX_BRUTE_FORCE_SYMBOLS:
        raise ValueError(f"T+U={T + U} exceeds enumeration guard {MAX_BRUTE_FORCE_SYMBOLS}")
    logp = lat.logp
    targets = lat.targets
    scores = []

    def walk(t, u, acc):
        if t == T and u == U:
            scores.append(acc)
            return
        if t < T:
            walk(t + 1, u, acc + logp[t, u, BLANK])
            if u < U:
                walk(t, u + 1, acc + logp[t, u, targets[u]])

    walk(0, 0, 0.0)
    m = max(scores)
    if m == -math.inf:
        return math.inf
    total = m + math.log(sum(math.exp(s - m) for s in scores))
    return -total


def random_lattice(rng: np.random.Generator, T: int, U: int, V: int) -> LatticeLogProbs:
    """Seeded random lattice with properly normalized rows (test/bench helper)."""
    raw = rng.normal(size=(T, U + 1, V + 1))
    logp = raw - _np_logsumexp_last(raw)[..., None]
    targets = rng.integers(1, V + 1, size=U)
    return LatticeLogProbs(logp=logp, targets=tuple(int(y) for y in targets))


def uniform_lattice(T: int, U: int, V: int, targets=None) -> LatticeLogProbs:
    """Lattice whose every row is the uniform distribution over V+1 symbols."""
    logp = np.full((T, U + 1, V + 1), -math.log(V + 1))
    if targets is None:
        targets = tuple(1 + (i % V) for i in range(U))
    return LatticeLogProbs(logp=logp, targets=tuple(targets))
