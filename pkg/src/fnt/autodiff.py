"""Minimal reverse-mode differentiation core.

Dense float64 tensors, the handful of primitives the transducer models
need (matmul, relu, log_softmax, gated recurrent step, gather/concat
plumbing), and a tape that replays gradient rules in reverse order of
execution.  Everything is numpy underneath; there is no broadcasting
magic beyond what the model equations use.

Conventions:
  * all arrays are float64; primitives raise NonFiniteError if an op
    produces NaN/Inf,
  * relu subgradient at 0 is 0,
  * tensors are immutable after creation; Parameters are mutated only by
    ``backward`` and optimizer steps.
"""
from __future__ import annotations

import math

import numpy as np


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested primitive."""


class NonFiniteError(FloatingPointError):
    """A primitive produced NaN or Inf."""


def _as_f64(data) -> np.ndarray:
    return np.asarray(data, dtype=np.float64)


def _checked(data: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"non-finite values produced by {op}")
    return data


class Tensor:
    """Immutable dense float64 array with shape metadata."""

    __slots__ = ("data",)

    def __init__(self, data):
        self.data = _as_f64(data)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape})"


class Parameter(Tensor):
    """Named leaf tensor with a gradient slot of identical shape."""

    __slots__ = ("name", "grad")

    def __init__(self, name: str, value):
        super().__init__(value)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


class Tape:
    """Ordered record of executed primitives.

    Records are appended at execution time, so the list order is a
    topological order of the forward graph; ``backward`` walks it once in
    reverse.
    """

    __slots__ = ("_records", "_outputs")

    def __init__(self):
        self._records = []
        self._outputs = set()

    def record(self, out: Tensor, inputs: tuple, backward_fn) -> None:
        """Register ``out = f(inputs)`` with its gradient rule.

        ``backward_fn(g_out)`` must return one gradient array (or None)
        per entry of ``inputs``.
        """
        self._records.append((out, inputs, backward_fn))
        self._outputs.add(id(out))

    def __len__(self):
        return len(self._records)

    def produced(self, t: Tensor) -> bool:
        return id(t) in self._outputs


def backward(tape: Tape, loss: Tensor, params=()) -> None:
    """Populate ``p.grad`` with d(loss)/dp for every parameter.

    Parameters in ``params`` that the loss does not reach get an exactly
    zero gradient.  ``loss`` must be a scalar produced on ``tape``.
    """
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    if not tape.produced(loss):
        raise ValueError("loss tensor was not produced on this tape")

    grads = {id(loss): np.ones_like(loss.data)}
    reached = {}
    for out, inputs, backward_fn in reversed(tape._records):
        g_out = grads.pop(id(out), None)
        if g_out is None:
            continue
        for inp, g_in in zip(inputs, backward_fn(g_out)):
            if g_in is None:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + g_in
            else:
                grads[key] = g_in
            if isinstance(inp, Parameter):
                reached[key] = inp

    by_id = {id(p): p for p in params}
    by_id.update(reached)
    for key, p in by_id.items():
        g = grads.get(key)
        p.grad = np.zeros_like(p.data) if g is None else g.reshape(p.data.shape)


# ---------------------------------------------------------------------------
# raw numpy helpers shared by taped ops and inference fast paths


def np_log_softmax(x: np.ndarray) -> np.ndarray:
    """Stable log-softmax along the last axis."""
    m = x.max(axis=-1, keepdims=True)
    shifted = x - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def np_sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form is stable for large |x|
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def logsumexp(values) -> float:
    """log sum exp of a nonempty sequence of log-values; -inf entries allowed."""
    arr = _as_f64(values)
    if arr.size == 0:
        raise ValueError("logsumexp of empty sequence")
    m = float(arr.max())
    if m == -math.inf:
        return -math.inf
    return m + math.log(float(np.exp(arr - m).sum()))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """``a @ b`` where a is (..., k) and b is (k, n)."""
    if b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} x {b.shape}")
    out = Tensor(_checked(a.data @ b.data, "matmul"))
    if tape is not None:
        a_data, b_data = a.data, b.data

        def bw(g):
            ga = g @ b_data.T
            g2 = g.reshape(-1, b_data.shape[1])
            a2 = a_data.reshape(-1, b_data.shape[0])
            return ga.reshape(a_data.shape), a2.T @ g2

        tape.record(out, (a, b), bw)
    return out


def add(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(_checked(a.data + b.data, "add"))
    if tape is not None:
        sa, sb = a.shape, b.shape
        tape.record(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))
    return out


def sub(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(_checked(a.data - b.data, "sub"))
    if tape is not None:
        sa, sb = a.shape, b.shape
        tape.record(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))
    return out


def mul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(_checked(a.data * b.data, "mul"))
    if tape is not None:
        a_data, b_data, sa, sb = a.data, b.data, a.shape, b.shape
        tape.record(
            out,
            (a, b),
            lambda g: (_unbroadcast(g * b_data, sa), _unbroadcast(g * a_data, sb)),
        )
    return out


def scale(a: Tensor, c: float, tape: Tape | None = None) -> Tensor:
    out = Tensor(_checked(a.data * c, "scale"))
    if tape is not None:
        tape.record(out, (a,), lambda g: (g * c,))
    return out


def neg(a: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(-a.data)
    if tape is not None:
        tape.record(out, (a,), lambda g: (-g,))
    return out


def relu(x: Tensor, tape: Tape | None = None) -> Tensor:
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0.0))
    if tape is not None:
        tape.record(out, (x,), lambda g: (g * mask,))
    return out


def sigmoid(x: Tensor, tape: Tape | None = None) -> Tensor:
    s = np_sigmoid(x.data)
    out = Tensor(s)
    if tape is not None:
        tape.record(out, (x,), lambda g: (g * s * (1.0 - s),))
    return out


def tanh(x: Tensor, tape: Tape | None = None) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y)
    if tape is not None:
        tape.record(out, (x,), lambda g: (g * (1.0 - y * y),))
    return out


def log_softmax(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Log-softmax along the last axis; exp of rows sums to 1."""
    if x.shape[-1] < 1:
        raise ShapeError("log_softmax needs a nonempty last axis")
    y = np_log_softmax(x.data)
    out = Tensor(_checked(y, "log_softmax"))
    if tape is not None:
        tape.record(
            out, (x,), lambda g: (g - np.exp(y) * g.sum(axis=-1, keepdims=True),)
        )
    return out


def tsum(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Sum of all elements (scalar output)."""
    out = Tensor(x.data.sum())
    if tape is not None:
        shape = x.shape
        tape.record(out, (x,), lambda g: (np.full(shape, float(g)),))
    return out


def pick(x: Tensor, idx, tape: Tape | None = None) -> Tensor:
    """Select ``x[i, idx[i]]`` per row of a 2-D tensor."""
    idx = np.asarray(idx, dtype=np.int64)
    if x.ndim != 2 or idx.ndim != 1 or idx.shape[0] != x.shape[0]:
        raise ShapeError(f"pick: {x.shape} with index {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[1]):
        raise IndexError("pick index out of range")
    rows = np.arange(x.shape[0])
    out = Tensor(x.data[rows, idx])
    if tape is not None:
        shape = x.shape

        def bw(g):
            gx = np.zeros(shape)
            np.add.at(gx, (rows, idx), g)
            return (gx,)

        tape.record(out, (x,), bw)
    return out


def take_rows(table: Tensor, ids, tape: Tape | None = None) -> Tensor:
    """Embedding lookup: rows of ``table`` at integer ``ids``."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError("row id out of range")
    out = Tensor(table.data[ids])
    if tape is not None:
        shape = table.shape

        def bw(g):
            gt = np.zeros(shape)
            np.add.at(gt, ids, g)
            return (gt,)

        tape.record(out, (table,), bw)
    return out


def concat_last(parts, tape: Tape | None = None) -> Tensor:
    """Concatenate tensors along the last axis."""
    parts = tuple(parts)
    out = Tensor(np.concatenate([p.data for p in parts], axis=-1))
    if tape is not None:
        sizes = [p.shape[-1] for p in parts]
        splits = np.cumsum(sizes)[:-1]
        tape.record(out, parts, lambda g: tuple(np.split(g, splits, axis=-1)))
    return out


def stack_rows(rows, tape: Tape | None = None) -> Tensor:
    """Stack equal-shape tensors along a new leading axis."""
    rows = tuple(rows)
    if not rows:
        raise ShapeError("stack_rows of empty sequence")
    out = Tensor(np.stack([r.data for r in rows], axis=0))
    if tape is not None:
        tape.record(out, rows, lambda g: tuple(g[i] for i in range(len(rows))))
    return out


def reshape(x: Tensor, shape, tape: Tape | None = None) -> Tensor:
    out = Tensor(x.data.reshape(shape))
    if tape is not None:
        old = x.shape
        tape.record(out, (x,), lambda g: (g.reshape(old),))
    return out


# ---------------------------------------------------------------------------
# recurrent cell


def uniform_init(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.uniform(-0.1, 0.1, size=shape)


class GRUCell:
    """Single-gate gated recurrent cell (update gate + candidate).

        z  = sigmoid(x Wz + h Uz + bz)
        c  = tanh(x Wc + h Uc + bc)
        h' = h + z * (c - h)
    """

    def __init__(self, prefix: str, input_dim: int, hidden_dim: int, rng):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        mk = lambda n, shape: Parameter(f"{prefix}.{n}", uniform_init(rng, shape))
        self.wz = mk("wz", (input_dim, hidden_dim))
        self.uz = mk("uz", (hidden_dim, hidden_dim))
        self.bz = mk("bz", (hidden_dim,))
        self.wc = mk("wc", (input_dim, hidden_dim))
        self.uc = mk("uc", (hidden_dim, hidden_dim))
        self.bc = mk("bc", (hidden_dim,))

    def parameters(self):
        return [self.wz, self.uz, self.bz, self.wc, self.uc, self.bc]

    def zero_state(self) -> Tensor:
        return Tensor(np.zeros(self.hidden_dim))

    def step(self, x: Tensor, h: Tensor, tape: Tape | None = None) -> Tensor:
        if x.shape != (self.input_dim,) or h.shape != (self.hidden_dim,):
            raise ShapeError(
                f"recurrent step: x {x.shape}, state {h.shape}, "
                f"cell ({self.input_dim}, {self.hidden_dim})"
            )
        z = sigmoid(add(add(matmul(x, self.wz, tape), matmul(h, self.uz, tape), tape), self.bz, tape), tape)
        c = tanh(add(add(matmul(x, self.wc, tape), matmul(h, self.uc, tape), tape), self.bc, tape), tape)
        return add(h, mul(z, sub(c, h, tape), tape), tape)

    def step_np(self, x: np.ndarray, h: np.ndarray) -> np.ndarray:
        """Inference fast path; same arithmetic as ``step`` without taping."""
        z = np_sigmoid(x @ self.wz.data + h @ self.uz.data + self.bz.data)
        c = np.tanh(x @ self.wc.data + h @ self.uc.data + self.bc.data)
        return h + z * (c - h)


def recurrent_step(cell: GRUCell, x_t: Tensor, state: Tensor, tape: Tape | None = None):
    """One step of the gated recurrent cell: returns (output, new state)."""
    h = cell.step(x_t, state, tape)
    return h, h
