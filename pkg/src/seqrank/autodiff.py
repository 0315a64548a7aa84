"""Reverse-mode automatic differentiation over dense 2-d arrays.

Every value on the tape is a row-major ``(rows, cols)`` numpy array wrapped
in a :class:`Tensor`.  Calling an op builds a node whose backward closure
scatters the incoming gradient to the parents; ``Tensor.backward`` walks the
graph once in reverse topological order.  Only the operations the ranking
pipeline actually needs exist here -- there is no general broadcasting
(beyond row/column expansion of size-1 axes) and no rank above 2.

Gradients accumulate in ``Tensor.grad`` and are never cleared implicitly,
so parameter leaves can collect contributions across several graphs until
the optimizer consumes them.
"""
from __future__ import annotations

import math

import numpy as np


# ---------------------------------------------------------------------------
# stable scalar / array kernels
# ---------------------------------------------------------------------------

def sigmoid(x: float) -> float:
    """Numerically stable logistic function for a finite scalar.

    The computation is split on the sign of ``x`` so neither branch ever
    exponentiates a positive number; inputs with magnitude up to 500 stay
    finite and monotone.
    """
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"sigmoid: input must be finite, got {x!r}")
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def softplus(x: float) -> float:
    """log(1 + e^x) without overflow for large |x|."""
    x = float(x)
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def log_sigmoid(x: float) -> float:
    """log(sigmoid(x)), fused so large negative inputs do not round to log(0)."""
    return -softplus(-float(x))


def sigmoid_array(x: np.ndarray) -> np.ndarray:
    """Sign-split logistic applied elementwise to an array."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# the tape
# ---------------------------------------------------------------------------

class Tensor:
    """A 2-d value on the autodiff tape."""

    __slots__ = ("data", "grad", "_parents", "_bw")

    def __init__(self, data, parents=(), bw=None):
        arr = np.asarray(data)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ValueError(f"Tensor must be 2-d, got shape {arr.shape}")
        self.data = arr
        self.grad = None
        self._parents = parents
        self._bw = bw

    # -- niceties ---------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single entry, shape is {self.shape}")
        return float(self.data.reshape(())[()])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"

    @staticmethod
    def const(data, dtype=None) -> "Tensor":
        arr = np.asarray(data, dtype=dtype)
        return Tensor(arr.copy())

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)

    # -- backward ----------------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable ``grad``.

        ``self`` must hold a single entry (a scalar loss).
        """
        if self.data.size != 1:
            raise ValueError("backward() expects a scalar node")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        for node in topo:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
        self.grad = self.grad + np.ones_like(self.data)
        for node in reversed(topo):
            if node._bw is not None:
                node._bw(node.grad)


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Sum ``g`` back down to ``shape`` along axes that were expanded."""
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, (a, b))

    def bw(g):
        a.grad += g @ b.data.T
        b.grad += a.data.T @ g

    out._bw = bw
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, (a, b))

    def bw(g):
        a.grad += _unbroadcast(g, a.shape)
        b.grad += _unbroadcast(g, b.shape)

    out._bw = bw
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data, (a, b))

    def bw(g):
        a.grad += _unbroadcast(g, a.shape)
        b.grad -= _unbroadcast(g, b.shape)

    out._bw = bw
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data, (a, b))

    def bw(g):
        a.grad += _unbroadcast(g * b.data, a.shape)
        b.grad += _unbroadcast(g * a.data, b.shape)

    out._bw = bw
    return out


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data, (a,))

    def bw(g):
        a.grad -= g

    out._bw = bw
    return out


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python constant (no gradient for the constant)."""
    c = float(c)
    out = Tensor(a.data * a.dtype.type(c), (a,))

    def bw(g):
        a.grad += g * c

    out._bw = bw
    return out


def square(a: Tensor) -> Tensor:
    out = Tensor(a.data * a.data, (a,))

    def bw(g):
        a.grad += g * (2.0 * a.data)

    out._bw = bw
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y, (a,))

    def bw(g):
        a.grad += g * (1.0 - y * y)

    out._bw = bw
    return out


def sigmoid_t(a: Tensor) -> Tensor:
    y = sigmoid_array(a.data)
    out = Tensor(y, (a,))

    def bw(g):
        a.grad += g * (y * (1.0 - y))

    out._bw = bw
    return out


def relu(a: Tensor) -> Tensor:
    y = np.maximum(a.data, 0)
    out = Tensor(y, (a,))

    def bw(g):
        a.grad += g * (a.data > 0)

    out._bw = bw
    return out


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum(dtype=a.dtype).reshape(1, 1), (a,))

    def bw(g):
        a.grad += g[0, 0]

    out._bw = bw
    return out


def take_rows(a: Tensor, idx) -> Tensor:
    """Gather rows; duplicate indices accumulate gradient (embedding lookup)."""
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 1:
        raise ValueError("take_rows: indices must be 1-d")
    out = Tensor(a.data[idx], (a,))

    def bw(g):
        np.add.at(a.grad, idx, g)

    out._bw = bw
    return out


def mean_rows(a: Tensor, idx) -> Tensor:
    """Average of the selected rows, as a (1, cols) tensor."""
    idx = np.asarray(idx, dtype=np.intp)
    if idx.size == 0:
        raise ValueError("mean_rows: need at least one row index")
    out = Tensor(a.data[idx].mean(axis=0, keepdims=True, dtype=a.dtype), (a,))
    inv = 1.0 / idx.size

    def bw(g):
        np.add.at(a.grad, idx, g * inv)

    out._bw = bw
    return out


def concat_cols(parts: list[Tensor]) -> Tensor:
    rows = parts[0].shape[0]
    for p in parts:
        if p.shape[0] != rows:
            raise ValueError("concat_cols: row counts differ")
    out = Tensor(np.hstack([p.data for p in parts]), tuple(parts))
    widths = [p.shape[1] for p in parts]

    def bw(g):
        at = 0
        for p, w in zip(parts, widths):
            p.grad += g[:, at:at + w]
            at += w

    out._bw = bw
    return out


def vstack(parts: list[Tensor]) -> Tensor:
    cols = parts[0].shape[1]
    for p in parts:
        if p.shape[1] != cols:
            raise ValueError("vstack: column counts differ")
    out = Tensor(np.vstack([p.data for p in parts]), tuple(parts))
    heights = [p.shape[0] for p in parts]

    def bw(g):
        at = 0
        for p, h in zip(parts, heights):
            p.grad += g[at:at + h]
            at += h

    out._bw = bw
    return out


def repeat_rows(a: Tensor, n: int) -> Tensor:
    """Tile a (1, cols) tensor down to (n, cols)."""
    if a.shape[0] != 1:
        raise ValueError("repeat_rows: input must have a single row")
    out = Tensor(np.repeat(a.data, n, axis=0), (a,))

    def bw(g):
        a.grad += g.sum(axis=0, keepdims=True)

    out._bw = bw
    return out


def transpose(a: Tensor) -> Tensor:
    out = Tensor(a.data.T.copy(), (a,))

    def bw(g):
        a.grad += g.T

    out._bw = bw
    return out


def softmax_zero(scores: Tensor) -> Tensor:
    """Softmax over the scores with an implicit extra logit fixed at zero.

    Input is (L, 1); output is the (L, 1) weight of each score under
    softmax([s_1..s_L, 0]).  The weights therefore sum to *less* than one;
    the remainder belongs to the silent zero unit, which lets the caller
    attend to nothing at all.
    """
    if scores.shape[1] != 1:
        raise ValueError("softmax_zero: expects a column vector of scores")
    s = scores.data
    aug = np.concatenate([s, np.zeros((1, 1), dtype=s.dtype)], axis=0)
    m = aug.max()
    e = np.exp(aug - m)
    y = e / e.sum(dtype=s.dtype)
    out = Tensor(y[:-1], (scores,))

    def bw(g):
        gpad = np.concatenate([g, np.zeros((1, 1), dtype=g.dtype)], axis=0)
        dot = float((gpad * y).sum())
        da = y * (gpad - dot)
        scores.grad += da[:-1]

    out._bw = bw
    return out


def pair_logloss_t(eta: Tensor, lam: float) -> Tensor:
    """Pairwise logistic loss -lam*log(sig(eta)) - (1-lam)*log(1-sig(eta)).

    Fused through the stable softplus so extreme logits cannot produce
    log(0).  ``lam`` must be exactly 0.0 or 1.0.
    """
    if eta.data.size != 1:
        raise ValueError("pair_logloss_t: eta must be a scalar node")
    lam = float(lam)
    if lam not in (0.0, 1.0):
        raise ValueError(f"pair_logloss_t: label must be 0 or 1, got {lam!r}")
    x = eta.item()
    val = softplus(-x) if lam == 1.0 else softplus(x)
    out = Tensor(np.array([[val]], dtype=eta.dtype), (eta,))

    def bw(g):
        eta.grad += g * eta.dtype.type(sigmoid(x) - lam)

    out._bw = bw
    return out
