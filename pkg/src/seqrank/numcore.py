"""Parameter storage, layer primitives, the optimizer, and the gradient check.

A :class:`ParamStore` is an ordered mapping from block names to leaf tensors;
each leaf carries its own gradient accumulator.  Training runs in float32;
``grad_check`` re-evaluates everything in float64 so the central differences
have headroom.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class ParamStore:
    """Named parameter blocks with per-block gradient accumulators."""

    def __init__(self, dtype=np.float32):
        self._blocks: dict[str, Tensor] = {}
        self._dtype = np.dtype(dtype)

    @property
    def dtype(self):
        return self._dtype

    def add(self, name: str, value) -> Tensor:
        if name in self._blocks:
            raise ValueError(f"duplicate parameter block {name!r}")
        arr = np.asarray(value, dtype=self._dtype)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ValueError(f"block {name!r} must be 2-d, got shape {arr.shape}")
        t = Tensor(arr.copy())
        t.grad = np.zeros_like(t.data)
        self._blocks[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._blocks[name]

    def __contains__(self, name: str) -> bool:
        return name in self._blocks

    def __len__(self) -> int:
        return len(self._blocks)

    def names(self) -> list[str]:
        return list(self._blocks)

    def items(self):
        return self._blocks.items()

    def zero_grads(self) -> None:
        for t in self._blocks.values():
            t.grad = np.zeros_like(t.data)

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore(dtype=dtype)
        for name, t in self._blocks.items():
            out.add(name, t.data.astype(dtype))
        return out

    def copy(self) -> "ParamStore":
        return self.astype(self._dtype)

    def copy_from(self, other: "ParamStore") -> None:
        """Overwrite every block in-place from a store with identical shapes."""
        if self.names() != other.names():
            raise ValueError("copy_from: block names differ")
        for name, t in self._blocks.items():
            src = other[name].data
            if src.shape != t.data.shape:
                raise ValueError(f"copy_from: shape mismatch in block {name!r}")
            t.data[...] = src.astype(self._dtype)

    def allclose(self, other: "ParamStore", atol: float) -> bool:
        if self.names() != other.names():
            return False
        return all(
            np.allclose(t.data, other[name].data, rtol=0.0, atol=atol)
            for name, t in self._blocks.items()
        )


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

def mlp_forward(x: Tensor, layers: list[tuple[Tensor, Tensor]],
                activation: str = "relu") -> Tensor:
    """Affine stack with the chosen hidden nonlinearity; last layer affine only.

    ``layers`` is a list of (weight, bias) tensors; weights are stored
    (fan_in, fan_out), biases (1, fan_out).  A width mismatch raises with the
    offending layer index.
    """
    act = {"relu": ad.relu, "tanh": ad.tanh}.get(activation)
    if act is None:
        raise ValueError(f"unknown activation {activation!r}")
    h = x
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        if h.shape[1] != w.shape[0]:
            raise ValueError(
                f"mlp_forward: layer {i}: input width {h.shape[1]} != fan-in {w.shape[0]}")
        h = ad.add(ad.matmul(h, w), b)
        if i != last:
            h = act(h)
    return h


def mlp_forward_np(x: np.ndarray, layers: list[tuple[np.ndarray, np.ndarray]],
                   activation: str = "relu") -> np.ndarray:
    """Plain-array twin of :func:`mlp_forward` for gradient-free passes."""
    h = x
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        if h.shape[1] != w.shape[0]:
            raise ValueError(
                f"mlp_forward: layer {i}: input width {h.shape[1]} != fan-in {w.shape[0]}")
        h = h @ w + b
        if i != last:
            if activation == "relu":
                h = np.maximum(h, 0)
            elif activation == "tanh":
                h = np.tanh(h)
            else:
                raise ValueError(f"unknown activation {activation!r}")
    return h


@dataclass
class GruWeights:
    """The nine blocks of a single gated recurrent cell."""
    w_z: Tensor
    u_z: Tensor
    b_z: Tensor
    w_r: Tensor
    u_r: Tensor
    b_r: Tensor
    w_n: Tensor
    u_n: Tensor
    b_n: Tensor


def init_gru(store: ParamStore, prefix: str, d_in: int, d_state: int,
             rng: np.random.Generator) -> GruWeights:
    """Allocate GRU blocks with uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init."""
    def u(fan_in, rows, cols):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=(rows, cols))

    blocks = {}
    for gate in ("z", "r", "n"):
        blocks[f"w_{gate}"] = store.add(f"{prefix}.w_{gate}", u(d_in, d_in, d_state))
        blocks[f"u_{gate}"] = store.add(f"{prefix}.u_{gate}", u(d_state, d_state, d_state))
        blocks[f"b_{gate}"] = store.add(f"{prefix}.b_{gate}", np.zeros((1, d_state)))
    return GruWeights(**{k: blocks[k] for k in
                         ("w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_n", "u_n", "b_n")})


def gru_slice(store: ParamStore, prefix: str) -> GruWeights:
    return GruWeights(*(store[f"{prefix}.{name}"] for name in
                        ("w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_n", "u_n", "b_n")))


def gru_cell(x: Tensor, h: Tensor, w: GruWeights) -> Tensor:
    """One GRU step applied to every input row against a shared state row.

    ``x`` is (n, d_in), ``h`` is (1, d_state); the state row broadcasts across
    the input rows, so the result is (n, d_state).  Update gate ``z`` keeps
    the old state, the reset gate ``r`` scales the recurrent term inside the
    tanh candidate:

        z = sig(xW_z + hU_z + b_z)
        r = sig(xW_r + hU_r + b_r)
        n = tanh(xW_n + r * (hU_n) + b_n)
        h' = (1 - z) * n + z * h
    """
    if h.shape[0] != 1:
        raise ValueError("gru_cell: state must be a single row")
    z = ad.sigmoid_t(ad.add(ad.add(ad.matmul(x, w.w_z), ad.matmul(h, w.u_z)), w.b_z))
    r = ad.sigmoid_t(ad.add(ad.add(ad.matmul(x, w.w_r), ad.matmul(h, w.u_r)), w.b_r))
    n = ad.tanh(ad.add(ad.add(ad.matmul(x, w.w_n), ad.mul(r, ad.matmul(h, w.u_n))), w.b_n))
    one_minus_z = ad.sub(Tensor.const(np.ones(z.shape, dtype=z.dtype.type)), z)
    return ad.add(ad.mul(one_minus_z, n), ad.mul(z, h))


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    """Step-size plus, for the adaptive rule, per-block moment estimates."""
    lr: float
    rule: str = "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.rule not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer rule {self.rule!r}")


def optimizer_step(params: ParamStore, opt: OptimizerState) -> None:
    """Apply one update from the accumulated gradients, then zero them."""
    for name, t in params.items():
        g = t.grad
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient in block {name!r}")
    opt.step += 1
    for name, t in params.items():
        g = t.grad.astype(np.float64)
        if opt.rule == "sgd":
            t.data -= (opt.lr * g).astype(t.dtype)
        else:
            m = opt.m.setdefault(name, np.zeros_like(g))
            v = opt.v.setdefault(name, np.zeros_like(g))
            m[...] = opt.beta1 * m + (1.0 - opt.beta1) * g
            v[...] = opt.beta2 * v + (1.0 - opt.beta2) * g * g
            mhat = m / (1.0 - opt.beta1 ** opt.step)
            vhat = v / (1.0 - opt.beta2 ** opt.step)
            t.data -= (opt.lr * mhat / (np.sqrt(vhat) + opt.eps)).astype(t.dtype)
    params.zero_grads()


# ---------------------------------------------------------------------------
# gradient check
# ---------------------------------------------------------------------------

def grad_check(loss_fn, params: ParamStore, epsilon: float = 1e-5,
               max_entries_per_block: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Compare analytic gradients against central differences in float64.

    ``loss_fn`` takes a ParamStore and returns a scalar tape node; it must be
    deterministic (it is evaluated twice at the base point and the values
    must agree bitwise).  Returns the maximum relative error
    |a - n| / max(1, |a|, |n|) over the probed entries.  By default every
    entry of every block is probed; ``max_entries_per_block`` draws a
    deterministic subsample instead, which keeps the check affordable on
    models with embedding tables.
    """
    if not (1e-7 <= epsilon <= 1e-3):
        raise ValueError(f"epsilon must lie in [1e-7, 1e-3], got {epsilon!r}")
    p64 = params.astype(np.float64)
    base1 = float(loss_fn(p64).item())
    base2 = float(loss_fn(p64).item())
    if not (base1 == base2 and np.isfinite(base1)):
        raise RuntimeError(
            f"loss function is not deterministic or not finite: {base1!r} vs {base2!r}")

    p64.zero_grads()
    loss_fn(p64).backward()
    analytic = {name: t.grad.copy() for name, t in p64.items()}

    if max_entries_per_block is not None and rng is None:
        rng = np.random.default_rng(0)

    worst = 0.0
    for name, t in p64.items():
        rows, cols = t.data.shape
        total = rows * cols
        if max_entries_per_block is None or total <= max_entries_per_block:
            flat = np.arange(total)
        else:
            flat = rng.choice(total, size=max_entries_per_block, replace=False)
        for k in flat:
            i, j = divmod(int(k), cols)
            keep = t.data[i, j]
            t.data[i, j] = keep + epsilon
            hi = float(loss_fn(p64).item())
            t.data[i, j] = keep - epsilon
            lo = float(loss_fn(p64).item())
            t.data[i, j] = keep
            numeric = (hi - lo) / (2.0 * epsilon)
            a = float(analytic[name][i, j])
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            if err > worst:
                worst = err
    return worst
