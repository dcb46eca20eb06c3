"""Reverse-mode gradient tape over 2-D float64 arrays.

Every differentiable quantity in the engine is a matrix: a single vector is a
1xN row, a sequence is LxN, and a batch of sequences is stacked sequence-major
as (B*L)xN. The tape records each operation with a vector-Jacobian closure;
`backward` walks the record in reverse and accumulates gradients into leaf
nodes and, for parameters, into their store's gradient buffers.

Forward evaluation with `Tape(grad=False)` records nothing and never mutates
parameter stores, so it is safe to run concurrently on a shared snapshot.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy import special as _sp

from ..errors import DimensionError, NumericError

# Debug switch: when True every op validates that its output is finite.
CHECK_FINITE = False


def ensure_matrix(x: np.ndarray, name: str = "tensor") -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


class Node:
    """A matrix value on the tape."""

    __slots__ = ("value", "grad", "requires_grad")

    def __init__(self, value: np.ndarray, requires_grad: bool) -> None:
        self.value = value
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape  # type: ignore[return-value]


class Tape:
    """Operation record for one forward pass."""

    def __init__(self, grad: bool = True) -> None:
        self.grad_enabled = grad
        self._ops: list[tuple[Node, tuple[Node, ...], Callable[[np.ndarray], Sequence[np.ndarray | None]]]] = []
        self._param_sinks: list[tuple[Node, np.ndarray]] = []
        self._spent = False

    def const(self, value: np.ndarray) -> Node:
        return Node(ensure_matrix(value, "constant"), requires_grad=False)

    def leaf(self, value: np.ndarray) -> Node:
        """Differentiable input that is not a stored parameter."""
        return Node(ensure_matrix(value, "leaf"), requires_grad=self.grad_enabled)

    def param(self, store, name: str) -> Node:
        """Leaf node whose gradient accumulates into `store`'s buffer."""
        entry = store.entry(name)
        node = Node(entry.value, requires_grad=self.grad_enabled)
        if self.grad_enabled:
            self._param_sinks.append((node, entry.grad))
        return node

    def emit(
        self,
        value: np.ndarray,
        parents: tuple[Node, ...],
        vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]],
    ) -> Node:
        if CHECK_FINITE and not np.all(np.isfinite(value)):
            raise NumericError("non-finite value produced by tape operation")
        requires = self.grad_enabled and any(p.requires_grad for p in parents)
        node = Node(value, requires)
        if requires:
            self._ops.append((node, parents, vjp))
        return node

    def backward(self, node: Node, seed: np.ndarray | None = None) -> None:
        """Accumulate d(node)/d(leaf) into every reachable leaf and parameter.

        One-shot: the tape is consumed, so parameter gradients can never be
        flushed twice.
        """
        if not self.grad_enabled:
            raise NumericError("backward called on a non-recording tape")
        if self._spent:
            raise NumericError("backward called twice on the same tape")
        self._spent = True
        if seed is None:
            seed = np.ones_like(node.value)
        if node.grad is None:
            node.grad = np.array(seed, dtype=np.float64)
        else:
            node.grad = node.grad + seed
        for out, parents, vjp in reversed(self._ops):
            if out.grad is None:
                continue
            pulls = vjp(out.grad)
            for parent, pull in zip(parents, pulls):
                if pull is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.array(pull, dtype=np.float64)
                else:
                    parent.grad += pull
        for node_, sink in self._param_sinks:
            if node_.grad is not None:
                sink += node_.grad


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------


def matmul(t: Tape, a: Node, b: Node) -> Node:
    if a.value.shape[1] != b.value.shape[0]:
        raise DimensionError(
            f"matmul shape mismatch: {a.value.shape} x {b.value.shape}"
        )
    out = a.value @ b.value

    def vjp(g: np.ndarray):
        return g @ b.value.T, a.value.T @ g

    return t.emit(out, (a, b), vjp)


def add(t: Tape, a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise DimensionError(f"add shape mismatch: {a.value.shape} vs {b.value.shape}")
    return t.emit(a.value + b.value, (a, b), lambda g: (g, g))


def sub(t: Tape, a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise DimensionError(f"sub shape mismatch: {a.value.shape} vs {b.value.shape}")
    return t.emit(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(t: Tape, a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise DimensionError(f"mul shape mismatch: {a.value.shape} vs {b.value.shape}")
    return t.emit(a.value * b.value, (a, b), lambda g: (g * b.value, g * a.value))


def add_rowvec(t: Tape, a: Node, v: Node) -> Node:
    """Broadcast-add a 1xN row vector to every row of a."""
    if v.value.shape != (1, a.value.shape[1]):
        raise DimensionError(
            f"row vector shape {v.value.shape} does not match matrix {a.value.shape}"
        )
    return t.emit(a.value + v.value, (a, v), lambda g: (g, g.sum(axis=0, keepdims=True)))


def scale(t: Tape, a: Node, s: float) -> Node:
    return t.emit(a.value * s, (a,), lambda g: (g * s,))


def add_scalar(t: Tape, a: Node, c: float) -> Node:
    return t.emit(a.value + c, (a,), lambda g: (g,))


def neg(t: Tape, a: Node) -> Node:
    return t.emit(-a.value, (a,), lambda g: (-g,))


def relu(t: Tape, a: Node) -> Node:
    mask = a.value > 0.0
    return t.emit(a.value * mask, (a,), lambda g: (g * mask,))


def tanh(t: Tape, a: Node) -> Node:
    out = np.tanh(a.value)
    return t.emit(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(t: Tape, a: Node) -> Node:
    out = _sp.expit(a.value)
    return t.emit(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(t: Tape, a: Node) -> Node:
    out = np.logaddexp(0.0, a.value)
    sig = _sp.expit(a.value)
    return t.emit(out, (a,), lambda g: (g * sig,))


def exp(t: Tape, a: Node) -> Node:
    out = np.exp(a.value)
    return t.emit(out, (a,), lambda g: (g * out,))


def sqrt(t: Tape, a: Node, eps: float = 1e-12) -> Node:
    out = np.sqrt(a.value + eps)
    return t.emit(out, (a,), lambda g: (g * 0.5 / out,))


def log(t: Tape, a: Node) -> Node:
    out = np.log(a.value)
    return t.emit(out, (a,), lambda g: (g / a.value,))


def lgamma(t: Tape, a: Node) -> Node:
    out = _sp.gammaln(a.value)
    return t.emit(out, (a,), lambda g: (g * _sp.digamma(a.value),))


def digamma(t: Tape, a: Node) -> Node:
    out = _sp.digamma(a.value)
    return t.emit(out, (a,), lambda g: (g * _sp.polygamma(1, a.value),))


def softmax_rows(t: Tape, a: Node) -> Node:
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def vjp(g: np.ndarray):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return t.emit(out, (a,), vjp)


def log_softmax_rows(t: Tape, a: Node) -> Node:
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def vjp(g: np.ndarray):
        return (g - soft * g.sum(axis=1, keepdims=True),)

    return t.emit(out, (a,), vjp)


def layer_norm_rows(t: Tape, a: Node, gain: Node, bias: Node, eps: float = 1e-8) -> Node:
    """Per-row normalization (population variance) followed by affine."""
    d = a.value.shape[1]
    mu = a.value.mean(axis=1, keepdims=True)
    var = a.value.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.value - mu) * inv
    out = xhat * gain.value + bias.value

    def vjp(g: np.ndarray):
        dxhat = g * gain.value
        da = inv * (
            dxhat
            - dxhat.mean(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        )
        dgain = (g * xhat).sum(axis=0, keepdims=True)
        dbias = g.sum(axis=0, keepdims=True)
        return da, dgain, dbias

    if gain.value.shape != (1, d) or bias.value.shape != (1, d):
        raise DimensionError(
            f"layer norm affine shapes {gain.value.shape}/{bias.value.shape} "
            f"do not match feature dim {d}"
        )
    return t.emit(out, (a, gain, bias), vjp)


def concat_rows(t: Tape, parts: Sequence[Node]) -> Node:
    cols = parts[0].value.shape[1]
    for p in parts:
        if p.value.shape[1] != cols:
            raise DimensionError(
                f"concat_rows column mismatch: {p.value.shape[1]} vs {cols}"
            )
    out = np.concatenate([p.value for p in parts], axis=0)
    splits = np.cumsum([p.value.shape[0] for p in parts])[:-1]

    def vjp(g: np.ndarray):
        return tuple(np.split(g, splits, axis=0))

    return t.emit(out, tuple(parts), vjp)


def concat_cols(t: Tape, parts: Sequence[Node]) -> Node:
    rows = parts[0].value.shape[0]
    for p in parts:
        if p.value.shape[0] != rows:
            raise DimensionError(
                f"concat_cols row mismatch: {p.value.shape[0]} vs {rows}"
            )
    out = np.concatenate([p.value for p in parts], axis=1)
    splits = np.cumsum([p.value.shape[1] for p in parts])[:-1]

    def vjp(g: np.ndarray):
        return tuple(np.split(g, splits, axis=1))

    return t.emit(out, tuple(parts), vjp)


def slice_cols(t: Tape, a: Node, start: int, stop: int) -> Node:
    out = np.array(a.value[:, start:stop])

    def vjp(g: np.ndarray):
        full = np.zeros_like(a.value)
        full[:, start:stop] = g
        return (full,)

    return t.emit(out, (a,), vjp)


def select_rows(t: Tape, a: Node, index: np.ndarray) -> Node:
    idx = np.asarray(index, dtype=np.intp)
    out = a.value[idx]

    def vjp(g: np.ndarray):
        full = np.zeros_like(a.value)
        np.add.at(full, idx, g)
        return (full,)

    return t.emit(out, (a,), vjp)


def repeat_rows(t: Tape, a: Node, times: int) -> Node:
    """Tile the whole matrix `times` times along the row axis."""
    out = np.tile(a.value, (times, 1))
    n = a.value.shape[0]

    def vjp(g: np.ndarray):
        return (g.reshape(times, n, -1).sum(axis=0),)

    return t.emit(out, (a,), vjp)


def row_sum(t: Tape, a: Node) -> Node:
    out = a.value.sum(axis=1, keepdims=True)

    def vjp(g: np.ndarray):
        return (np.broadcast_to(g, a.value.shape).copy(),)

    return t.emit(out, (a,), vjp)


def col_mean(t: Tape, a: Node) -> Node:
    """Mean over rows, yielding a 1xN row."""
    n = a.value.shape[0]
    out = a.value.mean(axis=0, keepdims=True)

    def vjp(g: np.ndarray):
        return (np.broadcast_to(g / n, a.value.shape).copy(),)

    return t.emit(out, (a,), vjp)


def seq_mean(t: Tape, a: Node, seq_len: int) -> Node:
    """Mean-pool each length-`seq_len` block of rows (sequence-major batch)."""
    rows, cols = a.value.shape
    if rows % seq_len != 0:
        raise DimensionError(f"{rows} rows not divisible by sequence length {seq_len}")
    b = rows // seq_len
    out = a.value.reshape(b, seq_len, cols).mean(axis=1)

    def vjp(g: np.ndarray):
        return (np.repeat(g / seq_len, seq_len, axis=0),)

    return t.emit(out, (a,), vjp)


def sum_all(t: Tape, a: Node) -> Node:
    out = np.array([[a.value.sum()]])

    def vjp(g: np.ndarray):
        return (np.full_like(a.value, g[0, 0]),)

    return t.emit(out, (a,), vjp)


def mean_all(t: Tape, a: Node) -> Node:
    n = a.value.size
    out = np.array([[a.value.mean()]])

    def vjp(g: np.ndarray):
        return (np.full_like(a.value, g[0, 0] / n),)

    return t.emit(out, (a,), vjp)


def minimum(t: Tape, a: Node, b: Node) -> Node:
    take_a = a.value <= b.value
    out = np.where(take_a, a.value, b.value)

    def vjp(g: np.ndarray):
        return g * take_a, g * ~take_a

    return t.emit(out, (a, b), vjp)


def clip(t: Tape, a: Node, lo: float, hi: float) -> Node:
    out = np.clip(a.value, lo, hi)
    inside = (a.value > lo) & (a.value < hi)

    def vjp(g: np.ndarray):
        return (g * inside,)

    return t.emit(out, (a,), vjp)


def select_per_row(t: Tape, a: Node, cols: np.ndarray) -> Node:
    """Pick one column per row: out[i, 0] = a[i, cols[i]]."""
    idx = np.asarray(cols, dtype=np.intp)
    rows = np.arange(a.value.shape[0])
    out = a.value[rows, idx][:, None]

    def vjp(g: np.ndarray):
        full = np.zeros_like(a.value)
        full[rows, idx] = g[:, 0]
        return (full,)

    return t.emit(out, (a,), vjp)


def stop_gradient(t: Tape, a: Node) -> Node:
    return t.const(np.array(a.value))


def scaled_attention(
    t: Tape,
    q: Node,
    k: Node,
    v: Node,
    heads: int,
    q_len: int,
    kv_len: int,
) -> Node:
    """Scaled dot-product attention over a sequence-major batch.

    q is (B*q_len)xD, k and v are (B*kv_len)xD with the same B; each head
    attends within its own sequence block.
    """
    d = q.value.shape[1]
    if d % heads != 0:
        raise DimensionError(f"model dim {d} not divisible by {heads} heads")
    if k.value.shape != v.value.shape:
        raise DimensionError(
            f"key/value shape mismatch: {k.value.shape} vs {v.value.shape}"
        )
    if q.value.shape[0] % q_len != 0 or k.value.shape[0] % kv_len != 0:
        raise DimensionError("row count not divisible by declared sequence length")
    b = q.value.shape[0] // q_len
    if k.value.shape[0] // kv_len != b:
        raise DimensionError("query and key batches disagree")
    dh = d // heads
    inv_sqrt = 1.0 / np.sqrt(dh)

    def split(x: np.ndarray, length: int) -> np.ndarray:
        # (B*L)xD -> B x heads x L x dh
        return x.reshape(b, length, heads, dh).transpose(0, 2, 1, 3)

    qh = split(q.value, q_len)
    kh = split(k.value, kv_len)
    vh = split(v.value, kv_len)
    scores = np.einsum("bhqd,bhkd->bhqk", qh, kh) * inv_sqrt
    scores -= scores.max(axis=-1, keepdims=True)
    ex = np.exp(scores)
    probs = ex / ex.sum(axis=-1, keepdims=True)
    out_h = np.einsum("bhqk,bhkd->bhqd", probs, vh)
    out = out_h.transpose(0, 2, 1, 3).reshape(b * q_len, d)

    def vjp(g: np.ndarray):
        gh = split(g, q_len)
        dv = np.einsum("bhqk,bhqd->bhkd", probs, gh)
        dp = np.einsum("bhqd,bhkd->bhqk", gh, vh)
        ds = probs * (dp - (dp * probs).sum(axis=-1, keepdims=True))
        dq = np.einsum("bhqk,bhkd->bhqd", ds, kh) * inv_sqrt
        dk = np.einsum("bhqk,bhqd->bhkd", ds, qh) * inv_sqrt

        def merge(x: np.ndarray, length: int) -> np.ndarray:
            return x.transpose(0, 2, 1, 3).reshape(b * length, d)

        return merge(dq, q_len), merge(dk, kv_len), merge(dv, kv_len)

    return t.emit(out, (q, k, v), vjp)
