"""Network building blocks composed from tape primitives.

Each `build_*` function registers the parameters a block needs under a name
prefix; the matching forward function pulls them from the store at call time.
All blocks accept sequence-major batches: a (B*L)xD input with `seq_len=L`
runs B independent sequences at once, and B=1 reproduces the single-sequence
case exactly.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError, ContractError, DimensionError
from . import tape as tp
from .params import ParamStore

MAX_POSITIONS = 64


def dense(t: tp.Tape, x: tp.Node, weight: tp.Node, bias: tp.Node | None = None) -> tp.Node:
    """x @ weight (+ bias broadcast per row)."""
    out = tp.matmul(t, x, weight)
    if bias is not None:
        out = tp.add_rowvec(t, out, bias)
    return out


def build_dense(store: ParamStore, prefix: str, in_dim: int, out_dim: int) -> None:
    store.weight(f"{prefix}.w", in_dim, out_dim)
    store.zeros(f"{prefix}.b", 1, out_dim)


def dense_named(t: tp.Tape, x: tp.Node, store: ParamStore, prefix: str) -> tp.Node:
    return dense(t, x, t.param(store, f"{prefix}.w"), t.param(store, f"{prefix}.b"))


def build_attention(store: ParamStore, prefix: str, dim: int) -> None:
    for part in ("q", "k", "v", "o"):
        build_dense(store, f"{prefix}.{part}", dim, dim)


def multihead_attention(
    t: tp.Tape,
    query_seq: tp.Node,
    key_seq: tp.Node,
    value_seq: tp.Node,
    heads: int,
    store: ParamStore,
    prefix: str,
    q_len: int | None = None,
    kv_len: int | None = None,
) -> tp.Node:
    """Multi-head attention with learned Q/K/V/output projections.

    Defaults treat the inputs as one sequence each; pass q_len/kv_len to run a
    sequence-major batch.
    """
    dim = query_seq.value.shape[1]
    if dim % heads != 0:
        raise ConfigurationError(f"model dim {dim} not divisible by {heads} heads")
    if key_seq.value.shape[0] != value_seq.value.shape[0]:
        raise DimensionError(
            f"key rows {key_seq.value.shape[0]} != value rows {value_seq.value.shape[0]}"
        )
    q_len = query_seq.value.shape[0] if q_len is None else q_len
    kv_len = key_seq.value.shape[0] if kv_len is None else kv_len
    q = dense_named(t, query_seq, store, f"{prefix}.q")
    k = dense_named(t, key_seq, store, f"{prefix}.k")
    v = dense_named(t, value_seq, store, f"{prefix}.v")
    attended = tp.scaled_attention(t, q, k, v, heads, q_len, kv_len)
    return dense_named(t, attended, store, f"{prefix}.o")


def build_encoder(store: ParamStore, prefix: str, layers: int, dim: int, ff_dim: int) -> None:
    for i in range(layers):
        block = f"{prefix}.l{i}"
        build_attention(store, f"{block}.attn", dim)
        store.ones(f"{block}.ln1.g", 1, dim)
        store.zeros(f"{block}.ln1.b", 1, dim)
        build_dense(store, f"{block}.ff1", dim, ff_dim)
        build_dense(store, f"{block}.ff2", ff_dim, dim)
        store.ones(f"{block}.ln2.g", 1, dim)
        store.zeros(f"{block}.ln2.b", 1, dim)


def transformer_encoder(
    t: tp.Tape,
    seq: tp.Node,
    layers: int,
    heads: int,
    store: ParamStore,
    prefix: str,
    seq_len: int | None = None,
) -> tp.Node:
    """Stack of (self-attention + residual + norm, feed-forward + residual + norm).

    layers=0 returns the input unchanged.
    """
    if seq.value.shape[0] == 0:
        raise ContractError("transformer encoder requires a non-empty sequence")
    seq_len = seq.value.shape[0] if seq_len is None else seq_len
    x = seq
    for i in range(layers):
        block = f"{prefix}.l{i}"
        attn = multihead_attention(
            t, x, x, x, heads, store, f"{block}.attn", q_len=seq_len, kv_len=seq_len
        )
        x = tp.layer_norm_rows(
            t,
            tp.add(t, x, attn),
            t.param(store, f"{block}.ln1.g"),
            t.param(store, f"{block}.ln1.b"),
        )
        hidden = tp.relu(t, dense_named(t, x, store, f"{block}.ff1"))
        ff = dense_named(t, hidden, store, f"{block}.ff2")
        x = tp.layer_norm_rows(
            t,
            tp.add(t, x, ff),
            t.param(store, f"{block}.ln2.g"),
            t.param(store, f"{block}.ln2.b"),
        )
    return x


def build_positions(store: ParamStore, prefix: str, dim: int, max_len: int = MAX_POSITIONS) -> None:
    store.weight(f"{prefix}.pos", max_len, dim)


def add_positions(
    t: tp.Tape, seq: tp.Node, store: ParamStore, prefix: str, seq_len: int | None = None
) -> tp.Node:
    """Add the learned per-position embedding to a sequence-major batch."""
    seq_len = seq.value.shape[0] if seq_len is None else seq_len
    if seq_len > MAX_POSITIONS:
        raise ConfigurationError(f"sequence length {seq_len} exceeds {MAX_POSITIONS} positions")
    b = seq.value.shape[0] // seq_len
    table = t.param(store, f"{prefix}.pos")
    rows = tp.select_rows(t, table, np.tile(np.arange(seq_len), b))
    return tp.add(t, seq, rows)


def build_gru(store: ParamStore, prefix: str, in_dim: int, hidden: int) -> None:
    for gate in ("r", "u", "c"):
        store.weight(f"{prefix}.w{gate}", in_dim, hidden)
        store.weight(f"{prefix}.u{gate}", hidden, hidden)
        store.zeros(f"{prefix}.b{gate}", 1, hidden)


def gru_cell(
    t: tp.Tape,
    state: tp.Node,
    x: tp.Node,
    store: ParamStore,
    prefix: str,
) -> tp.Node:
    """Gated recurrent update: reset/update gates, candidate, convex blend.

    Rows are batch entries; state and x must have the same row count.
    """
    hidden = state.value.shape[1]
    if store.value(f"{prefix}.ur").shape[0] != hidden:
        raise DimensionError(
            f"state dim {hidden} does not match GRU hidden size "
            f"{store.value(f'{prefix}.ur').shape[0]}"
        )
    if state.value.shape[0] != x.value.shape[0]:
        raise DimensionError(
            f"state rows {state.value.shape[0]} != input rows {x.value.shape[0]}"
        )

    def gate(name: str, pre_h: tp.Node) -> tp.Node:
        z = tp.add(
            t,
            tp.matmul(t, x, t.param(store, f"{prefix}.w{name}")),
            tp.matmul(t, pre_h, t.param(store, f"{prefix}.u{name}")),
        )
        return tp.add_rowvec(t, z, t.param(store, f"{prefix}.b{name}"))

    r = tp.sigmoid(t, gate("r", state))
    u = tp.sigmoid(t, gate("u", state))
    cand_pre = tp.add(
        t,
        tp.matmul(t, x, t.param(store, f"{prefix}.wc")),
        tp.matmul(t, tp.mul(t, r, state), t.param(store, f"{prefix}.uc")),
    )
    cand = tp.tanh(t, tp.add_rowvec(t, cand_pre, t.param(store, f"{prefix}.bc")))
    one_minus_u = tp.add_scalar(t, tp.neg(t, u), 1.0)
    return tp.add(t, tp.mul(t, one_minus_u, cand), tp.mul(t, u, state))


def build_mlp(store: ParamStore, prefix: str, dims: list[int]) -> None:
    for i in range(len(dims) - 1):
        build_dense(store, f"{prefix}.fc{i}", dims[i], dims[i + 1])


def mlp(t: tp.Tape, x: tp.Node, store: ParamStore, prefix: str, n_layers: int) -> tp.Node:
    """Feed-forward stack with ReLU between layers (none after the last)."""
    out = x
    for i in range(n_layers):
        out = dense_named(t, out, store, f"{prefix}.fc{i}")
        if i < n_layers - 1:
            out = tp.relu(t, out)
    return out
