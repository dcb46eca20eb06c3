"""Learned divergence between an agent's own state and a collaborator model.

The agent's embedding and the latent collaborator vector are projected into a
shared space, cross-attended in both directions, and reduced by a small ReLU
network to a 64-dim gap vector whose norm feeds reward shaping and conflict
metrics. Ablation variants replace the learned map with a raw projected
difference, its norm, or an attention-free feed-forward path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ckm import CkmState
from .errors import ConfigurationError, ContractError, MissingEntryError
from .nn import ParamStore, Tape, build_dense, build_mlp, dense_named, mlp, multihead_attention
from .nn import tape as tp
from .text import EMBED_DIM, InternalState

GAP_VARIANTS = ("learned", "raw_diff", "l2", "mlp_only")


@dataclass
class GapNetConfig:
    proj_dim: int = 128
    attn_heads: int = 2
    mlp_hidden: int = 128
    out_dim: int = 64

    def header(self) -> dict:
        return {
            "proj_dim": self.proj_dim,
            "attn_heads": self.attn_heads,
            "mlp_hidden": self.mlp_hidden,
            "out_dim": self.out_dim,
        }


@dataclass
class GapVector:
    observer: int
    target: int
    g: np.ndarray
    magnitude: float


def build_gap_store(cfg: GapNetConfig, seed: int) -> ParamStore:
    store = ParamStore(seed=seed)
    build_dense(store, "gap.proj_phi", EMBED_DIM, cfg.proj_dim)
    build_dense(store, "gap.proj_z", EMBED_DIM, cfg.proj_dim)
    for direction in ("p2z", "z2p"):
        for part in ("q", "k", "v", "o"):
            build_dense(store, f"gap.attn.{direction}.{part}", cfg.proj_dim, cfg.proj_dim)
    build_mlp(store, "gap.mlp", [2 * cfg.proj_dim, cfg.mlp_hidden, cfg.out_dim])
    return store


def gap_forward(
    t: Tape,
    phi: tp.Node,
    z: tp.Node,
    store: ParamStore,
    cfg: GapNetConfig,
    variant: str = "learned",
) -> tp.Node:
    """Batched gap computation: phi and z are Bx128, output is Bx64."""
    if variant not in GAP_VARIANTS:
        raise ConfigurationError(f"unknown gap variant '{variant}'")
    p = dense_named(t, phi, store, "gap.proj_phi")
    q = dense_named(t, z, store, "gap.proj_z")
    if variant == "raw_diff":
        return tp.slice_cols(t, tp.sub(t, p, q), 0, cfg.out_dim)
    if variant == "l2":
        diff = tp.sub(t, p, q)
        norm = tp.sqrt(t, tp.row_sum(t, tp.mul(t, diff, diff)))
        return tp.matmul(t, norm, t.const(np.ones((1, cfg.out_dim))))
    if variant == "mlp_only":
        joint = tp.concat_cols(t, [p, q])
        return mlp(t, joint, store, "gap.mlp", 2)
    # each row is its own length-1 sequence: phi attends to z and vice versa
    attended_p = multihead_attention(
        t, p, q, q, cfg.attn_heads, store, "gap.attn.p2z", q_len=1, kv_len=1
    )
    attended_z = multihead_attention(
        t, q, p, p, cfg.attn_heads, store, "gap.attn.z2p", q_len=1, kv_len=1
    )
    joint = tp.concat_cols(t, [attended_p, attended_z])
    return mlp(t, joint, store, "gap.mlp", 2)


def compute_gap(
    phi: InternalState,
    state: CkmState,
    store: ParamStore,
    cfg: GapNetConfig,
    variant: str = "learned",
) -> GapVector:
    if phi.owner != state.observer:
        raise ContractError(
            f"internal state belongs to agent {phi.owner} but the collaborator "
            f"model is observed by agent {state.observer}"
        )
    t = Tape(grad=False)
    g = gap_forward(
        t, t.const(phi.embedding[None, :]), t.const(state.z[None, :]), store, cfg, variant
    )
    vec = g.value[0]
    return GapVector(
        observer=state.observer,
        target=state.target,
        g=vec,
        magnitude=float(np.linalg.norm(vec)),
    )


def gap_matrix(
    agent: int,
    states: dict[int, CkmState],
    phi: InternalState,
    store: ParamStore,
    cfg: GapNetConfig,
    collaborators: list[int],
    variant: str = "learned",
) -> list[GapVector]:
    """Per-collaborator gaps in ascending target order."""
    out: list[GapVector] = []
    for target in sorted(collaborators):
        if target == agent:
            continue
        if target not in states:
            raise MissingEntryError(f"agent {agent} has no collaborator model for {target}")
        out.append(compute_gap(phi, states[target], store, cfg, variant))
    return out
