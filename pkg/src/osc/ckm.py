"""Collaborator knowledge models.

Each agent keeps one latent 128-vector per collaborator. The vector is
produced at episode start by a small Transformer encoder over the query, the
condensed history, and the target's recent utterances (each concatenated with
its rule-based feature channels), then revised after every message from the
target by a gated recurrent update. Both stages are differentiable so task
reward can fine-tune them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, MissingEntryError
from .nn import (
    ParamStore,
    Tape,
    add_positions,
    build_dense,
    build_encoder,
    build_gru,
    build_positions,
    dense_named,
    gru_cell,
    transformer_encoder,
)
from .nn import tape as tp
from .text import EMBED_DIM, PROFILE_DIM, DialogueHistory, Query, Utterance, condense_history


@dataclass
class CkmNetConfig:
    enc_layers: int = 2
    enc_heads: int = 2
    model_dim: int = 128
    history_window: int = 5
    gru_dim: int = 128
    ff_dim: int = 256

    def header(self) -> dict:
        return {
            "enc_layers": self.enc_layers,
            "enc_heads": self.enc_heads,
            "model_dim": self.model_dim,
            "history_window": self.history_window,
            "gru_dim": self.gru_dim,
            "ff_dim": self.ff_dim,
        }


@dataclass
class CkmState:
    observer: int
    target: int
    z: np.ndarray
    last_update_round: int = 0

    def __post_init__(self) -> None:
        if self.observer == self.target:
            raise ContractError(f"agent {self.observer} cannot model itself")


GRU_INPUT_DIM = EMBED_DIM + PROFILE_DIM + EMBED_DIM + EMBED_DIM  # message, profile, query, history
UTT_ROW_DIM = EMBED_DIM + PROFILE_DIM


def build_ckm_store(cfg: CkmNetConfig, seed: int) -> ParamStore:
    store = ParamStore(seed=seed)
    build_dense(store, "ckm.utt_proj", UTT_ROW_DIM, cfg.model_dim)
    build_positions(store, "ckm", cfg.model_dim)
    build_encoder(store, "ckm.enc", cfg.enc_layers, cfg.model_dim, cfg.ff_dim)
    return store


def build_update_store(cfg: CkmNetConfig, seed: int) -> ParamStore:
    store = ParamStore(seed=seed)
    build_dense(store, "upd.in_proj", GRU_INPUT_DIM, cfg.gru_dim)
    build_gru(store, "upd.gru", cfg.gru_dim, cfg.gru_dim)
    return store


def masked_profile(utterance: Utterance, profile_mask: np.ndarray | None) -> np.ndarray:
    channels = utterance.profile().as_vector()
    if profile_mask is not None:
        channels = channels * profile_mask
    return channels


def encode_inputs(
    target: int,
    query: Query,
    history: DialogueHistory,
    cfg: CkmNetConfig,
    profile_mask: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Fixed rows (query + condensed history) and raw per-utterance rows."""
    condensed = condense_history(history.embeddings(), cfg.history_window)
    fixed = np.stack([query.embedding, condensed])
    recent = history.by_speaker(target, cfg.history_window)
    if recent:
        utt_rows = np.stack(
            [np.concatenate((u.embedding, masked_profile(u, profile_mask))) for u in recent]
        )
    else:
        utt_rows = np.zeros((0, UTT_ROW_DIM))
    return fixed, utt_rows


def apply_encode(
    t: Tape,
    fixed: tp.Node,
    utt_raw: tp.Node | None,
    store: ParamStore,
    cfg: CkmNetConfig,
    seq_len: int | None = None,
) -> tp.Node:
    """Run the encoder over assembled rows and mean-pool to the latent vector."""
    if utt_raw is not None and utt_raw.value.shape[0] > 0:
        projected = dense_named(t, utt_raw, store, "ckm.utt_proj")
        seq = tp.concat_rows(t, [fixed, projected])
    else:
        seq = fixed
    seq_len = seq.value.shape[0] if seq_len is None else seq_len
    seq = add_positions(t, seq, store, "ckm", seq_len=seq_len)
    encoded = transformer_encoder(
        t, seq, cfg.enc_layers, cfg.enc_heads, store, "ckm.enc", seq_len=seq_len
    )
    return tp.seq_mean(t, encoded, seq_len)


def ckm_encode(
    target: int,
    query: Query,
    history: DialogueHistory,
    store: ParamStore,
    cfg: CkmNetConfig,
    profile_mask: np.ndarray | None = None,
    roster: list[int] | None = None,
    tape: Tape | None = None,
) -> tp.Node:
    """Latent state for one (observer, target) pair from the target's record."""
    if roster is not None and target not in roster:
        raise MissingEntryError(f"unknown target agent {target}")
    t = tape if tape is not None else Tape(grad=False)
    fixed, utt_rows = encode_inputs(target, query, history, cfg, profile_mask)
    utt_node = t.const(utt_rows) if utt_rows.shape[0] else None
    return apply_encode(t, t.const(fixed), utt_node, store, cfg)


def gru_input_vector(
    message: Utterance,
    query: Query,
    history: DialogueHistory,
    cfg: CkmNetConfig,
    profile_mask: np.ndarray | None = None,
) -> np.ndarray:
    condensed = condense_history(history.embeddings(), cfg.history_window)
    return np.concatenate(
        (message.embedding, masked_profile(message, profile_mask), query.embedding, condensed)
    )


def apply_update(
    t: Tape, z_prev: tp.Node, x_raw: tp.Node, store: ParamStore
) -> tp.Node:
    """Project the raw update features and advance the recurrent state."""
    x = dense_named(t, x_raw, store, "upd.in_proj")
    return gru_cell(t, z_prev, x, store, "upd.gru")


def ckm_update(
    state: CkmState,
    message: Utterance,
    query: Query,
    history: DialogueHistory,
    store: ParamStore,
    cfg: CkmNetConfig,
    profile_mask: np.ndarray | None = None,
) -> CkmState:
    """Revise the observer's model of the message's author."""
    if message.speaker != state.target:
        raise ContractError(
            f"observer {state.observer} models agent {state.target}, "
            f"got a message from agent {message.speaker}"
        )
    t = Tape(grad=False)
    x_raw = gru_input_vector(message, query, history, cfg, profile_mask)
    z_new = apply_update(t, t.const(state.z[None, :]), t.const(x_raw[None, :]), store)
    return CkmState(
        observer=state.observer,
        target=state.target,
        z=z_new.value[0],
        last_update_round=message.round,
    )
