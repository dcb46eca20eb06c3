"""Differentiable numeric core: tape, layers, Adam, checkpoints."""

from . import tape
from .checkpoint import load_store, save_store
from .layers import (
    add_positions,
    build_attention,
    build_dense,
    build_encoder,
    build_gru,
    build_mlp,
    build_positions,
    dense,
    dense_named,
    gru_cell,
    mlp,
    multihead_attention,
    transformer_encoder,
)
from .params import AdamConfig, ParamStore, adam_step, glorot_uniform
from .tape import Node, Tape

__all__ = [
    "tape",
    "Tape",
    "Node",
    "ParamStore",
    "AdamConfig",
    "adam_step",
    "glorot_uniform",
    "dense",
    "dense_named",
    "multihead_attention",
    "transformer_encoder",
    "gru_cell",
    "mlp",
    "add_positions",
    "build_dense",
    "build_attention",
    "build_encoder",
    "build_gru",
    "build_mlp",
    "build_positions",
    "save_store",
    "load_store",
]
