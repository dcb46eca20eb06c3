"""Deterministic text featurization: tokenizer, hashing embedder, profiles."""

from .embed import EMBED_DIM, condense_history, cosine, feature_embed
from .profile import (
    DIALOGUE_ACTS,
    PROFILE_DIM,
    CandidateDimensionProfile,
    load_lexicon,
    profile_dimensions,
)
from .tokenizer import tokenize
from .types import DialogueHistory, InternalState, Query, Utterance

__all__ = [
    "tokenize",
    "feature_embed",
    "condense_history",
    "cosine",
    "EMBED_DIM",
    "DIALOGUE_ACTS",
    "PROFILE_DIM",
    "CandidateDimensionProfile",
    "profile_dimensions",
    "load_lexicon",
    "Utterance",
    "Query",
    "DialogueHistory",
    "InternalState",
]
