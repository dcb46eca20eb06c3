"""Dialogue data carriers: utterances, queries, histories, internal states."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError
from .embed import feature_embed
from .profile import CandidateDimensionProfile, profile_dimensions
from .tokenizer import tokenize


@dataclass
class Utterance:
    speaker: int
    round: int
    text: str
    tokens: list[str]
    act: str | None
    embedding: np.ndarray

    @classmethod
    def from_text(cls, speaker: int, round_: int, text: str, act: str | None = None) -> "Utterance":
        tokens = tokenize(text)
        return cls(
            speaker=speaker,
            round=round_,
            text=text,
            tokens=tokens,
            act=act,
            embedding=feature_embed(tokens),
        )

    def profile(self) -> CandidateDimensionProfile:
        return profile_dimensions(self.text, self.tokens, self.act)


@dataclass
class Query:
    text: str
    embedding: np.ndarray
    task_kind: str

    @classmethod
    def from_text(cls, text: str, task_kind: str) -> "Query":
        return cls(text=text, embedding=feature_embed(tokenize(text)), task_kind=task_kind)


class DialogueHistory:
    """Append-only utterance log with non-decreasing round numbers."""

    def __init__(self) -> None:
        self._utterances: list[Utterance] = []

    def __len__(self) -> int:
        return len(self._utterances)

    def __iter__(self):
        return iter(self._utterances)

    def append(self, utterance: Utterance) -> None:
        if self._utterances and utterance.round < self._utterances[-1].round:
            raise ContractError(
                f"round went backwards: {utterance.round} after {self._utterances[-1].round}"
            )
        self._utterances.append(utterance)

    def last(self, n: int) -> list[Utterance]:
        return self._utterances[-n:] if n > 0 else []

    def by_speaker(self, speaker: int, n: int | None = None) -> list[Utterance]:
        spoken = [u for u in self._utterances if u.speaker == speaker]
        return spoken if n is None else spoken[-n:]

    def embeddings(self) -> list[np.ndarray]:
        return [u.embedding for u in self._utterances]


@dataclass
class InternalState:
    """An agent's own working state: a deterministic embedding over its
    private payload, the query, and what it has read from the history."""

    owner: int
    embedding: np.ndarray
    private_payload: dict = field(default_factory=dict)
