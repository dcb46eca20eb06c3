"""Synthetic cooperative tasks with ground truth.

hidden-sum: every agent privately holds a digit; the team must converge on the
majority digit (ties break to the smallest). Agents only learn each other's
digits through messages, so task success is causally downstream of what the
policy chooses to communicate.
"""

from __future__ import annotations

import re
from collections import Counter

import numpy as np

from ..errors import ConfigurationError
from ..text import DialogueHistory, InternalState, Query, feature_embed, tokenize

REVEAL_RE = re.compile(r"my share is (\d+)")
PROPOSAL_RE = re.compile(r"consensus proposal: (\d+)")

HIDDEN_SUM_QUERY = "Determine the team consensus value from the hidden shares."


def majority_value(values: list[int]) -> int | None:
    """Most frequent value; ties break to the smallest; None for no values."""
    if not values:
        return None
    counts = Counter(values)
    best = max(counts.values())
    return min(v for v, c in counts.items() if c == best)


class HiddenSumTask:
    name = "hidden_sum"

    def __init__(self, agent_count: int, rng: np.random.Generator) -> None:
        self.agent_count = agent_count
        self.shares = [int(v) for v in rng.integers(0, 10, size=agent_count)]
        self.query = Query.from_text(HIDDEN_SUM_QUERY, self.name)

    @property
    def ground_truth(self) -> int:
        return majority_value(self.shares)  # type: ignore[return-value]

    def known_shares(self, agent: int, history: DialogueHistory) -> dict[int, int]:
        """Latest digit each collaborator has revealed, plus the agent's own."""
        known = {agent: self.shares[agent]}
        for utt in history:
            if utt.speaker == agent:
                continue
            matches = REVEAL_RE.findall(utt.text)
            if matches:
                known[utt.speaker] = int(matches[-1])
        return known

    def belief(self, agent: int, history: DialogueHistory) -> int:
        return majority_value(sorted(self.known_shares(agent, history).values()))  # type: ignore[return-value]

    def internal_state(self, agent: int, history: DialogueHistory) -> InternalState:
        known = self.known_shares(agent, history)
        others = sorted((a, v) for a, v in known.items() if a != agent)
        text = (
            f"{self.query.text} my share is {self.shares[agent]} "
            f"known {' '.join(f'agent {a} value {v}' for a, v in others)}"
        )
        return InternalState(
            owner=agent,
            embedding=feature_embed(tokenize(text)),
            private_payload={"share": self.shares[agent], "known": known},
        )

    def contribution(self, agent: int, history: DialogueHistory) -> str:
        return f"consensus proposal: {self.belief(agent, history)}"

    def aggregate(self, contributions: list[str]) -> tuple[int | None, str]:
        """Majority over parseable proposals; unparseable entries abstain."""
        proposals = []
        for text in contributions:
            match = PROPOSAL_RE.search(text)
            if match:
                proposals.append(int(match.group(1)))
        final = majority_value(proposals)
        outcome = "success" if final is not None and final == self.ground_truth else "failure"
        return final, outcome


TASKS = {"hidden_sum": HiddenSumTask}


def make_task(kind: str, agent_count: int, rng: np.random.Generator):
    if kind not in TASKS:
        raise ConfigurationError(f"unknown task kind '{kind}' (have: {sorted(TASKS)})")
    return TASKS[kind](agent_count, rng)
