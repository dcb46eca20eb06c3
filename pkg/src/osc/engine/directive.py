"""Structured realization directives handed to the language backend.

The policy decides strategy; the directive spells it out block by block: role
and task context, an assessment of the addressed collaborator, the speaker's
own state, the gap being addressed, the objective, and style instructions.
A simplified-prompt mode keeps only the action block.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..policy import OBJECTIVES, CommAction
from ..text import tokenize

STYLE_BANDS = ((1.0 / 3.0, "low"), (2.0 / 3.0, "medium"), (float("inf"), "high"))


def style_band(value: float) -> str:
    for cut, name in STYLE_BANDS:
        if value < cut:
            return name
    return "high"


def gap_focus_summary(gap_vector: np.ndarray) -> str:
    """Top-3 largest-magnitude gap coordinates, as index plus sign."""
    order = np.argsort(-np.abs(gap_vector))[:3]
    parts = [f"{int(i)}{'+' if gap_vector[i] >= 0 else '-'}" for i in order]
    return " ".join(parts)


@dataclass
class RealizationDirective:
    speaker: int
    target: int
    objective_name: str
    role_prefix: str
    history_snippets: list[str] = field(default_factory=list)
    ckm_assessment: str = ""
    own_state: str = ""
    gap_focus: str = ""
    objective_instruction: str = ""
    style_directives: str = ""
    detail: float = 0.5
    assertiveness: float = 0.5
    max_tokens: int = 512
    simplified: bool = False

    @property
    def role_context(self) -> str:
        if not self.history_snippets:
            return self.role_prefix
        return self.role_prefix + " | recent: " + " / ".join(self.history_snippets)

    def blocks(self) -> list[str]:
        if self.simplified:
            return [self.objective_instruction, self.style_directives]
        return [
            self.role_context,
            self.ckm_assessment,
            self.own_state,
            self.gap_focus,
            self.objective_instruction,
            self.style_directives,
        ]

    def rendered(self) -> str:
        return "\n".join(self.blocks())

    def token_count(self) -> int:
        return len(tokenize(self.rendered()))

    def truncate_to_limit(self) -> None:
        """Drop oldest history snippets first until within the token budget."""
        while self.token_count() > self.max_tokens and self.history_snippets:
            self.history_snippets.pop(0)


def build_directive(
    action: CommAction,
    speaker: int,
    target: int,
    agent_count: int,
    query_text: str,
    phi_summary: str,
    gap_vector: np.ndarray,
    gap_magnitude: float,
    recent_texts: list[str],
    simplified: bool = False,
    broadcast: bool = False,
    max_tokens: int = 512,
) -> RealizationDirective:
    name = OBJECTIVES[action.objective]
    audience = "all agents (broadcast)" if broadcast else f"agent_{target}"
    detail, assertiveness = action.style
    return RealizationDirective(
        speaker=speaker,
        target=target,
        objective_name=name,
        role_prefix=(
            f"you are agent_{speaker} of {agent_count} agents working on: {query_text}"
        ),
        history_snippets=list(recent_texts),
        ckm_assessment=(
            f"collaborator agent_{target}: divergence concentrates on dims "
            f"{gap_focus_summary(gap_vector)}"
        ),
        own_state=f"own state: {phi_summary}",
        gap_focus=f"gap magnitude {gap_magnitude:.4f} for pair (agent_{speaker}, agent_{target})",
        objective_instruction=f"objective: {name} | target: {audience}",
        style_directives=(
            f"style: detail={style_band(detail)} assertiveness={style_band(assertiveness)}"
        ),
        detail=detail,
        assertiveness=assertiveness,
        max_tokens=max_tokens,
        simplified=simplified,
    )
