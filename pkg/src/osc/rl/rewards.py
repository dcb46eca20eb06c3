"""Composite step rewards and intrinsic shaping triggers.

Every step pays a per-token message cost; the terminal step adds the task
outcome bonus or penalty. A small intrinsic bonus (at most one per step)
rewards verified gap reduction toward the addressed collaborator and fulfilled
information requests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError
from ..gap import GapVector
from ..policy import OBJECTIVES
from ..text import Utterance, cosine

EVENT_GAP_RESOLUTION = "gap_resolution"
EVENT_OBJECTIVE_FULFILLMENT = "objective_fulfillment"

_REQUEST_INFORMATION = OBJECTIVES.index("request_information")


@dataclass
class RewardConfig:
    success_reward: float = 1.0
    failure_reward: float = -0.1
    lambda_cost: float = 0.001


@dataclass
class ShapingConfig:
    r_shape_value: float = 0.05
    gap_drop_fraction: float = 0.2
    tau_conflict: float = 1.0  # significance threshold; calibrated before training
    semantic_match_threshold: float = 0.5
    enabled: bool = True


@dataclass
class RewardBreakdown:
    r_task: float
    c_comm_tokens: int
    lambda_cost: float
    r_shape: float
    total: float

    @classmethod
    def compose(
        cls, r_task: float, c_comm_tokens: int, lambda_cost: float, r_shape: float
    ) -> "RewardBreakdown":
        return cls(
            r_task=r_task,
            c_comm_tokens=c_comm_tokens,
            lambda_cost=lambda_cost,
            r_shape=r_shape,
            total=r_task - lambda_cost * c_comm_tokens + r_shape,
        )

    def identity_holds(self) -> bool:
        return self.total == self.r_task - self.lambda_cost * self.c_comm_tokens + self.r_shape


def step_reward(
    outcome: str | None,
    message_tokens: int,
    shaping_events: list[str],
    reward_cfg: RewardConfig,
    shaping_cfg: ShapingConfig,
) -> RewardBreakdown:
    """Reward for one policy step; `outcome` is set only on the terminal step."""
    if outcome is None:
        r_task = 0.0
    elif outcome == "success":
        r_task = reward_cfg.success_reward
    elif outcome == "failure":
        r_task = reward_cfg.failure_reward
    else:
        raise ContractError(f"unknown episode outcome '{outcome}'")
    # at most one intrinsic bonus per step, regardless of how many events fired
    r_shape = shaping_cfg.r_shape_value if (shaping_events and shaping_cfg.enabled) else 0.0
    return RewardBreakdown.compose(r_task, message_tokens, reward_cfg.lambda_cost, r_shape)


def phi_query_direction(phi_embedding: np.ndarray, query_embedding: np.ndarray) -> np.ndarray:
    """Unit direction combining the requester's own state with the query."""
    combined = phi_embedding + query_embedding
    norm = float(np.linalg.norm(combined))
    return combined / norm if norm > 0.0 else combined


def detect_shaping_events(
    pre_gap: GapVector,
    post_gap: GapVector | None,
    objective: int,
    response: Utterance | None,
    request_direction: np.ndarray | None,
    cfg: ShapingConfig,
) -> list[str]:
    """Events triggered by one action toward its addressed collaborator.

    `pre_gap` is the targeted pair's gap at action time; `post_gap` is the
    same pair after the collaborator's next update (None if it never came).
    """
    events: list[str] = []
    if post_gap is not None and pre_gap.magnitude > cfg.tau_conflict:
        drop = pre_gap.magnitude - post_gap.magnitude
        if drop >= cfg.gap_drop_fraction * pre_gap.magnitude:
            events.append(EVENT_GAP_RESOLUTION)
    if (
        objective == _REQUEST_INFORMATION
        and response is not None
        and request_direction is not None
        and cosine(response.embedding, request_direction) >= cfg.semantic_match_threshold
    ):
        events.append(EVENT_OBJECTIVE_FULFILLMENT)
    return events
