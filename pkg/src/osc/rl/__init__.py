"""Reinforcement learning: rewards, advantages, rollout storage.

The optimizer (`osc.rl.ppo`) and training loop (`osc.rl.trainer`) are imported
as submodules by their consumers; they depend on the episode engine, which in
turn uses the reward primitives exported here.
"""

from .buffer import RolloutBuffer, TrajectoryStep
from .gae import compute_gae
from .rewards import (
    EVENT_GAP_RESOLUTION,
    EVENT_OBJECTIVE_FULFILLMENT,
    RewardBreakdown,
    RewardConfig,
    ShapingConfig,
    detect_shaping_events,
    phi_query_direction,
    step_reward,
)

__all__ = [
    "RolloutBuffer",
    "TrajectoryStep",
    "compute_gae",
    "RewardBreakdown",
    "RewardConfig",
    "ShapingConfig",
    "step_reward",
    "detect_shaping_events",
    "phi_query_direction",
    "EVENT_GAP_RESOLUTION",
    "EVENT_OBJECTIVE_FULFILLMENT",
]
