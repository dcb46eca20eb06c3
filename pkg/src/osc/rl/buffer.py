"""Rollout records and storage flattened into training arrays."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError
from .gae import compute_gae


@dataclass
class TrajectoryStep:
    """One policy step with everything needed to rebuild its forward pass."""

    phi: np.ndarray
    query: np.ndarray
    history_vec: np.ndarray
    pair_modes: list[str]     # per collaborator slot: encode | gru | const
    pair_z_prev: np.ndarray   # (k-1, gru_dim): state before the last update
    pair_x_raw: np.ndarray    # (k-1, gru_in): raw features of the last update
    pair_z_used: np.ndarray   # (k-1, gru_dim): state the policy actually saw
    pair_g_used: np.ndarray   # (k-1, 64): gap the policy actually saw
    pair_act: np.ndarray      # (k-1,): act of the last update message, -1 if none
    objective: int
    target_index: int
    style: tuple[float, float]
    log_prob: float
    value: float
    reward_total: float = 0.0
    done: bool = False


@dataclass
class RolloutBuffer:
    steps: list[TrajectoryStep]
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self) -> int:
        return len(self.steps)

    @classmethod
    def from_episodes(
        cls, episodes: list[list[TrajectoryStep]], gamma: float, lam: float
    ) -> "RolloutBuffer":
        steps: list[TrajectoryStep] = []
        advantages: list[np.ndarray] = []
        returns: list[np.ndarray] = []
        for episode in episodes:
            if not episode:
                continue
            if sum(1 for s in episode if s.done) != 1 or not episode[-1].done:
                raise ContractError("every episode must end with exactly one terminal step")
            rewards = np.array([s.reward_total for s in episode])
            values = np.array([s.value for s in episode])
            adv, ret = compute_gae(rewards, values, gamma, lam, bootstrap=0.0)
            steps.extend(episode)
            advantages.append(adv)
            returns.append(ret)
        if not steps:
            raise ContractError("empty rollout buffer")
        return cls(
            steps=steps,
            advantages=np.concatenate(advantages),
            returns=np.concatenate(returns),
        )
