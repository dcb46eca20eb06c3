"""Generalized advantage estimation over one episode's reward/value arrays."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError


def compute_gae(
    rewards: np.ndarray,
    values: np.ndarray,
    gamma: float,
    lam: float,
    bootstrap: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Backward-recursive lambda-weighted TD advantages and value targets.

    `bootstrap` is the value of the state after the final step (zero at a true
    terminal). Returns are advantages + values.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape or rewards.ndim != 1:
        raise ContractError(
            f"rewards {rewards.shape} and values {values.shape} must be equal-length vectors"
        )
    n = rewards.shape[0]
    advantages = np.zeros(n)
    next_value = bootstrap
    acc = 0.0
    for t in range(n - 1, -1, -1):
        delta = rewards[t] + gamma * next_value - values[t]
        acc = delta + gamma * lam * acc
        advantages[t] = acc
        next_value = values[t]
    return advantages, advantages + values
