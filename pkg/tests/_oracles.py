"""Shared independent oracles: finite differences and scalar references."""

from __future__ import annotations

import numpy as np

FD_STEP = 1e-5
FD_TOL = 1e-4


def rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-6)


def central_diff(f, arr: np.ndarray, idx: tuple[int, int], h: float = FD_STEP) -> float:
    """Central finite difference of scalar f() w.r.t. arr[idx], in place."""
    orig = arr[idx]
    arr[idx] = orig + h
    up = f()
    arr[idx] = orig - h
    down = f()
    arr[idx] = orig
    return (up - down) / (2.0 * h)


def check_grad_matrix(
    f,
    arr: np.ndarray,
    analytic: np.ndarray,
    rng: np.random.Generator,
    n_coords: int = 5,
    tol: float = FD_TOL,
) -> float:
    """Compare analytic grads against central differences at random coords.

    Returns the worst relative error seen; asserts it is below tol.
    """
    rows, cols = arr.shape
    worst = 0.0
    for _ in range(n_coords):
        idx = (int(rng.integers(rows)), int(rng.integers(cols)))
        numeric = central_diff(f, arr, idx)
        err = rel_err(float(analytic[idx]), numeric)
        worst = max(worst, err)
        assert err < tol, (
            f"gradient mismatch at {idx}: analytic {analytic[idx]!r} "
            f"vs numeric {numeric!r} (rel err {err:.2e})"
        )
    return worst


def scalar_adam_reference(
    grads: list[float],
    x0: float,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> float:
    """Plain-float Adam trajectory, independent of the array implementation."""
    x, m, v = x0, 0.0, 0.0
    for step, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**step)
        v_hat = v / (1 - beta2**step)
        x -= lr * m_hat / (v_hat**0.5 + eps)
    return x


def gae_brute_force(
    rewards: list[float], values: list[float], bootstrap: float, gamma: float, lam: float
) -> tuple[list[float], list[float]]:
    """Advantage as the explicit double sum of discounted TD residuals."""
    n = len(rewards)
    vals = list(values) + [bootstrap]
    deltas = [rewards[t] + gamma * vals[t + 1] - vals[t] for t in range(n)]
    advantages = []
    for t in range(n):
        acc = 0.0
        for l in range(n - t):
            acc += (gamma * lam) ** l * deltas[t + l]
        advantages.append(acc)
    returns = [a + v for a, v in zip(advantages, values)]
    return advantages, returns
