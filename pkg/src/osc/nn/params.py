"""Named parameter storage with paired gradient and Adam moment buffers."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, MissingEntryError, NumericError


@dataclass
class AdamConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_num: float = 1e-8

    def validate(self) -> None:
        if self.learning_rate <= 0.0:
            raise ConfigurationError(f"learning rate must be positive, got {self.learning_rate}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigurationError(
                f"betas must lie in [0, 1): got {self.beta1}, {self.beta2}"
            )


class ParamEntry:
    __slots__ = ("value", "grad", "m", "v", "step")

    def __init__(self, value: np.ndarray) -> None:
        self.value = value
        self.grad = np.zeros_like(value)
        self.m = np.zeros_like(value)
        self.v = np.zeros_like(value)
        self.step = 0


def _tensor_seed(master_seed: int, name: str) -> np.ndarray:
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
    return np.array([master_seed & 0xFFFFFFFFFFFFFFFF, int.from_bytes(digest, "little")], dtype=np.uint64)


def glorot_uniform(rows: int, cols: int, master_seed: int, name: str) -> np.ndarray:
    """Scale-stable uniform init in +-sqrt(6 / (fan_in + fan_out)).

    Seeded per tensor name so initialization does not depend on creation order.
    """
    rng = np.random.Generator(np.random.Philox(key=_tensor_seed(master_seed, name)))
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


class ParamStore:
    """Ordered mapping of parameter name -> (value, grad, Adam moments)."""

    def __init__(self, seed: int = 0) -> None:
        self._entries: dict[str, ParamEntry] = {}
        self.seed = seed

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self):
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def entry(self, name: str) -> ParamEntry:
        try:
            return self._entries[name]
        except KeyError:
            raise MissingEntryError(f"unknown parameter '{name}'") from None

    def value(self, name: str) -> np.ndarray:
        return self.entry(name).value

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self._entries:
            raise ConfigurationError(f"parameter '{name}' already exists")
        arr = np.ascontiguousarray(value, dtype=np.float64)
        if arr.ndim != 2:
            raise ConfigurationError(f"parameter '{name}' must be 2-D, got {arr.shape}")
        self._entries[name] = ParamEntry(arr)

    def weight(self, name: str, rows: int, cols: int) -> None:
        self.add(name, glorot_uniform(rows, cols, self.seed, name))

    def zeros(self, name: str, rows: int, cols: int) -> None:
        self.add(name, np.zeros((rows, cols)))

    def ones(self, name: str, rows: int, cols: int) -> None:
        self.add(name, np.ones((rows, cols)))

    def zero_grads(self) -> None:
        for entry in self._entries.values():
            entry.grad[:] = 0.0

    def grad_norm(self) -> float:
        total = 0.0
        for entry in self._entries.values():
            total += float((entry.grad * entry.grad).sum())
        return float(np.sqrt(total))

    def copy(self) -> "ParamStore":
        dup = ParamStore(seed=self.seed)
        for name, entry in self._entries.items():
            dup.add(name, np.array(entry.value))
            d = dup.entry(name)
            d.grad[:] = entry.grad
            d.m[:] = entry.m
            d.v[:] = entry.v
            d.step = entry.step
        return dup


def adam_step(store: ParamStore, cfg: AdamConfig) -> None:
    """Apply one bias-corrected Adam update to every entry, then zero grads."""
    cfg.validate()
    for name in store.names():
        entry = store.entry(name)
        if not np.all(np.isfinite(entry.grad)):
            raise NumericError(f"non-finite gradient for parameter '{name}'")
        entry.step += 1
        entry.m = cfg.beta1 * entry.m + (1.0 - cfg.beta1) * entry.grad
        entry.v = cfg.beta2 * entry.v + (1.0 - cfg.beta2) * (entry.grad * entry.grad)
        m_hat = entry.m / (1.0 - cfg.beta1 ** entry.step)
        v_hat = entry.v / (1.0 - cfg.beta2 ** entry.step)
        entry.value -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon_num)
        entry.grad[:] = 0.0
