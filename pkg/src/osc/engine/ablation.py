"""Ablation switches that rewire the episode pipeline."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from ..errors import ConfigurationError
from ..text import DIALOGUE_ACTS


@dataclass
class AblationFlags:
    no_ckm: bool = False
    no_gap: bool = False
    no_policy: bool = False
    no_shaping: bool = False
    fixed_objective: bool = False
    no_style: bool = False
    simplified_prompt: bool = False
    gap_l2: bool = False
    gap_mlp: bool = False
    update_avg: bool = False
    update_static: bool = False
    ckm_ling_only: bool = False
    ckm_reas_only: bool = False

    @classmethod
    def names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    @classmethod
    def from_names(cls, names: list[str]) -> "AblationFlags":
        flags = cls()
        valid = set(cls.names())
        for name in names:
            key = name.strip()
            if not key:
                continue
            if key not in valid:
                raise ConfigurationError(f"unknown ablation flag '{key}' (have: {sorted(valid)})")
            setattr(flags, key, True)
        flags.validate()
        return flags

    def active(self) -> list[str]:
        return [name for name in self.names() if getattr(self, name)]

    def validate(self) -> None:
        gap_modes = [self.no_gap, self.gap_l2, self.gap_mlp]
        if sum(gap_modes) > 1:
            raise ConfigurationError("at most one of no_gap / gap_l2 / gap_mlp may be set")
        if self.update_avg and self.update_static:
            raise ConfigurationError("update_avg and update_static are mutually exclusive")
        if self.no_ckm and (self.update_avg or self.update_static):
            raise ConfigurationError("no_ckm already disables updates; update_* flags conflict")
        if self.ckm_ling_only and self.ckm_reas_only:
            raise ConfigurationError("ckm_ling_only and ckm_reas_only are mutually exclusive")
        if self.no_policy and (self.fixed_objective or self.no_style):
            raise ConfigurationError("no_policy replaces the sampler; action flags conflict")

    @property
    def gap_variant(self) -> str:
        if self.no_gap:
            return "raw_diff"
        if self.gap_l2:
            return "l2"
        if self.gap_mlp:
            return "mlp_only"
        return "learned"

    def profile_mask(self) -> np.ndarray | None:
        """Channel mask over [sentiment, certainty, interrogative, acts.., claim, evidence]."""
        if not (self.ckm_ling_only or self.ckm_reas_only):
            return None
        mask = np.zeros(3 + len(DIALOGUE_ACTS) + 2)
        if self.ckm_ling_only:
            mask[: 3 + len(DIALOGUE_ACTS)] = 1.0
        else:
            mask[3 + len(DIALOGUE_ACTS) :] = 1.0
        return mask
