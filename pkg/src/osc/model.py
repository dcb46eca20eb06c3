"""Bundle of all trainable components with checkpoint round-trips."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .ckm import CkmNetConfig, build_ckm_store, build_update_store
from .errors import ConfigurationError
from .gap import GapNetConfig, build_gap_store
from .nn import ParamStore, load_store, save_store
from .nn.layers import build_dense
from .policy import PolicyNetConfig, build_critic_store, build_policy_store
from .text import DIALOGUE_ACTS, EMBED_DIM

STORE_NAMES = ("ckm", "update", "gap", "policy", "critic")


@dataclass
class ModelBundle:
    ckm_cfg: CkmNetConfig
    gap_cfg: GapNetConfig
    policy_cfg: PolicyNetConfig
    stores: dict[str, ParamStore] = field(default_factory=dict)

    @classmethod
    def build(
        cls,
        seed: int,
        ckm_cfg: CkmNetConfig | None = None,
        gap_cfg: GapNetConfig | None = None,
        policy_cfg: PolicyNetConfig | None = None,
    ) -> "ModelBundle":
        ckm_cfg = ckm_cfg or CkmNetConfig()
        gap_cfg = gap_cfg or GapNetConfig()
        policy_cfg = policy_cfg or PolicyNetConfig()
        ckm_store = build_ckm_store(ckm_cfg, seed)
        # pre-training heads ride along with the encoder they probe
        build_dense(ckm_store, "ckm.mask_head", ckm_cfg.model_dim, EMBED_DIM)
        build_dense(ckm_store, "ckm.act_head", ckm_cfg.gru_dim, len(DIALOGUE_ACTS))
        stores = {
            "ckm": ckm_store,
            "update": build_update_store(ckm_cfg, seed + 1),
            "gap": build_gap_store(gap_cfg, seed + 2),
            "policy": build_policy_store(policy_cfg, seed + 3),
            "critic": build_critic_store(policy_cfg, seed + 4),
        }
        return cls(ckm_cfg=ckm_cfg, gap_cfg=gap_cfg, policy_cfg=policy_cfg, stores=stores)

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        headers = {
            "ckm": self.ckm_cfg.header(),
            "update": self.ckm_cfg.header(),
            "gap": self.gap_cfg.header(),
            "policy": self.policy_cfg.header(),
            "critic": self.policy_cfg.header(),
        }
        for name in STORE_NAMES:
            save_store(directory / f"{name}.osck", self.stores[name], header=headers[name])

    @classmethod
    def load(
        cls,
        directory: str | Path,
        ckm_cfg: CkmNetConfig | None = None,
        gap_cfg: GapNetConfig | None = None,
        policy_cfg: PolicyNetConfig | None = None,
    ) -> "ModelBundle":
        directory = Path(directory)
        stores: dict[str, ParamStore] = {}
        headers: dict[str, dict] = {}
        for name in STORE_NAMES:
            path = directory / f"{name}.osck"
            if not path.exists():
                raise ConfigurationError(f"checkpoint component missing: {path}")
            stores[name], headers[name] = load_store(path)
        ckm_cfg = ckm_cfg or CkmNetConfig(**headers["ckm"])
        gap_cfg = gap_cfg or GapNetConfig(**headers["gap"])
        policy_cfg = policy_cfg or PolicyNetConfig(**{
            k: v for k, v in headers["policy"].items()
        })
        for name, cfg_header in (
            ("ckm", ckm_cfg.header()),
            ("gap", gap_cfg.header()),
            ("policy", policy_cfg.header()),
        ):
            if headers[name] != cfg_header:
                raise ConfigurationError(
                    f"checkpoint metadata for '{name}' {headers[name]} does not match "
                    f"the active configuration {cfg_header}"
                )
        return cls(ckm_cfg=ckm_cfg, gap_cfg=gap_cfg, policy_cfg=policy_cfg, stores=stores)
