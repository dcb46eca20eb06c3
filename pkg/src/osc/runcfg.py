"""Run configuration: INI-style sections with strict key validation.

Every default is the engine's standard operating point; a config file only
needs the keys it overrides. Unknown sections or keys are rejected so a typo
cannot silently fall back to a default. `save_config` writes the fully
expanded configuration back out, which makes any run reproducible from its
run directory alone.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .ckm import CkmNetConfig
from .engine.ablation import AblationFlags
from .engine.backends import HttpBackendConfig
from .errors import ConfigurationError
from .gap import GapNetConfig
from .policy import PolicyNetConfig
from .rl.ppo import PpoConfig
from .rl.rewards import RewardConfig, ShapingConfig


@dataclass
class EpisodeBlock:
    agents: int = 4
    n_round: int = 4
    task: str = "hidden_sum"
    train_mode: str = "stochastic"
    eval_mode: str = "greedy"
    broadcast: bool = False
    max_prompt_tokens: int = 512
    directive_history: int = 2


@dataclass
class TrainBlock:
    total_steps: int = 50_000
    workers: int = 1
    checkpoint_interval: int = 10
    trace_sample_episodes: int = 0


@dataclass
class RewardBlock:
    lambda_cost: float = 0.001
    success_reward: float = 1.0
    failure_reward: float = -0.1
    r_shape_value: float = 0.05
    gap_drop_fraction: float = 0.2
    semantic_match_threshold: float = 0.5
    tau_conflict: float = -1.0  # negative means: calibrate before use
    tau_resolve_fraction: float = 0.5
    calibration_episodes: int = 100
    shaping: bool = True

    def needs_calibration(self) -> bool:
        return self.tau_conflict < 0.0


@dataclass
class PretrainBlock:
    lr: float = 1e-4
    epochs: int = 5
    batch_size: int = 32
    window: int = 5
    contrastive_margin: float = 1.0
    corpus_dialogues: int = 200


@dataclass
class BackendBlock:
    kind: str = "stub"
    base_url: str = ""
    model: str = ""
    temperature: float = 0.7
    top_p: float = 0.9
    max_tokens: int = 512
    retries: int = 2
    backoff_seconds: float = 0.5
    timeout_seconds: float = 30.0


@dataclass
class RunConfig:
    seed: int = 0
    ppo: PpoConfig = field(default_factory=PpoConfig)
    policy: PolicyNetConfig = field(default_factory=PolicyNetConfig)
    ckm: CkmNetConfig = field(default_factory=CkmNetConfig)
    gap: GapNetConfig = field(default_factory=GapNetConfig)
    reward: RewardBlock = field(default_factory=RewardBlock)
    episode: EpisodeBlock = field(default_factory=EpisodeBlock)
    train: TrainBlock = field(default_factory=TrainBlock)
    backend: BackendBlock = field(default_factory=BackendBlock)
    pretrain: PretrainBlock = field(default_factory=PretrainBlock)

    def reward_config(self) -> RewardConfig:
        return RewardConfig(
            success_reward=self.reward.success_reward,
            failure_reward=self.reward.failure_reward,
            lambda_cost=self.reward.lambda_cost,
        )

    def shaping_config(self) -> ShapingConfig:
        return ShapingConfig(
            r_shape_value=self.reward.r_shape_value,
            gap_drop_fraction=self.reward.gap_drop_fraction,
            tau_conflict=self.reward.tau_conflict,
            semantic_match_threshold=self.reward.semantic_match_threshold,
            enabled=self.reward.shaping,
        )

    def episode_config(self, mode: str, ablation: AblationFlags | None = None):
        from .engine.episode import EpisodeConfig

        return EpisodeConfig(
            agent_count=self.episode.agents,
            n_round=self.episode.n_round,
            backend=self.backend.kind,
            task=self.episode.task,
            mode=mode,
            broadcast=self.episode.broadcast,
            max_prompt_tokens=self.episode.max_prompt_tokens,
            directive_history=self.episode.directive_history,
            ablation=ablation or AblationFlags(),
        )

    def http_config(self) -> HttpBackendConfig:
        return HttpBackendConfig(
            base_url=self.backend.base_url,
            model=self.backend.model,
            temperature=self.backend.temperature,
            top_p=self.backend.top_p,
            max_tokens=self.backend.max_tokens,
            retries=self.backend.retries,
            backoff_seconds=self.backend.backoff_seconds,
            timeout_seconds=self.backend.timeout_seconds,
        )


_SECTIONS = {
    "run": None,  # holds the top-level seed
    "ppo": "ppo",
    "policy": "policy",
    "ckm": "ckm",
    "gap": "gap",
    "reward": "reward",
    "episode": "episode",
    "train": "train",
    "backend": "backend",
    "pretrain": "pretrain",
}


def _parse_value(raw: str, kind: type):
    if kind is bool:
        lowered = raw.strip().lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ConfigurationError(f"expected a boolean, got '{raw}'")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw


def load_config(path: str | Path | None) -> RunConfig:
    """Defaults overlaid with the file's key = value sections, strictly."""
    cfg = RunConfig()
    if path is None:
        return cfg
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.read(path, encoding="utf-8")
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigurationError(f"unknown config section [{section}]")
        if section == "run":
            for key, raw in parser.items(section):
                if key != "seed":
                    raise ConfigurationError(f"unknown key '{key}' in [run]")
                cfg.seed = int(raw)
            continue
        block = getattr(cfg, _SECTIONS[section])
        known = {f.name: f.type for f in fields(block)}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigurationError(f"unknown key '{key}' in [{section}]")
            current = getattr(block, key)
            setattr(block, key, _parse_value(raw, type(current)))
    return cfg


def save_config(cfg: RunConfig, path: str | Path) -> None:
    """Write the fully resolved configuration (defaults expanded)."""
    parser = configparser.ConfigParser()
    parser["run"] = {"seed": str(cfg.seed)}
    for section, attr in _SECTIONS.items():
        if attr is None:
            continue
        block = getattr(cfg, attr)
        parser[section] = {
            f.name: str(getattr(block, f.name)) for f in fields(block)
        }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)


def clone_config(cfg: RunConfig) -> RunConfig:
    return dataclasses.replace(
        cfg,
        ppo=dataclasses.replace(cfg.ppo),
        policy=dataclasses.replace(cfg.policy),
        ckm=dataclasses.replace(cfg.ckm),
        gap=dataclasses.replace(cfg.gap),
        reward=dataclasses.replace(cfg.reward),
        episode=dataclasses.replace(cfg.episode),
        train=dataclasses.replace(cfg.train),
        backend=dataclasses.replace(cfg.backend),
        pretrain=dataclasses.replace(cfg.pretrain),
    )
