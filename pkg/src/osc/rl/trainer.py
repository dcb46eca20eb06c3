"""Training loop: rollout collection alternating with policy optimization.

Episode workers draw from counter-based generators keyed by (global seed,
episode index), so the collected batch is independent of worker scheduling;
results are reduced in episode order. The update phase owns the parameters
exclusively. A per-update metrics row goes to CSV and checkpoints are written
at a configurable interval plus at the end.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..engine.ablation import AblationFlags
from ..engine.backends import HttpRealizer
from ..engine.episode import EpisodeTrace, run_episode
from ..model import ModelBundle
from ..runcfg import RunConfig
from .buffer import RolloutBuffer
from .ppo import ppo_update

METRICS_COLUMNS = (
    "update_idx",
    "steps",
    "mean_return",
    "mean_r_task",
    "mean_c_comm",
    "mean_r_shape",
    "policy_loss",
    "value_loss",
    "entropy",
    "mean_gap_magnitude",
)

CALIBRATION_SEED_OFFSET = 101


@dataclass
class TrainResult:
    updates: int = 0
    steps: int = 0
    tau_conflict: float = 0.0
    metrics_path: Path | None = None
    checkpoint_dir: Path | None = None
    wall_seconds: float = 0.0
    final_mean_return: float = 0.0
    metrics_rows: list[dict] = field(default_factory=list)


def collect_episodes(
    run_cfg: RunConfig,
    bundle: ModelBundle,
    episode_cfg,
    count: int,
    global_seed: int,
    start_index: int,
    collect_training: bool,
    workers: int = 1,
    realizer: HttpRealizer | None = None,
) -> list[EpisodeTrace]:
    """Run `count` episodes with indices start_index..start_index+count-1."""

    def one(index: int) -> EpisodeTrace:
        return run_episode(
            episode_cfg,
            bundle,
            run_cfg.reward_config(),
            run_cfg.shaping_config(),
            global_seed=global_seed,
            episode_index=index,
            collect_training=collect_training,
            realizer=realizer,
        )

    indices = list(range(start_index, start_index + count))
    if workers <= 1:
        return [one(i) for i in indices]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, indices))


def calibrate_tau_conflict(run_cfg: RunConfig, bundle: ModelBundle) -> float:
    """75th percentile of gap magnitudes over policy-free calibration episodes."""
    episode_cfg = run_cfg.episode_config(
        mode="stochastic", ablation=AblationFlags(no_policy=True)
    )
    traces = collect_episodes(
        run_cfg,
        bundle,
        episode_cfg,
        count=run_cfg.reward.calibration_episodes,
        global_seed=run_cfg.seed + CALIBRATION_SEED_OFFSET,
        start_index=0,
        collect_training=False,
        workers=run_cfg.train.workers,
    )
    magnitudes = [
        magnitude
        for trace in traces
        for step in trace.steps
        for magnitude in step.gap_magnitudes.values()
    ]
    return float(np.percentile(np.array(magnitudes), 75.0))


def _batch_stats(traces: list[EpisodeTrace]) -> dict[str, float]:
    returns = [t.episode_return for t in traces]
    r_tasks = [t.steps[-1].reward.r_task for t in traces]
    tokens = [sum(s.message_tokens for s in t.steps) for t in traces]
    shapes = [sum(s.reward.r_shape for s in t.steps) for t in traces]
    gaps = [
        magnitude
        for t in traces
        for s in t.steps
        for magnitude in s.gap_magnitudes.values()
    ]
    return {
        "mean_return": float(np.mean(returns)),
        "mean_r_task": float(np.mean(r_tasks)),
        "mean_c_comm": float(np.mean(tokens)),
        "mean_r_shape": float(np.mean(shapes)),
        "mean_gap_magnitude": float(np.mean(gaps)),
    }


def train(
    run_cfg: RunConfig,
    bundle: ModelBundle,
    out_dir: str | Path,
    ablation: AblationFlags | None = None,
    realizer: HttpRealizer | None = None,
) -> TrainResult:
    started = time.time()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ablation = ablation or AblationFlags()
    if run_cfg.reward.needs_calibration():
        run_cfg.reward.tau_conflict = calibrate_tau_conflict(run_cfg, bundle)

    episode_cfg = run_cfg.episode_config(mode=run_cfg.episode.train_mode, ablation=ablation)
    steps_per_episode = episode_cfg.agent_count * episode_cfg.n_round
    episodes_per_batch = max(1, run_cfg.ppo.batch_steps // steps_per_episode)
    update_rng = np.random.Generator(
        np.random.Philox(key=np.array([run_cfg.seed, 0xA11CE], dtype=np.uint64))
    )

    metrics_path = out_dir / "train_log.csv"
    checkpoint_root = out_dir / "checkpoints"
    result = TrainResult(tau_conflict=run_cfg.reward.tau_conflict, metrics_path=metrics_path)

    with open(metrics_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        episode_index = 0
        steps_done = 0
        update_idx = 0
        while steps_done < run_cfg.train.total_steps:
            traces = collect_episodes(
                run_cfg,
                bundle,
                episode_cfg,
                count=episodes_per_batch,
                global_seed=run_cfg.seed,
                start_index=episode_index,
                collect_training=True,
                workers=run_cfg.train.workers,
                realizer=realizer,
            )
            episode_index += episodes_per_batch
            valid = [t for t in traces if t.valid]
            buffer = RolloutBuffer.from_episodes(
                [t.train_steps for t in valid], run_cfg.ppo.gamma, run_cfg.ppo.gae_lambda
            )
            steps_done += len(buffer)
            loss_stats = ppo_update(buffer, bundle, run_cfg.ppo, ablation, update_rng)
            update_idx += 1
            stats = _batch_stats(valid)
            row = {
                "update_idx": update_idx,
                "steps": steps_done,
                **stats,
                "policy_loss": loss_stats["policy_loss"],
                "value_loss": loss_stats["value_loss"],
                "entropy": loss_stats["entropy"],
            }
            writer.writerow([row[c] for c in METRICS_COLUMNS])
            fh.flush()
            result.metrics_rows.append(row)
            result.final_mean_return = stats["mean_return"]
            if run_cfg.train.checkpoint_interval > 0 and (
                update_idx % run_cfg.train.checkpoint_interval == 0
            ):
                bundle.save(checkpoint_root / f"update_{update_idx:06d}")
        result.updates = update_idx
        result.steps = steps_done

    final_dir = checkpoint_root / "final"
    bundle.save(final_dir)
    result.checkpoint_dir = final_dir
    result.wall_seconds = time.time() - started
    return result
