"""Experiment drivers: evaluation, scalability sweep, reward study, plot data."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .engine.ablation import AblationFlags
from .engine.backends import HttpRealizer
from .engine.episode import EpisodeTrace
from .engine.trace_io import write_traces
from .errors import ConfigurationError
from .metrics import compute_comm_metrics, mean_return, success_rate
from .model import ModelBundle
from .rl.trainer import calibrate_tau_conflict, collect_episodes, train
from .runcfg import RunConfig, clone_config

EVAL_COLUMNS = (
    "episodes",
    "success_rate_pct",
    "mean_return",
    "avg_rounds",
    "avg_tokens_k",
    "redundancy_pct",
    "conflict_resolution_pct",
    "info_density_pct",
    "no_conflicts_detected",
)

SWEEP_COLUMNS = (
    "agents",
    "episodes",
    "success_rate_pct",
    "mean_return",
    "avg_rounds",
    "avg_tokens_k",
    "redundancy_pct",
    "conflict_resolution_pct",
    "info_density_pct",
    "messages_per_episode",
    "ckm_pairs",
)

REWARD_STUDY_VARIANTS = ("task_only", "task_cost", "full")
REWARD_STUDY_COLUMNS = (
    "variant",
    "total_steps",
    "success_rate_pct",
    "mean_return_full_eval",
    "mean_r_shape",
    "avg_tokens_k",
    "redundancy_pct",
    "conflict_resolution_pct",
)


def make_realizer(run_cfg: RunConfig) -> HttpRealizer | None:
    if run_cfg.backend.kind != "http":
        return None
    return HttpRealizer(run_cfg.http_config())


def ensure_tau(run_cfg: RunConfig, bundle: ModelBundle) -> None:
    if run_cfg.reward.needs_calibration():
        run_cfg.reward.tau_conflict = calibrate_tau_conflict(run_cfg, bundle)


def evaluate(
    run_cfg: RunConfig,
    bundle: ModelBundle,
    episodes: int,
    seed: int,
    mode: str | None = None,
    ablation: AblationFlags | None = None,
    debug_states: bool = False,
) -> list[EpisodeTrace]:
    ensure_tau(run_cfg, bundle)
    episode_cfg = run_cfg.episode_config(
        mode=mode or run_cfg.episode.eval_mode, ablation=ablation
    )
    episode_cfg.debug_states = debug_states
    return collect_episodes(
        run_cfg,
        bundle,
        episode_cfg,
        count=episodes,
        global_seed=seed,
        start_index=0,
        collect_training=False,
        workers=run_cfg.train.workers,
        realizer=make_realizer(run_cfg),
    )


def eval_row(traces: list[EpisodeTrace], run_cfg: RunConfig) -> dict:
    metrics = compute_comm_metrics(
        traces,
        run_cfg.reward.tau_conflict,
        run_cfg.reward.tau_conflict * run_cfg.reward.tau_resolve_fraction,
    )
    return {
        "episodes": len(traces),
        "success_rate_pct": 100.0 * success_rate(traces),
        "mean_return": mean_return(traces),
        "avg_rounds": metrics.avg_rounds,
        "avg_tokens_k": metrics.avg_tokens_k,
        "redundancy_pct": metrics.redundancy_pct,
        "conflict_resolution_pct": metrics.conflict_resolution_pct,
        "info_density_pct": metrics.info_density_pct,
        "no_conflicts_detected": metrics.no_conflicts_detected,
    }


def write_csv(path: str | Path, columns: tuple[str, ...], rows: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([row[c] for c in columns])


def run_eval(
    run_cfg: RunConfig,
    bundle: ModelBundle,
    episodes: int,
    seed: int,
    out_dir: str | Path,
    mode: str | None = None,
    ablation: AblationFlags | None = None,
) -> dict:
    out_dir = Path(out_dir)
    traces = evaluate(run_cfg, bundle, episodes, seed, mode=mode, ablation=ablation)
    write_traces(out_dir / "traces.jsonl", traces)
    row = eval_row(traces, run_cfg)
    write_csv(out_dir / "eval_metrics.csv", EVAL_COLUMNS, [row])
    return row


def sweep_agents(
    run_cfg: RunConfig,
    bundle: ModelBundle,
    episodes: int,
    seed: int,
    out_dir: str | Path,
    counts: tuple[int, ...] = (2, 4, 6, 8, 10),
) -> list[dict]:
    """Evaluate each team size; the protocol columns expose the shape counts."""
    for count in counts:
        if not 2 <= count <= 10:
            raise ConfigurationError(f"agent count {count} outside supported range 2..10")
    rows = []
    for count in counts:
        cfg_k = clone_config(run_cfg)
        cfg_k.episode.agents = count
        ensure_tau(cfg_k, bundle)
        traces = evaluate(cfg_k, bundle, episodes, seed)
        row = eval_row(traces, cfg_k)
        messages = {len(t.steps) for t in traces}
        row = {
            "agents": count,
            **row,
            "messages_per_episode": messages.pop() if len(messages) == 1 else -1,
            "ckm_pairs": count * (count - 1),
        }
        rows.append(row)
    write_csv(Path(out_dir) / "sweep.csv", SWEEP_COLUMNS, rows)
    return rows


def reward_component_study(
    run_cfg: RunConfig,
    out_dir: str | Path,
    eval_episodes: int = 200,
    eval_seed: int | None = None,
) -> list[dict]:
    """Train the three reward variants, then score each on the full reward.

    Evaluation uses one shared (full) reward configuration and seed set so the
    variants' returns are directly comparable.
    """
    out_dir = Path(out_dir)
    eval_seed = run_cfg.seed + 202 if eval_seed is None else eval_seed
    base = clone_config(run_cfg)
    base_bundle = ModelBundle.build(
        base.seed, ckm_cfg=base.ckm, gap_cfg=base.gap, policy_cfg=base.policy
    )
    ensure_tau(base, base_bundle)

    rows = []
    for variant in REWARD_STUDY_VARIANTS:
        cfg_v = clone_config(base)
        if variant == "task_only":
            cfg_v.reward.lambda_cost = 0.0
            cfg_v.reward.shaping = False
        elif variant == "task_cost":
            cfg_v.reward.shaping = False
        bundle_v = ModelBundle.build(
            cfg_v.seed, ckm_cfg=cfg_v.ckm, gap_cfg=cfg_v.gap, policy_cfg=cfg_v.policy
        )
        train(cfg_v, bundle_v, out_dir / variant)
        # common yardstick: full reward accounting at evaluation time
        eval_cfg = clone_config(base)
        traces = evaluate(eval_cfg, bundle_v, eval_episodes, eval_seed)
        row = eval_row(traces, eval_cfg)
        rows.append(
            {
                "variant": variant,
                "total_steps": cfg_v.train.total_steps,
                "success_rate_pct": row["success_rate_pct"],
                "mean_return_full_eval": row["mean_return"],
                "mean_r_shape": float(
                    np.mean([sum(s.reward.r_shape for s in t.steps) for t in traces])
                ),
                "avg_tokens_k": row["avg_tokens_k"],
                "redundancy_pct": row["redundancy_pct"],
                "conflict_resolution_pct": row["conflict_resolution_pct"],
            }
        )
    write_csv(out_dir / "reward_study.csv", REWARD_STUDY_COLUMNS, rows)
    return rows


def dump_nround_plot_data(
    run_cfg: RunConfig,
    bundle: ModelBundle,
    out_path: str | Path,
    episodes: int,
    seed: int,
    rounds: tuple[int, ...] = (2, 3, 4, 5),
) -> list[dict]:
    """Round-count tuning curve: evaluate the checkpoint across budgets."""
    rows = []
    for n_round in rounds:
        cfg_r = clone_config(run_cfg)
        cfg_r.episode.n_round = n_round
        ensure_tau(cfg_r, bundle)
        traces = evaluate(cfg_r, bundle, episodes, seed)
        row = eval_row(traces, cfg_r)
        rows.append(
            {
                "n_round": n_round,
                "success_rate_pct": row["success_rate_pct"],
                "mean_return": row["mean_return"],
                "avg_tokens_k": row["avg_tokens_k"],
            }
        )
    write_csv(out_path, ("n_round", "success_rate_pct", "mean_return", "avg_tokens_k"), rows)
    return rows


def dump_pretrain_compare(
    frozen_log: str | Path, end_to_end_log: str | Path, out_path: str | Path
) -> list[dict]:
    """Merge two training logs into one comparison curve by update index."""

    def read_log(path: str | Path) -> dict[int, dict]:
        with open(path, newline="", encoding="utf-8") as fh:
            return {int(row["update_idx"]): row for row in csv.DictReader(fh)}

    frozen = read_log(frozen_log)
    tuned = read_log(end_to_end_log)
    rows = []
    for update_idx in sorted(set(frozen) & set(tuned)):
        rows.append(
            {
                "update_idx": update_idx,
                "steps": int(frozen[update_idx]["steps"]),
                "mean_return_pretrain_only": float(frozen[update_idx]["mean_return"]),
                "mean_return_end_to_end": float(tuned[update_idx]["mean_return"]),
            }
        )
    write_csv(
        out_path,
        ("update_idx", "steps", "mean_return_pretrain_only", "mean_return_end_to_end"),
        rows,
    )
    return rows
