"""Command-line experiment drivers.

Subcommands: pretrain-ckm, train, eval, ablate, sweep, replay, reward-study,
dump-plot-data. Every run writes its fully resolved configuration into the
output directory so results can be reproduced bit for bit.

Exit codes: 0 success, 2 configuration/usage error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .audit import AuditFailure, run_ablation_audit
from .drivers import (
    dump_nround_plot_data,
    dump_pretrain_compare,
    reward_component_study,
    run_eval,
    sweep_agents,
    write_csv,
)
from .engine.ablation import AblationFlags
from .engine.trace_io import read_traces, replay_reward_totals
from .errors import ConfigurationError, OscError
from .metrics import compute_comm_metrics
from .model import ModelBundle
from .pretrain import PretrainConfig, generate_corpus, load_corpus, pretrain_ckm
from .rl.trainer import train
from .runcfg import RunConfig, load_config, save_config


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="osc", description="multi-agent collaboration engine"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, checkpoint: bool = False) -> None:
        p.add_argument("--config", default=None, help="INI config file (defaults if omitted)")
        p.add_argument("--out", required=True, help="run directory for outputs")
        p.add_argument("--seed", type=int, default=None, help="override [run] seed")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="checkpoint directory")

    p = sub.add_parser("pretrain-ckm", help="self-supervised collaborator-model init")
    common(p)
    p.add_argument("--corpus", default=None, help="dialogue corpus (JSONL); generated if omitted")
    p.add_argument("--epochs", type=int, default=None)

    p = sub.add_parser("train", help="PPO training")
    common(p)
    p.add_argument("--checkpoint", default=None, help="initial checkpoint directory")
    p.add_argument("--steps", type=int, default=None, help="override total training steps")
    p.add_argument("--agents", type=int, default=None)
    p.add_argument("--ablation", default="", help="comma-separated ablation flags")
    p.add_argument("--freeze-ckm", action="store_true")
    p.add_argument("--freeze-gap", action="store_true")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p, checkpoint=True)
    p.add_argument("--episodes", type=int, default=200)
    p.add_argument("--agents", type=int, default=None)
    p.add_argument("--backend", choices=("stub", "http"), default=None)
    p.add_argument("--ablation", default="")
    p.add_argument("--mode", choices=("greedy", "stochastic"), default=None)

    p = sub.add_parser("ablate", help="run ablation variants with trace audits")
    common(p, checkpoint=True)
    p.add_argument("--flags", default="all", help="comma list of flags, or 'all'")
    p.add_argument("--episodes", type=int, default=20)

    p = sub.add_parser("sweep", help="scalability sweep over team sizes")
    common(p, checkpoint=True)
    p.add_argument("--episodes", type=int, default=50)
    p.add_argument("--counts", default="2,4,6,8,10")

    p = sub.add_parser("replay", help="re-score a stored trace file")
    p.add_argument("--trace", required=True)
    p.add_argument("--tau-conflict", type=float, default=1.0)

    p = sub.add_parser("reward-study", help="train and compare reward variants")
    common(p)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--episodes", type=int, default=200)

    p = sub.add_parser("dump-plot-data", help="emit CSV curves")
    p.add_argument("--kind", choices=("nround", "pretrain-compare"), required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--episodes", type=int, default=50)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--frozen-log", default=None, help="train_log.csv of the frozen run")
    p.add_argument("--tuned-log", default=None, help="train_log.csv of the end-to-end run")

    return parser


def _load(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "agents", None) is not None:
        cfg.episode.agents = args.agents
    if getattr(args, "backend", None):
        cfg.backend.kind = args.backend
    if getattr(args, "steps", None) is not None:
        cfg.train.total_steps = args.steps
    return cfg


def _bundle_for(cfg: RunConfig, checkpoint: str | None) -> ModelBundle:
    if checkpoint:
        return ModelBundle.load(
            checkpoint, ckm_cfg=cfg.ckm, gap_cfg=cfg.gap, policy_cfg=cfg.policy
        )
    return ModelBundle.build(
        cfg.seed, ckm_cfg=cfg.ckm, gap_cfg=cfg.gap, policy_cfg=cfg.policy
    )


def _snapshot(cfg: RunConfig, out_dir: Path) -> None:
    save_config(cfg, out_dir / "config.resolved.ini")


def _cmd_pretrain(args) -> int:
    cfg = _load(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.corpus:
        corpus = load_corpus(args.corpus)
    else:
        corpus = generate_corpus(cfg.pretrain.corpus_dialogues, cfg.seed, out_dir / "corpus.jsonl")
    bundle = ModelBundle.build(cfg.seed, ckm_cfg=cfg.ckm, gap_cfg=cfg.gap, policy_cfg=cfg.policy)
    pre_cfg = PretrainConfig(
        lr=cfg.pretrain.lr,
        epochs=args.epochs or cfg.pretrain.epochs,
        batch_size=cfg.pretrain.batch_size,
        window=cfg.pretrain.window,
        contrastive_margin=cfg.pretrain.contrastive_margin,
        seed=cfg.seed,
    )
    result = pretrain_ckm(corpus, bundle, pre_cfg)
    bundle.save(out_dir / "checkpoint")
    rows = [
        {"epoch": i + 1, "total_loss": total, **components}
        for i, (total, components) in enumerate(
            zip(result.epoch_losses, result.component_losses)
        )
    ]
    write_csv(
        out_dir / "pretrain_log.csv",
        ("epoch", "total_loss", "masked", "next_act", "contrastive"),
        rows,
    )
    _snapshot(cfg, out_dir)
    print(
        f"pretrained on {len(corpus)} dialogues: next-act accuracy "
        f"{result.next_act_accuracy:.3f} vs majority {result.majority_baseline:.3f}"
    )
    return 0


def _cmd_train(args) -> int:
    cfg = _load(args)
    if args.freeze_ckm:
        cfg.ppo.freeze_ckm = True
    if args.freeze_gap:
        cfg.ppo.freeze_gap = True
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    bundle = _bundle_for(cfg, args.checkpoint)
    ablation = AblationFlags.from_names(args.ablation.split(",")) if args.ablation else None
    result = train(cfg, bundle, out_dir, ablation=ablation)
    _snapshot(cfg, out_dir)
    print(
        f"trained {result.steps} steps in {result.updates} updates "
        f"({result.wall_seconds:.1f}s); final mean return {result.final_mean_return:.4f}"
    )
    return 0


def _cmd_eval(args) -> int:
    cfg = _load(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    bundle = _bundle_for(cfg, args.checkpoint)
    ablation = AblationFlags.from_names(args.ablation.split(",")) if args.ablation else None
    row = run_eval(
        cfg, bundle, args.episodes, cfg.seed, out_dir, mode=args.mode, ablation=ablation
    )
    _snapshot(cfg, out_dir)
    print(
        f"evaluated {row['episodes']} episodes: success {row['success_rate_pct']:.1f}% "
        f"mean return {row['mean_return']:.4f}"
    )
    return 0


def _cmd_ablate(args) -> int:
    cfg = _load(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    bundle = _bundle_for(cfg, args.checkpoint)
    names = list(AblationFlags.names()) if args.flags == "all" else args.flags.split(",")
    reports = []
    failures = 0
    for name in names:
        try:
            reports.append(run_ablation_audit(name.strip(), cfg, bundle, args.episodes, cfg.seed))
        except AuditFailure as exc:
            failures += 1
            reports.append({"flag": name, "episodes": args.episodes, "steps": 0, "passed": False})
            print(f"audit failed for {name}: {exc}", file=sys.stderr)
    write_csv(out_dir / "ablation_audit.csv", ("flag", "episodes", "steps", "passed"), reports)
    _snapshot(cfg, out_dir)
    print(f"audited {len(reports)} ablation flags, {failures} failures")
    return 1 if failures else 0


def _cmd_sweep(args) -> int:
    cfg = _load(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    bundle = _bundle_for(cfg, args.checkpoint)
    counts = tuple(int(c) for c in args.counts.split(","))
    rows = sweep_agents(cfg, bundle, args.episodes, cfg.seed, out_dir, counts)
    _snapshot(cfg, out_dir)
    for row in rows:
        print(
            f"k={row['agents']}: success {row['success_rate_pct']:.1f}% "
            f"messages {row['messages_per_episode']} pairs {row['ckm_pairs']}"
        )
    return 0


def _cmd_replay(args) -> int:
    traces = read_traces(args.trace)
    replay_reward_totals(traces)
    metrics = compute_comm_metrics(traces, args.tau_conflict)
    print(
        f"replayed {len(traces)} episodes: reward identity holds; "
        f"redundancy {metrics.redundancy_pct:.2f}% info density {metrics.info_density_pct:.2f}%"
    )
    return 0


def _cmd_reward_study(args) -> int:
    cfg = _load(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = reward_component_study(cfg, out_dir, eval_episodes=args.episodes)
    _snapshot(cfg, out_dir)
    for row in rows:
        print(
            f"{row['variant']}: success {row['success_rate_pct']:.1f}% "
            f"full-reward return {row['mean_return_full_eval']:.4f}"
        )
    return 0


def _cmd_dump_plot_data(args) -> int:
    if args.kind == "pretrain-compare":
        if not (args.frozen_log and args.tuned_log):
            raise ConfigurationError("pretrain-compare needs --frozen-log and --tuned-log")
        rows = dump_pretrain_compare(args.frozen_log, args.tuned_log, args.out)
        print(f"wrote {len(rows)} comparison rows to {args.out}")
        return 0
    cfg = _load(args)
    if not args.checkpoint:
        raise ConfigurationError("nround plot data needs --checkpoint")
    bundle = _bundle_for(cfg, args.checkpoint)
    rows = dump_nround_plot_data(cfg, bundle, args.out, args.episodes, cfg.seed)
    print(f"wrote {len(rows)} round-budget rows to {args.out}")
    return 0


_COMMANDS = {
    "pretrain-ckm": _cmd_pretrain,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "sweep": _cmd_sweep,
    "replay": _cmd_replay,
    "reward-study": _cmd_reward_study,
    "dump-plot-data": _cmd_dump_plot_data,
}


def cli_main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return _COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except OscError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
