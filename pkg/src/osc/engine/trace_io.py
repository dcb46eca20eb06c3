"""Episode traces as JSON Lines.

One record per event. An episode is delimited by `episode_begin` / `episode_end`
records with `step` records between them; every record carries the schema
version. Stored floats round-trip exactly (json repr of Python floats), so a
replay reproduces logged reward totals bit for bit.

Record fields:
  episode_begin: type, schema, episode, global_seed, query, ground_truth, config
  step:          type, schema, episode, step, round, speaker, objective, target,
                 style [detail, assertiveness], log_prob, entropy, value,
                 message {text, act, tokens}, directive_blocks,
                 debug (null unless state capture was enabled),
                 gaps {target: magnitude}, z_norms {target: norm},
                 z_digests {target: hex}, events,
                 reward {r_task, c_comm_tokens, lambda_cost, r_shape, total}, done
  episode_end:   type, schema, episode, contributions, final_value, outcome,
                 episode_return, valid, abort_reason
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

from ..errors import ConfigurationError
from ..rl.rewards import RewardBreakdown
from .episode import EpisodeTrace, StepRecord

SCHEMA_VERSION = 1


def _step_record(trace: EpisodeTrace, step: StepRecord) -> dict:
    return {
        "type": "step",
        "schema": SCHEMA_VERSION,
        "episode": trace.episode_index,
        "step": step.step_index,
        "round": step.round,
        "speaker": step.speaker,
        "objective": step.objective,
        "target": step.target,
        "style": [step.style[0], step.style[1]],
        "log_prob": step.log_prob,
        "entropy": step.entropy,
        "value": step.value,
        "message": {
            "text": step.message_text,
            "act": step.message_act,
            "tokens": step.message_tokens,
        },
        "directive_blocks": step.directive_blocks,
        "debug": step.debug,
        "gaps": {str(t): m for t, m in step.gap_magnitudes.items()},
        "z_norms": {str(t): n for t, n in step.z_norms.items()},
        "z_digests": {str(t): d for t, d in step.z_digests.items()},
        "events": list(step.events),
        "reward": {
            "r_task": step.reward.r_task,
            "c_comm_tokens": step.reward.c_comm_tokens,
            "lambda_cost": step.reward.lambda_cost,
            "r_shape": step.reward.r_shape,
            "total": step.reward.total,
        }
        if step.reward is not None
        else None,
        "done": step.done,
    }


def write_traces(path: str | Path, traces: Iterable[EpisodeTrace]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for trace in traces:
            begin = {
                "type": "episode_begin",
                "schema": SCHEMA_VERSION,
                "episode": trace.episode_index,
                "global_seed": trace.global_seed,
                "query": trace.query_text,
                "ground_truth": trace.ground_truth,
                "config": trace.config,
            }
            fh.write(json.dumps(begin) + "\n")
            for step in trace.steps:
                fh.write(json.dumps(_step_record(trace, step)) + "\n")
            end = {
                "type": "episode_end",
                "schema": SCHEMA_VERSION,
                "episode": trace.episode_index,
                "contributions": trace.contributions,
                "final_value": trace.final_value,
                "outcome": trace.outcome,
                "episode_return": trace.episode_return,
                "valid": trace.valid,
                "abort_reason": trace.abort_reason,
            }
            fh.write(json.dumps(end) + "\n")


def read_traces(path: str | Path) -> list[EpisodeTrace]:
    """Rebuild in-memory traces (without training tensors) from a trace file."""
    path = Path(path)
    traces: list[EpisodeTrace] = []
    current: EpisodeTrace | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            kind = record.get("type")
            if record.get("schema") != SCHEMA_VERSION:
                raise ConfigurationError(
                    f"{path}:{line_number}: unsupported trace schema {record.get('schema')}"
                )
            if kind == "episode_begin":
                current = EpisodeTrace(
                    config=record["config"],
                    global_seed=record["global_seed"],
                    episode_index=record["episode"],
                    query_text=record["query"],
                    ground_truth=record["ground_truth"],
                    steps=[],
                    contributions=[],
                    final_value=None,
                    outcome="",
                    episode_return=0.0,
                )
            elif kind == "step":
                if current is None:
                    raise ConfigurationError(f"{path}:{line_number}: step before episode_begin")
                reward = record["reward"]
                current.steps.append(
                    StepRecord(
                        step_index=record["step"],
                        round=record["round"],
                        speaker=record["speaker"],
                        objective=record["objective"],
                        target=record["target"],
                        style=(record["style"][0], record["style"][1]),
                        log_prob=record["log_prob"],
                        entropy=record["entropy"],
                        value=record["value"],
                        message_text=record["message"]["text"],
                        message_act=record["message"]["act"],
                        message_tokens=record["message"]["tokens"],
                        directive_blocks=record["directive_blocks"],
                        debug=record.get("debug"),
                        gap_magnitudes={int(t): m for t, m in record["gaps"].items()},
                        z_norms={int(t): n for t, n in record["z_norms"].items()},
                        z_digests={int(t): d for t, d in record["z_digests"].items()},
                        events=list(record["events"]),
                        reward=RewardBreakdown(
                            r_task=reward["r_task"],
                            c_comm_tokens=reward["c_comm_tokens"],
                            lambda_cost=reward["lambda_cost"],
                            r_shape=reward["r_shape"],
                            total=reward["total"],
                        )
                        if reward is not None
                        else None,
                        done=record["done"],
                    )
                )
            elif kind == "episode_end":
                if current is None:
                    raise ConfigurationError(f"{path}:{line_number}: end before episode_begin")
                current.contributions = list(record["contributions"])
                current.final_value = record["final_value"]
                current.outcome = record["outcome"]
                current.episode_return = record["episode_return"]
                current.valid = record["valid"]
                current.abort_reason = record.get("abort_reason", "")
                traces.append(current)
                current = None
            else:
                raise ConfigurationError(f"{path}:{line_number}: unknown record type {kind!r}")
    return traces


def replay_reward_totals(traces: list[EpisodeTrace]) -> None:
    """Verify the composite-reward identity on every stored step, bit-exactly.

    Aborted (invalid) episodes carry partial steps without rewards and are
    skipped.
    """
    for trace in traces:
        if not trace.valid:
            continue
        recomputed_return = 0.0
        for step in trace.steps:
            r = step.reward
            if r is None:
                raise ConfigurationError(
                    f"episode {trace.episode_index} step {step.step_index} has no reward"
                )
            expected = r.r_task - r.lambda_cost * r.c_comm_tokens + r.r_shape
            if expected != r.total:
                raise ConfigurationError(
                    f"episode {trace.episode_index} step {step.step_index}: stored total "
                    f"{r.total!r} != recomputed {expected!r}"
                )
            recomputed_return += r.total
        if recomputed_return != trace.episode_return:
            raise ConfigurationError(
                f"episode {trace.episode_index}: stored return {trace.episode_return!r} "
                f"!= recomputed {recomputed_return!r}"
            )
