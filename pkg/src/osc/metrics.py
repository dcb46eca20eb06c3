"""Communication-efficiency metrics computed purely from traces.

Definitions are artifact conventions, chosen to be deterministic and
trace-computable:

* redundancy: per message, the fraction of its token 3-grams already seen in
  the episode's earlier messages, averaged over messages (percent). Messages
  shorter than 3 tokens contribute 0 and still count; an episode's opening
  message has no prior history to repeat and is excluded from the average.
* conflict resolution: a pair is in conflict once its gap magnitude exceeds
  tau_conflict at any step; it is resolved if the pair's last logged magnitude
  is at or below tau_resolve. Resolved / detected, as a percent; with no
  conflicts the rate reports 100 with a flag.
* info density: mean over messages of max(0, cosine(message embedding,
  query embedding)), as a percent.
"""

from __future__ import annotations

from dataclasses import dataclass

from .engine.episode import EpisodeTrace
from .errors import ContractError
from .text import cosine, feature_embed, tokenize


@dataclass
class CommMetrics:
    avg_rounds: float
    avg_tokens_k: float
    redundancy_pct: float
    conflict_resolution_pct: float
    info_density_pct: float
    no_conflicts_detected: bool = False

    COLUMNS = (
        "avg_rounds",
        "avg_tokens_k",
        "redundancy_pct",
        "conflict_resolution_pct",
        "info_density_pct",
    )

    def row(self) -> list[float]:
        return [
            self.avg_rounds,
            self.avg_tokens_k,
            self.redundancy_pct,
            self.conflict_resolution_pct,
            self.info_density_pct,
        ]


def _trigrams(tokens: list[str]) -> list[tuple[str, str, str]]:
    return [tuple(tokens[i : i + 3]) for i in range(len(tokens) - 2)]


def redundancy(traces: list[EpisodeTrace]) -> float:
    """Mean per-message fraction of 3-grams already present in prior history."""
    scores: list[float] = []
    for trace in traces:
        seen: set[tuple[str, str, str]] = set()
        for position, step in enumerate(trace.steps):
            tokens = tokenize(step.message_text)
            grams = _trigrams(tokens)
            if position > 0:
                if not grams:
                    scores.append(0.0)
                else:
                    hits = sum(1 for gram in grams if gram in seen)
                    scores.append(hits / len(grams))
            seen.update(grams)
    if not scores:
        return 0.0
    return 100.0 * sum(scores) / len(scores)


def conflict_resolution(
    traces: list[EpisodeTrace], tau_conflict: float, tau_resolve: float | None = None
) -> tuple[float, bool]:
    """Share of detected conflicts whose pair ends the episode resolved."""
    if tau_resolve is None:
        tau_resolve = 0.5 * tau_conflict
    detected = 0
    resolved = 0
    for trace in traces:
        last_magnitude: dict[tuple[int, int], float] = {}
        conflicted: set[tuple[int, int]] = set()
        for step in trace.steps:
            for target, magnitude in step.gap_magnitudes.items():
                pair = (step.speaker, target)
                last_magnitude[pair] = magnitude
                if magnitude > tau_conflict:
                    conflicted.add(pair)
        detected += len(conflicted)
        resolved += sum(1 for pair in conflicted if last_magnitude[pair] <= tau_resolve)
    if detected == 0:
        return 100.0, True
    return 100.0 * resolved / detected, False


def info_density(traces: list[EpisodeTrace]) -> float:
    """Mean non-negative cosine between message and query embeddings."""
    scores: list[float] = []
    for trace in traces:
        query_embedding = feature_embed(tokenize(trace.query_text))
        for step in trace.steps:
            message_embedding = feature_embed(tokenize(step.message_text))
            scores.append(max(0.0, cosine(message_embedding, query_embedding)))
    if not scores:
        return 0.0
    return 100.0 * sum(scores) / len(scores)


def compute_comm_metrics(
    traces: list[EpisodeTrace], tau_conflict: float, tau_resolve: float | None = None
) -> CommMetrics:
    if not traces:
        raise ContractError("no traces to compute metrics over")
    rounds = [max((s.round for s in trace.steps), default=0) for trace in traces]
    tokens = [sum(s.message_tokens for s in trace.steps) for trace in traces]
    resolution, flag = conflict_resolution(traces, tau_conflict, tau_resolve)
    return CommMetrics(
        avg_rounds=sum(rounds) / len(rounds),
        avg_tokens_k=sum(tokens) / len(tokens) / 1000.0,
        redundancy_pct=redundancy(traces),
        conflict_resolution_pct=resolution,
        info_density_pct=info_density(traces),
        no_conflicts_detected=flag,
    )


def success_rate(traces: list[EpisodeTrace]) -> float:
    valid = [t for t in traces if t.valid]
    if not valid:
        return 0.0
    return sum(1 for t in valid if t.outcome == "success") / len(valid)


def mean_return(traces: list[EpisodeTrace]) -> float:
    valid = [t for t in traces if t.valid]
    if not valid:
        return 0.0
    return sum(t.episode_return for t in valid) / len(valid)
