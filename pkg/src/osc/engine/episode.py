"""Round-robin episode engine.

Each round every agent, in ascending id order: refreshes its gap view of every
collaborator, assembles the policy state, picks an action, realizes it as a
message through the configured backend, and appends it to the shared history;
every other agent then revises its model of the speaker. After the final round
each agent emits an independent contribution and the task rule aggregates them
into the team answer, which sets the terminal reward.

With the stub backend the whole episode is a deterministic function of
(config, seed, parameters); randomness flows only through a counter-based
per-episode generator keyed by (global seed, episode index).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from ..ckm import GRU_INPUT_DIM, CkmState, apply_update, ckm_encode, gru_input_vector
from ..errors import BackendError, ConfigurationError
from ..gap import GapVector, gap_forward
from ..model import ModelBundle
from ..nn import Tape
from ..policy import (
    OBJECTIVES,
    ActionFlags,
    PolicyState,
    policy_forward,
    sample_action,
    uniform_action,
)
from ..rl.buffer import TrajectoryStep
from ..rl.rewards import (
    RewardBreakdown,
    RewardConfig,
    ShapingConfig,
    detect_shaping_events,
    phi_query_direction,
    step_reward,
)
from ..text import DIALOGUE_ACTS, DialogueHistory, condense_history
from .ablation import AblationFlags
from .backends import HttpRealizer, realize_stub
from .directive import build_directive
from .tasks import make_task

_REQUEST_INFORMATION = OBJECTIVES.index("request_information")


@dataclass
class EpisodeConfig:
    agent_count: int = 4
    n_round: int = 4
    backend: str = "stub"
    task: str = "hidden_sum"
    mode: str = "stochastic"
    broadcast: bool = False
    max_prompt_tokens: int = 512
    directive_history: int = 2
    debug_states: bool = False
    ablation: AblationFlags = field(default_factory=AblationFlags)

    def validate(self) -> None:
        if not 2 <= self.agent_count <= 10:
            raise ConfigurationError(f"agent count {self.agent_count} outside 2..10")
        if self.n_round < 1:
            raise ConfigurationError(f"n_round must be >= 1, got {self.n_round}")
        if self.backend not in ("stub", "http"):
            raise ConfigurationError(f"unknown backend '{self.backend}'")
        if self.mode not in ("stochastic", "greedy"):
            raise ConfigurationError(f"unknown action mode '{self.mode}'")
        self.ablation.validate()

    def snapshot(self) -> dict:
        return {
            "agent_count": self.agent_count,
            "n_round": self.n_round,
            "backend": self.backend,
            "task": self.task,
            "mode": self.mode,
            "broadcast": self.broadcast,
            "ablation": self.ablation.active(),
        }


@dataclass
class StepRecord:
    step_index: int
    round: int
    speaker: int
    objective: str
    target: int
    style: tuple[float, float]
    log_prob: float
    entropy: float
    value: float
    message_text: str
    message_act: str
    message_tokens: int
    directive_blocks: int
    gap_magnitudes: dict[int, float]
    z_norms: dict[int, float]
    z_digests: dict[int, str]
    events: list[str] = field(default_factory=list)
    reward: RewardBreakdown | None = None
    done: bool = False
    debug: dict | None = None


@dataclass
class EpisodeTrace:
    config: dict
    global_seed: int
    episode_index: int
    query_text: str
    ground_truth: int
    steps: list[StepRecord]
    contributions: list[str]
    final_value: int | None
    outcome: str
    episode_return: float
    valid: bool = True
    abort_reason: str = ""
    train_steps: list[TrajectoryStep] | None = None


@dataclass
class _PairState:
    state: CkmState
    mode: str = "encode"  # how to rebuild z differentiably: encode | gru | const
    z_prev: np.ndarray | None = None
    x_raw: np.ndarray | None = None
    act_idx: int = -1
    emb_sum: np.ndarray | None = None
    msg_count: int = 0


@dataclass
class _Pending:
    step_index: int
    observer: int
    target: int
    pre_gap: GapVector
    objective: int
    direction: np.ndarray | None


def episode_rng(global_seed: int, episode_index: int) -> np.random.Generator:
    """Counter-based stream so workers never contend and replay is exact."""
    key = np.array([global_seed % (1 << 64), episode_index % (1 << 64)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _digest(z: np.ndarray) -> str:
    return hashlib.blake2b(z.tobytes(), digest_size=8).hexdigest()


def run_episode(
    cfg: EpisodeConfig,
    bundle: ModelBundle,
    reward_cfg: RewardConfig,
    shaping_cfg: ShapingConfig,
    global_seed: int,
    episode_index: int,
    collect_training: bool = False,
    realizer: HttpRealizer | None = None,
) -> EpisodeTrace:
    cfg.validate()
    flags = cfg.ablation
    if cfg.backend == "http" and realizer is None:
        raise ConfigurationError("http backend selected but no realizer was provided")
    if flags.no_shaping:
        shaping_cfg = replace(shaping_cfg, enabled=False)

    rng = episode_rng(global_seed, episode_index)
    k = cfg.agent_count
    task = make_task(cfg.task, k, rng)
    query = task.query
    history = DialogueHistory()
    agents = list(range(k))
    profile_mask = flags.profile_mask()
    action_flags = ActionFlags(fixed_objective=flags.fixed_objective, no_style=flags.no_style)

    # one latent state per ordered (observer, target) pair
    if flags.no_ckm:
        z_init = np.zeros(bundle.ckm_cfg.model_dim)
    else:
        z_init = ckm_encode(
            agents[-1], query, history, bundle.stores["ckm"], bundle.ckm_cfg, profile_mask
        ).value[0]
    pairs: dict[tuple[int, int], _PairState] = {}
    for observer in agents:
        for target in agents:
            if observer == target:
                continue
            mode = "const" if (flags.no_ckm or flags.update_avg) else "encode"
            pairs[(observer, target)] = _PairState(
                state=CkmState(observer, target, np.array(z_init), 0), mode=mode
            )

    request_inbox: dict[int, list[int]] = {a: [] for a in agents}
    pending: list[_Pending] = []
    steps: list[StepRecord] = []
    train_steps: list[TrajectoryStep] = [] if collect_training else None
    total_steps = k * cfg.n_round
    aborted = False
    abort_reason = ""

    def gaps_for(agent: int, phi_embedding: np.ndarray) -> list[GapVector]:
        others = [a for a in agents if a != agent]
        t = Tape(grad=False)
        z_block = np.stack([pairs[(agent, j)].state.z for j in others])
        phi_rows = np.tile(phi_embedding, (len(others), 1))
        g = gap_forward(
            t,
            t.const(phi_rows),
            t.const(z_block),
            bundle.stores["gap"],
            bundle.gap_cfg,
            variant=flags.gap_variant,
        ).value
        return [
            GapVector(agent, j, g[c], float(np.linalg.norm(g[c])))
            for c, j in enumerate(others)
        ]

    def single_gap(observer: int, target: int, phi_embedding: np.ndarray) -> GapVector:
        t = Tape(grad=False)
        g = gap_forward(
            t,
            t.const(phi_embedding[None, :]),
            t.const(pairs[(observer, target)].state.z[None, :]),
            bundle.stores["gap"],
            bundle.gap_cfg,
            variant=flags.gap_variant,
        ).value[0]
        return GapVector(observer, target, g, float(np.linalg.norm(g)))

    step_index = 0
    for round_idx in range(1, cfg.n_round + 1):
        if aborted:
            break
        for speaker in agents:
            phi_state = task.internal_state(speaker, history)
            h_cond = condense_history(history.embeddings(), bundle.ckm_cfg.history_window)
            others = [a for a in agents if a != speaker]
            gaps = gaps_for(speaker, phi_state.embedding)
            z_block = np.stack([pairs[(speaker, j)].state.z for j in others])
            g_block = np.stack([gv.g for gv in gaps])

            if flags.no_policy:
                action = uniform_action(k - 1, rng)
                value = 0.0
            else:
                ps = PolicyState(
                    phi=phi_state.embedding,
                    query=query.embedding,
                    history=h_cond,
                    ckm_block=z_block,
                    gap_block=g_block,
                    collaborator_ids=others,
                )
                out = policy_forward(
                    ps, bundle.stores["policy"], bundle.stores["critic"], bundle.policy_cfg
                )
                action = sample_action(out, cfg.mode, rng, action_flags)
                value = float(out.value.value[0, 0])

            target_id = others[action.target_index]
            target_gap = gaps[action.target_index]
            known = task.known_shares(speaker, history)
            directive = build_directive(
                action,
                speaker,
                target_id,
                k,
                query.text,
                phi_summary=f"my share is {task.shares[speaker]} with {len(known) - 1} peer values noted",
                gap_vector=target_gap.g,
                gap_magnitude=target_gap.magnitude,
                recent_texts=[u.text for u in history.last(cfg.directive_history)],
                simplified=flags.simplified_prompt,
                broadcast=cfg.broadcast,
                max_tokens=cfg.max_prompt_tokens,
            )
            payload = {
                "speaker": speaker,
                "round": round_idx,
                "share": task.shares[speaker],
                "known_count": len(known),
                "pending_requests": sorted(request_inbox[speaker]),
            }
            if cfg.backend == "stub":
                message = realize_stub(directive, payload, rng)
            else:
                try:
                    message = realizer.realize(directive, payload)
                except BackendError as exc:
                    aborted = True
                    abort_reason = str(exc)
                    break
            request_inbox[speaker].clear()
            history.append(message)

            # every observer revises its model of the speaker, once per message
            for observer in others:
                pair = pairs[(observer, speaker)]
                if flags.no_ckm or flags.update_static:
                    continue
                if flags.update_avg:
                    if pair.emb_sum is None:
                        pair.emb_sum = np.zeros_like(message.embedding)
                    pair.emb_sum = pair.emb_sum + message.embedding
                    pair.msg_count += 1
                    pair.state = CkmState(
                        observer, speaker, pair.emb_sum / pair.msg_count, round_idx
                    )
                    pair.mode = "const"
                    continue
                x_raw = gru_input_vector(
                    message, query, history, bundle.ckm_cfg, profile_mask
                )
                t = Tape(grad=False)
                z_new = apply_update(
                    t,
                    t.const(pair.state.z[None, :]),
                    t.const(x_raw[None, :]),
                    bundle.stores["update"],
                ).value[0]
                pair.z_prev = np.array(pair.state.z)
                pair.x_raw = x_raw
                pair.mode = "gru"
                pair.act_idx = (
                    DIALOGUE_ACTS.index(message.act) if message.act in DIALOGUE_ACTS else -1
                )
                pair.state = CkmState(observer, speaker, z_new, round_idx)

            # settle shaping promises that were waiting on this speaker
            still_pending: list[_Pending] = []
            for entry in pending:
                if entry.target != speaker:
                    still_pending.append(entry)
                    continue
                observer_phi = task.internal_state(entry.observer, history)
                post_gap = single_gap(entry.observer, speaker, observer_phi.embedding)
                events = detect_shaping_events(
                    entry.pre_gap,
                    post_gap,
                    entry.objective,
                    response=message,
                    request_direction=entry.direction,
                    cfg=shaping_cfg,
                )
                if events:
                    steps[entry.step_index].events.extend(events)
            pending = still_pending
            pending.append(
                _Pending(
                    step_index=step_index,
                    observer=speaker,
                    target=target_id,
                    pre_gap=target_gap,
                    objective=action.objective,
                    direction=(
                        phi_query_direction(phi_state.embedding, query.embedding)
                        if action.objective == _REQUEST_INFORMATION
                        else None
                    ),
                )
            )
            if action.objective == _REQUEST_INFORMATION:
                request_inbox[target_id].append(speaker)

            steps.append(
                StepRecord(
                    step_index=step_index,
                    round=round_idx,
                    speaker=speaker,
                    objective=OBJECTIVES[action.objective],
                    target=target_id,
                    style=action.style,
                    log_prob=action.log_prob,
                    entropy=action.entropy,
                    value=value,
                    message_text=message.text,
                    message_act=message.act or "",
                    message_tokens=len(message.tokens),
                    directive_blocks=len(directive.blocks()),
                    gap_magnitudes={gv.target: gv.magnitude for gv in gaps},
                    z_norms={
                        j: float(np.linalg.norm(pairs[(speaker, j)].state.z)) for j in others
                    },
                    z_digests={j: _digest(pairs[(speaker, j)].state.z) for j in others},
                    done=step_index == total_steps - 1,
                    debug=(
                        {
                            "phi": phi_state.embedding.tolist(),
                            "z_block": z_block.tolist(),
                            "gap_block": g_block.tolist(),
                        }
                        if cfg.debug_states
                        else None
                    ),
                )
            )
            if collect_training:
                k1 = len(others)
                z_prev = np.zeros((k1, bundle.ckm_cfg.gru_dim))
                x_raw_block = np.zeros((k1, GRU_INPUT_DIM))
                acts = np.full(k1, -1, dtype=np.int64)
                modes = []
                for c, j in enumerate(others):
                    pair = pairs[(speaker, j)]
                    modes.append(pair.mode)
                    if pair.mode == "gru":
                        z_prev[c] = pair.z_prev
                        x_raw_block[c] = pair.x_raw
                        acts[c] = pair.act_idx
                train_steps.append(
                    TrajectoryStep(
                        phi=phi_state.embedding,
                        query=query.embedding,
                        history_vec=h_cond,
                        pair_modes=modes,
                        pair_z_prev=z_prev,
                        pair_x_raw=x_raw_block,
                        pair_z_used=np.array(z_block),
                        pair_g_used=np.array(g_block),
                        pair_act=acts,
                        objective=action.objective,
                        target_index=action.target_index,
                        style=action.style,
                        log_prob=action.log_prob,
                        value=value,
                        done=step_index == total_steps - 1,
                    )
                )
            step_index += 1

    if aborted:
        return EpisodeTrace(
            config=cfg.snapshot(),
            global_seed=global_seed,
            episode_index=episode_index,
            query_text=query.text,
            ground_truth=task.ground_truth,
            steps=steps,
            contributions=[],
            final_value=None,
            outcome="failure",
            episode_return=0.0,
            valid=False,
            abort_reason=abort_reason,
            train_steps=None,
        )

    contributions = [task.contribution(a, history) for a in agents]
    final_value, outcome = task.aggregate(contributions)
    episode_return = 0.0
    for record in steps:
        record.reward = step_reward(
            outcome if record.done else None,
            record.message_tokens,
            record.events,
            reward_cfg,
            shaping_cfg,
        )
        episode_return += record.reward.total
    if collect_training:
        for record, traj in zip(steps, train_steps):
            traj.reward_total = record.reward.total

    return EpisodeTrace(
        config=cfg.snapshot(),
        global_seed=global_seed,
        episode_index=episode_index,
        query_text=query.text,
        ground_truth=task.ground_truth,
        steps=steps,
        contributions=contributions,
        final_value=final_value,
        outcome=outcome,
        episode_return=episode_return,
        train_steps=train_steps,
    )
