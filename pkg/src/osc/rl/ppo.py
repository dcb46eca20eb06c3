"""Clipped-surrogate policy optimization over recomputed forward passes.

The rollout buffer stores raw inputs, not activations; every minibatch pass
rebuilds the differentiable pipeline batched across steps: the most recent
collaborator-model update per pair (or its initial encoding when no message
arrived yet), the gap network, and the policy trunk with its heads. Gradients
therefore reach the policy, the critic, and - unless frozen - the collaborator
model and gap parameters through the states they produced.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..ckm import apply_encode, apply_update
from ..engine.ablation import AblationFlags
from ..errors import ConfigurationError, NumericError
from ..gap import gap_forward
from ..model import ModelBundle
from ..nn import AdamConfig, Tape, adam_step, dense_named
from ..nn import tape as tp
from ..policy import ActionFlags, action_logprob_entropy, policy_forward_nodes
from .buffer import RolloutBuffer


@dataclass
class PpoConfig:
    gamma: float = 0.99
    clip_eps: float = 0.2
    gae_lambda: float = 0.95
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    batch_steps: int = 2048
    minibatch_steps: int = 256
    epochs_per_update: int = 10
    lr_policy: float = 1e-4
    lr_critic: float = 3e-4
    lr_ckm: float = 5e-5
    lr_gap: float = 5e-5
    freeze_ckm: bool = False
    freeze_gap: bool = False
    aux_act_weight: float = 0.0
    clip_enabled: bool = True

    def validate(self) -> None:
        positive = {
            "gamma": self.gamma,
            "clip_eps": self.clip_eps,
            "gae_lambda": self.gae_lambda,
            "batch_steps": self.batch_steps,
            "minibatch_steps": self.minibatch_steps,
            "epochs_per_update": self.epochs_per_update,
            "lr_policy": self.lr_policy,
            "lr_critic": self.lr_critic,
            "lr_ckm": self.lr_ckm,
            "lr_gap": self.lr_gap,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigurationError(f"{name} must be positive, got {value}")
        if self.clip_eps >= 1.0:
            raise ConfigurationError(f"clip_eps must be < 1, got {self.clip_eps}")


@dataclass
class BatchArrays:
    phi: np.ndarray
    query: np.ndarray
    history: np.ndarray
    modes: np.ndarray        # (n, k-1) unicode
    z_prev: np.ndarray       # (n, k-1, gru_dim)
    x_raw: np.ndarray        # (n, k-1, gru_in)
    z_used: np.ndarray
    g_used: np.ndarray
    acts: np.ndarray         # (n, k-1) int
    objectives: np.ndarray
    targets: np.ndarray
    styles: np.ndarray
    old_log_prob: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    @classmethod
    def from_buffer(cls, buffer: RolloutBuffer) -> "BatchArrays":
        steps = buffer.steps
        return cls(
            phi=np.stack([s.phi for s in steps]),
            query=np.stack([s.query for s in steps]),
            history=np.stack([s.history_vec for s in steps]),
            modes=np.array([s.pair_modes for s in steps]),
            z_prev=np.stack([s.pair_z_prev for s in steps]),
            x_raw=np.stack([s.pair_x_raw for s in steps]),
            z_used=np.stack([s.pair_z_used for s in steps]),
            g_used=np.stack([s.pair_g_used for s in steps]),
            acts=np.stack([s.pair_act for s in steps]),
            objectives=np.array([s.objective for s in steps], dtype=np.int64),
            targets=np.array([s.target_index for s in steps], dtype=np.int64),
            styles=np.array([s.style for s in steps]),
            old_log_prob=np.array([s.log_prob for s in steps]),
            advantages=np.array(buffer.advantages),
            returns=np.array(buffer.returns),
        )


def normalize_advantages(advantages: np.ndarray) -> np.ndarray:
    std = advantages.std()
    return (advantages - advantages.mean()) / (std + 1e-8)


def _pair_z_node(
    t: Tape,
    batch: BatchArrays,
    idx: np.ndarray,
    slot: int,
    bundle: ModelBundle,
    cfg: PpoConfig,
) -> tp.Node:
    """Rebuild the latent collaborator vector for one pair slot, batched.

    Rows whose pair saw at least one message replay the most recent update
    from its stored inputs; rows still on the initial state replay the
    encoder; remaining rows enter as constants.
    """
    modes = batch.modes[idx, slot]
    if cfg.freeze_ckm:
        return t.const(batch.z_used[idx, slot])
    gru_rows = np.flatnonzero(modes == "gru")
    enc_rows = np.flatnonzero(modes == "encode")
    const_rows = np.flatnonzero(modes == "const")
    pieces: list[tp.Node] = []
    order: list[np.ndarray] = []
    if gru_rows.size:
        z_prev = t.const(batch.z_prev[idx[gru_rows], slot])
        x_raw = t.const(batch.x_raw[idx[gru_rows], slot])
        pieces.append(apply_update(t, z_prev, x_raw, bundle.stores["update"]))
        order.append(gru_rows)
    if enc_rows.size:
        # the initial encoding depends only on the query (empty history)
        by_query: dict[bytes, list[int]] = {}
        for row in enc_rows:
            by_query.setdefault(batch.query[idx[row]].tobytes(), []).append(int(row))
        for qbytes, rows in by_query.items():
            q_vec = np.frombuffer(qbytes, dtype=np.float64)
            fixed = np.stack([q_vec, np.zeros_like(q_vec)])
            z_one = apply_encode(t, t.const(fixed), None, bundle.stores["ckm"], bundle.ckm_cfg)
            pieces.append(tp.repeat_rows(t, z_one, len(rows)))
            order.append(np.array(rows, dtype=np.intp))
    if const_rows.size:
        pieces.append(t.const(batch.z_used[idx[const_rows], slot]))
        order.append(const_rows)
    stacked = tp.concat_rows(t, pieces) if len(pieces) > 1 else pieces[0]
    placement = np.concatenate(order)
    inverse = np.empty(len(idx), dtype=np.intp)
    inverse[placement] = np.arange(len(idx))
    return tp.select_rows(t, stacked, inverse)


def minibatch_forward(
    t: Tape,
    batch: BatchArrays,
    idx: np.ndarray,
    bundle: ModelBundle,
    cfg: PpoConfig,
    flags: AblationFlags,
):
    """Recompute lp/entropy/value nodes for the selected steps."""
    k_minus_1 = batch.modes.shape[1]
    phi_n = t.const(batch.phi[idx])
    q_n = t.const(batch.query[idx])
    h_n = t.const(batch.history[idx])
    z_nodes: list[tp.Node] = []
    g_nodes: list[tp.Node] = []
    for slot in range(k_minus_1):
        z_node = _pair_z_node(t, batch, idx, slot, bundle, cfg)
        if cfg.freeze_gap and cfg.freeze_ckm:
            g_node = t.const(batch.g_used[idx, slot])
        else:
            g_node = gap_forward(
                t, phi_n, z_node, bundle.stores["gap"], bundle.gap_cfg, variant=flags.gap_variant
            )
        z_nodes.append(z_node)
        g_nodes.append(g_node)
    out = policy_forward_nodes(
        t, phi_n, q_n, h_n, z_nodes, g_nodes,
        bundle.stores["policy"], bundle.stores["critic"], bundle.policy_cfg,
    )
    action_flags = ActionFlags(fixed_objective=flags.fixed_objective, no_style=flags.no_style)
    lp, ent = action_logprob_entropy(
        t, out, batch.objectives[idx], batch.targets[idx], batch.styles[idx], action_flags
    )
    aux_loss = None
    if cfg.aux_act_weight > 0.0 and not cfg.freeze_ckm:
        aux_loss = _aux_act_loss(t, batch, idx, z_nodes, bundle)
    return lp, ent, out.value, aux_loss


def _aux_act_loss(
    t: Tape, batch: BatchArrays, idx: np.ndarray, z_nodes: list[tp.Node], bundle: ModelBundle
) -> tp.Node | None:
    """Cross-entropy of the retained act head on freshly updated pair states."""
    losses: list[tp.Node] = []
    for slot, z_node in enumerate(z_nodes):
        acts = batch.acts[idx, slot]
        rows = np.flatnonzero(acts >= 0)
        if rows.size == 0:
            continue
        z_sel = tp.select_rows(t, z_node, rows)
        logits = dense_named(t, z_sel, bundle.stores["ckm"], "ckm.act_head")
        lsm = tp.log_softmax_rows(t, logits)
        losses.append(tp.neg(t, tp.mean_all(t, tp.select_per_row(t, lsm, acts[rows]))))
    if not losses:
        return None
    total = losses[0]
    for extra in losses[1:]:
        total = tp.add(t, total, extra)
    return tp.scale(t, total, 1.0 / len(losses))


def ppo_losses(
    t: Tape,
    lp: tp.Node,
    ent: tp.Node,
    value: tp.Node,
    old_lp: np.ndarray,
    advantages: np.ndarray,
    returns: np.ndarray,
    cfg: PpoConfig,
) -> dict[str, tp.Node]:
    adv_c = t.const(advantages[:, None])
    ratio = tp.exp(t, tp.sub(t, lp, t.const(old_lp[:, None])))
    plain = tp.mul(t, ratio, adv_c)
    if cfg.clip_enabled:
        clipped = tp.mul(t, tp.clip(t, ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps), adv_c)
        surrogate = tp.minimum(t, plain, clipped)
    else:
        surrogate = plain
    policy_loss = tp.neg(t, tp.mean_all(t, surrogate))
    err = tp.sub(t, value, t.const(returns[:, None]))
    value_loss = tp.mean_all(t, tp.mul(t, err, err))
    entropy_mean = tp.mean_all(t, ent)
    total = tp.sub(
        t,
        tp.add(t, policy_loss, tp.scale(t, value_loss, cfg.value_coef)),
        tp.scale(t, entropy_mean, cfg.entropy_coef),
    )
    return {
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": entropy_mean,
        "total": total,
    }


def ppo_update(
    buffer: RolloutBuffer,
    bundle: ModelBundle,
    cfg: PpoConfig,
    flags: AblationFlags,
    rng: np.random.Generator,
) -> dict[str, float]:
    """Several epochs of shuffled minibatch updates over one rollout batch."""
    cfg.validate()
    if len(buffer) < cfg.minibatch_steps:
        raise ConfigurationError(
            f"buffer holds {len(buffer)} steps, fewer than one minibatch of {cfg.minibatch_steps}"
        )
    batch = BatchArrays.from_buffer(buffer)
    batch.advantages = normalize_advantages(batch.advantages)
    n = len(buffer)
    stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0}
    passes = 0
    adam = {
        "policy": AdamConfig(learning_rate=cfg.lr_policy),
        "critic": AdamConfig(learning_rate=cfg.lr_critic),
        "ckm": AdamConfig(learning_rate=cfg.lr_ckm),
        "update": AdamConfig(learning_rate=cfg.lr_ckm),
        "gap": AdamConfig(learning_rate=cfg.lr_gap),
    }
    for epoch in range(cfg.epochs_per_update):
        perm = rng.permutation(n)
        for mb_index, start in enumerate(range(0, n, cfg.minibatch_steps)):
            idx = perm[start : start + cfg.minibatch_steps]
            t = Tape()
            lp, ent, value, aux = minibatch_forward(t, batch, idx, bundle, cfg, flags)
            losses = ppo_losses(
                t, lp, ent, value,
                batch.old_log_prob[idx], batch.advantages[idx], batch.returns[idx], cfg,
            )
            total = losses["total"]
            if aux is not None:
                total = tp.add(t, total, tp.scale(t, aux, cfg.aux_act_weight))
            if not np.isfinite(total.value[0, 0]):
                raise NumericError(
                    f"non-finite loss in minibatch {mb_index} of epoch {epoch}"
                )
            t.backward(total)
            adam_step(bundle.stores["policy"], adam["policy"])
            adam_step(bundle.stores["critic"], adam["critic"])
            if cfg.freeze_ckm:
                bundle.stores["ckm"].zero_grads()
                bundle.stores["update"].zero_grads()
            else:
                adam_step(bundle.stores["ckm"], adam["ckm"])
                adam_step(bundle.stores["update"], adam["update"])
            if cfg.freeze_gap:
                bundle.stores["gap"].zero_grads()
            else:
                adam_step(bundle.stores["gap"], adam["gap"])
            stats["policy_loss"] += float(losses["policy_loss"].value[0, 0])
            stats["value_loss"] += float(losses["value_loss"].value[0, 0])
            stats["entropy"] += float(losses["entropy"].value[0, 0])
            passes += 1
    return {key: value / passes for key, value in stats.items()}
