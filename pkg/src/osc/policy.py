"""Communication policy: state assembly, Transformer trunk, action heads.

The policy sees one row per context component — own state, query, condensed
history, then an alternating (collaborator model, gap) pair per peer — each
projected to the model width with a typed projection plus a component-type
embedding. Three heads emit a 10-way objective, a target choice over peers,
and two Beta-distributed style knobs in [0, 1]; a value head estimates return.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special as sps

from .errors import ConfigurationError, MissingEntryError
from .nn import (
    ParamStore,
    Tape,
    add_positions,
    build_dense,
    build_encoder,
    build_positions,
    dense_named,
    transformer_encoder,
)
from .nn import tape as tp
from .text import EMBED_DIM

OBJECTIVES = (
    "query_understanding",
    "propose_step",
    "challenge_assumption",
    "align_plan_element",
    "request_information",
    "request_explanation",
    "provide_evidence",
    "confirm_agreement",
    "summarize_state",
    "flag_conflict",
)
N_OBJECTIVES = len(OBJECTIVES)
GAP_DIM = 64
STYLE_NAMES = ("detail", "assertiveness")
STYLE_EPS = 1e-6

# component-type rows for the typed projection: own state, query, history,
# collaborator model, gap
TYPE_PHI, TYPE_QUERY, TYPE_HISTORY, TYPE_CKM, TYPE_GAP = range(5)


@dataclass
class PolicyNetConfig:
    enc_layers: int = 4
    enc_heads: int = 4
    model_dim: int = 256
    ff_dim: int = 1024
    max_collaborators: int = 9
    detach_critic: bool = False
    separate_critic: bool = False

    def header(self) -> dict:
        return {
            "enc_layers": self.enc_layers,
            "enc_heads": self.enc_heads,
            "model_dim": self.model_dim,
            "ff_dim": self.ff_dim,
            "max_collaborators": self.max_collaborators,
        }


@dataclass
class PolicyState:
    """Eq-style state bundle for one acting agent."""

    phi: np.ndarray
    query: np.ndarray
    history: np.ndarray
    ckm_block: np.ndarray  # (k-1, 128), ascending target id
    gap_block: np.ndarray  # (k-1, 64), same order
    collaborator_ids: list[int]

    def __post_init__(self) -> None:
        k_minus_1 = len(self.collaborator_ids)
        if self.ckm_block.shape != (k_minus_1, EMBED_DIM):
            raise MissingEntryError(
                f"collaborator block is {self.ckm_block.shape}, expected ({k_minus_1}, {EMBED_DIM})"
            )
        if self.gap_block.shape != (k_minus_1, GAP_DIM):
            raise MissingEntryError(
                f"gap block is {self.gap_block.shape}, expected ({k_minus_1}, {GAP_DIM})"
            )

    @property
    def seq_len(self) -> int:
        return 3 + 2 * len(self.collaborator_ids)


@dataclass
class CommAction:
    objective: int
    target_index: int
    style: tuple[float, float]
    log_prob: float
    entropy: float

    @property
    def objective_name(self) -> str:
        return OBJECTIVES[self.objective]


@dataclass
class PolicyOutput:
    obj_logits: tp.Node       # B x 10
    target_logits: tp.Node    # B x (k-1)
    style_alpha: tp.Node      # B x 2
    style_beta: tp.Node       # B x 2
    value: tp.Node            # B x 1


def build_policy_store(cfg: PolicyNetConfig, seed: int) -> ParamStore:
    store = ParamStore(seed=seed)
    d = cfg.model_dim
    build_dense(store, "pi.proj.phi", EMBED_DIM, d)
    build_dense(store, "pi.proj.query", EMBED_DIM, d)
    build_dense(store, "pi.proj.history", EMBED_DIM, d)
    build_dense(store, "pi.proj.ckm", EMBED_DIM, d)
    build_dense(store, "pi.proj.gap", GAP_DIM, d)
    store.weight("pi.type_emb", 5, d)
    build_positions(store, "pi", d)
    build_encoder(store, "pi.enc", cfg.enc_layers, d, cfg.ff_dim)
    build_dense(store, "pi.head.obj", d, N_OBJECTIVES)
    build_dense(store, "pi.head.target", d, cfg.max_collaborators)
    build_dense(store, "pi.head.style", d, 4)
    return store


def build_critic_store(cfg: PolicyNetConfig, seed: int) -> ParamStore:
    store = ParamStore(seed=seed)
    d = cfg.model_dim
    if cfg.separate_critic:
        build_dense(store, "vf.proj.phi", EMBED_DIM, d)
        build_dense(store, "vf.proj.query", EMBED_DIM, d)
        build_dense(store, "vf.proj.history", EMBED_DIM, d)
        build_dense(store, "vf.proj.ckm", EMBED_DIM, d)
        build_dense(store, "vf.proj.gap", GAP_DIM, d)
        store.weight("vf.type_emb", 5, d)
        build_positions(store, "vf", d)
        build_encoder(store, "vf.enc", cfg.enc_layers, d, cfg.ff_dim)
    build_dense(store, "vf.head.value", d, 1)
    return store


def _trunk(
    t: Tape,
    phi: tp.Node,
    query: tp.Node,
    history: tp.Node,
    z_nodes: list[tp.Node],
    g_nodes: list[tp.Node],
    store: ParamStore,
    prefix: str,
    cfg: PolicyNetConfig,
) -> tp.Node:
    """Project typed components, interleave per sequence, encode, mean-pool."""
    b = phi.value.shape[0]
    type_table = t.param(store, f"{prefix}.type_emb")

    def project(x: tp.Node, name: str, type_id: int) -> tp.Node:
        projected = dense_named(t, x, store, f"{prefix}.proj.{name}")
        type_row = tp.select_rows(t, type_table, np.array([type_id]))
        return tp.add_rowvec(t, projected, type_row)

    parts = [
        project(phi, "phi", TYPE_PHI),
        project(query, "query", TYPE_QUERY),
        project(history, "history", TYPE_HISTORY),
    ]
    for z_node, g_node in zip(z_nodes, g_nodes):
        parts.append(project(z_node, "ckm", TYPE_CKM))
        parts.append(project(g_node, "gap", TYPE_GAP))
    seq_len = len(parts)
    pool = tp.concat_rows(t, parts)  # position-major: row p*b + i
    perm = (np.arange(seq_len)[None, :] * b + np.arange(b)[:, None]).ravel()
    seq = tp.select_rows(t, pool, perm)  # sequence-major: row i*seq_len + p
    seq = add_positions(t, seq, store, prefix, seq_len=seq_len)
    encoded = transformer_encoder(
        t, seq, cfg.enc_layers, cfg.enc_heads, store, f"{prefix}.enc", seq_len=seq_len
    )
    return tp.seq_mean(t, encoded, seq_len)


def policy_forward_nodes(
    t: Tape,
    phi: tp.Node,
    query: tp.Node,
    history: tp.Node,
    z_nodes: list[tp.Node],
    g_nodes: list[tp.Node],
    policy_store: ParamStore,
    critic_store: ParamStore,
    cfg: PolicyNetConfig,
) -> PolicyOutput:
    k_minus_1 = len(z_nodes)
    if k_minus_1 < 1 or k_minus_1 > cfg.max_collaborators:
        raise ConfigurationError(
            f"{k_minus_1} collaborators outside supported range 1..{cfg.max_collaborators}"
        )
    pooled = _trunk(t, phi, query, history, z_nodes, g_nodes, policy_store, "pi", cfg)
    obj_logits = dense_named(t, pooled, policy_store, "pi.head.obj")
    target_all = dense_named(t, pooled, policy_store, "pi.head.target")
    target_logits = tp.slice_cols(t, target_all, 0, k_minus_1)
    style_raw = dense_named(t, pooled, policy_store, "pi.head.style")
    alpha = tp.add_scalar(t, tp.softplus(t, tp.slice_cols(t, style_raw, 0, 2)), 1.0)
    beta = tp.add_scalar(t, tp.softplus(t, tp.slice_cols(t, style_raw, 2, 4)), 1.0)
    if cfg.separate_critic:
        critic_pooled = _trunk(
            t, phi, query, history, z_nodes, g_nodes, critic_store, "vf", cfg
        )
    elif cfg.detach_critic:
        critic_pooled = tp.stop_gradient(t, pooled)
    else:
        critic_pooled = pooled
    value = dense_named(t, critic_pooled, critic_store, "vf.head.value")
    return PolicyOutput(obj_logits, target_logits, alpha, beta, value)


def policy_forward(
    ps: PolicyState,
    policy_store: ParamStore,
    critic_store: ParamStore,
    cfg: PolicyNetConfig,
    tape: Tape | None = None,
) -> PolicyOutput:
    t = tape if tape is not None else Tape(grad=False)
    z_nodes = [t.const(ps.ckm_block[c : c + 1]) for c in range(len(ps.collaborator_ids))]
    g_nodes = [t.const(ps.gap_block[c : c + 1]) for c in range(len(ps.collaborator_ids))]
    return policy_forward_nodes(
        t,
        t.const(ps.phi[None, :]),
        t.const(ps.query[None, :]),
        t.const(ps.history[None, :]),
        z_nodes,
        g_nodes,
        policy_store,
        critic_store,
        cfg,
    )


# ---------------------------------------------------------------------------
# sampling and densities
# ---------------------------------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def _categorical_draw(probs: np.ndarray, rng: np.random.Generator) -> int:
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return min(idx, len(probs) - 1)


def categorical_entropy(probs: np.ndarray) -> float:
    nz = probs[probs > 0.0]
    return float(-(nz * np.log(nz)).sum())


def beta_log_pdf(x: float, alpha: float, beta: float) -> float:
    x = min(max(x, STYLE_EPS), 1.0 - STYLE_EPS)
    log_b = sps.gammaln(alpha) + sps.gammaln(beta) - sps.gammaln(alpha + beta)
    return float((alpha - 1.0) * np.log(x) + (beta - 1.0) * np.log1p(-x) - log_b)


def beta_entropy(alpha: float, beta: float) -> float:
    log_b = sps.gammaln(alpha) + sps.gammaln(beta) - sps.gammaln(alpha + beta)
    return float(
        log_b
        - (alpha - 1.0) * sps.digamma(alpha)
        - (beta - 1.0) * sps.digamma(beta)
        + (alpha + beta - 2.0) * sps.digamma(alpha + beta)
    )


@dataclass
class ActionFlags:
    """Ablation switches that pin action components."""

    fixed_objective: bool = False
    no_style: bool = False

    FIXED_OBJECTIVE_INDEX = OBJECTIVES.index("propose_step")
    FIXED_STYLE = (0.5, 0.5)


def sample_action(
    out: PolicyOutput,
    mode: str,
    rng: np.random.Generator,
    flags: ActionFlags | None = None,
) -> CommAction:
    """Draw (or argmax) all action components from the head distributions.

    Draw order is fixed: objective, target, then each style component, so a
    replayed generator reproduces the exact action stream.
    """
    if mode not in ("stochastic", "greedy"):
        raise ConfigurationError(f"unknown sampling mode '{mode}'")
    flags = flags or ActionFlags()
    obj_probs = softmax(out.obj_logits.value[0])
    target_probs = softmax(out.target_logits.value[0])
    alphas = out.style_alpha.value[0]
    betas = out.style_beta.value[0]

    if flags.fixed_objective:
        objective = ActionFlags.FIXED_OBJECTIVE_INDEX
    elif mode == "greedy":
        objective = int(np.argmax(out.obj_logits.value[0]))
    else:
        objective = _categorical_draw(obj_probs, rng)

    if mode == "greedy":
        target = int(np.argmax(out.target_logits.value[0]))
    else:
        target = _categorical_draw(target_probs, rng)

    if flags.no_style:
        style = ActionFlags.FIXED_STYLE
    elif mode == "greedy":
        style = tuple(float(a / (a + b)) for a, b in zip(alphas, betas))
    else:
        style = tuple(float(rng.beta(a, b)) for a, b in zip(alphas, betas))

    log_prob = 0.0 if flags.fixed_objective else float(np.log(obj_probs[objective]))
    log_prob += float(np.log(target_probs[target]))
    entropy = 0.0 if flags.fixed_objective else categorical_entropy(obj_probs)
    entropy += categorical_entropy(target_probs)
    if not flags.no_style:
        for x, a, b in zip(style, alphas, betas):
            log_prob += beta_log_pdf(x, float(a), float(b))
            entropy += beta_entropy(float(a), float(b))
    return CommAction(
        objective=objective,
        target_index=target,
        style=(float(style[0]), float(style[1])),
        log_prob=log_prob,
        entropy=entropy,
    )


def uniform_action(k_minus_1: int, rng: np.random.Generator) -> CommAction:
    """Policy-free reference sampler: uniform over every component.

    Draw order is fixed: objective, target, two style uniforms.
    """
    objective = int(rng.integers(N_OBJECTIVES))
    target = int(rng.integers(k_minus_1))
    style = (float(rng.random()), float(rng.random()))
    log_prob = -np.log(N_OBJECTIVES) - np.log(k_minus_1)  # uniform density on style is 1
    entropy = float(np.log(N_OBJECTIVES) + np.log(k_minus_1))
    return CommAction(objective, target, style, float(log_prob), entropy)


def action_logprob_entropy(
    t: Tape,
    out: PolicyOutput,
    objectives: np.ndarray,
    targets: np.ndarray,
    styles: np.ndarray,
    flags: ActionFlags | None = None,
) -> tuple[tp.Node, tp.Node]:
    """Differentiable log-prob and entropy of stored actions (Bx1 each)."""
    flags = flags or ActionFlags()
    b = out.obj_logits.value.shape[0]
    zero = t.const(np.zeros((b, 1)))

    obj_lsm = tp.log_softmax_rows(t, out.obj_logits)
    tgt_lsm = tp.log_softmax_rows(t, out.target_logits)
    lp_obj = zero if flags.fixed_objective else tp.select_per_row(t, obj_lsm, objectives)
    lp_tgt = tp.select_per_row(t, tgt_lsm, targets)

    def cat_entropy(lsm: tp.Node) -> tp.Node:
        probs = tp.exp(t, lsm)
        return tp.neg(t, tp.row_sum(t, tp.mul(t, probs, lsm)))

    ent_obj = zero if flags.fixed_objective else cat_entropy(obj_lsm)
    ent_tgt = cat_entropy(tgt_lsm)

    if flags.no_style:
        lp_style = zero
        ent_style = zero
    else:
        x = np.clip(styles, STYLE_EPS, 1.0 - STYLE_EPS)
        ln_x = t.const(np.log(x))
        ln_1mx = t.const(np.log1p(-x))
        a = out.style_alpha
        bta = out.style_beta
        one = t.const(np.ones((b, 2)))
        log_beta_fn = tp.sub(
            t,
            tp.add(t, tp.lgamma(t, a), tp.lgamma(t, bta)),
            tp.lgamma(t, tp.add(t, a, bta)),
        )
        lp_terms = tp.sub(
            t,
            tp.add(
                t,
                tp.mul(t, tp.sub(t, a, one), ln_x),
                tp.mul(t, tp.sub(t, bta, one), ln_1mx),
            ),
            log_beta_fn,
        )
        lp_style = tp.row_sum(t, lp_terms)
        a_plus_b = tp.add(t, a, bta)
        two = t.const(np.full((b, 2), 2.0))
        ent_terms = tp.add(
            t,
            tp.sub(
                t,
                tp.sub(
                    t,
                    log_beta_fn,
                    tp.mul(t, tp.sub(t, a, one), tp.digamma(t, a)),
                ),
                tp.mul(t, tp.sub(t, bta, one), tp.digamma(t, bta)),
            ),
            tp.mul(t, tp.sub(t, a_plus_b, two), tp.digamma(t, a_plus_b)),
        )
        ent_style = tp.row_sum(t, ent_terms)

    log_prob = tp.add(t, tp.add(t, lp_obj, lp_tgt), lp_style)
    entropy = tp.add(t, tp.add(t, ent_obj, ent_tgt), ent_style)
    return log_prob, entropy
