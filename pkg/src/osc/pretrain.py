"""Self-supervised initialization of the collaborator-model parameters.

A synthetic corpus generator stands in for large dialogue datasets: multi-turn
dialogues whose per-speaker act sequences follow a Markov chain and whose
outcome tag depends on how much agreement the dialogue reaches. Training
optimizes the equally weighted sum of three objectives: cosine regression of a
masked utterance's embedding, cross-entropy next-act prediction through the
recurrent update, and a margin contrastive loss pulling together dialogues
with matching outcomes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ckm import CkmNetConfig, apply_encode, apply_update, gru_input_vector
from .errors import ConfigurationError
from .model import ModelBundle
from .nn import AdamConfig, Tape, adam_step, dense_named
from .nn import tape as tp
from .text import (
    DIALOGUE_ACTS,
    DialogueHistory,
    Query,
    Utterance,
)

TOPICS = ("budget", "route", "deadline", "design", "estimate", "experiment")

# per-speaker act transition chain; rows sum to 1 over DIALOGUE_ACTS order
ACT_CHAIN = {
    "question": {"answer": 0.7, "clarify": 0.2, "question": 0.1},
    "answer": {"propose": 0.6, "question": 0.2, "clarify": 0.2},
    "propose": {"agree": 0.5, "critique": 0.3, "question": 0.2},
    "critique": {"clarify": 0.6, "propose": 0.3, "question": 0.1},
    "agree": {"question": 0.5, "propose": 0.3, "agree": 0.2},
    "clarify": {"propose": 0.5, "answer": 0.3, "question": 0.2},
}

ACT_TEMPLATES = {
    "question": "what is the right {topic} value, is {n} correct?",
    "answer": "the {topic} value is {n}",
    "propose": "i propose {n} for the {topic}",
    "critique": "i disagree, {n} seems wrong for the {topic}",
    "agree": "i agree with {n} for the {topic}",
    "clarify": "to clarify, the {topic} means our shared target",
}


def _next_act(act: str, rng: np.random.Generator) -> str:
    options = ACT_CHAIN[act]
    names = list(options)
    probs = np.array([options[name] for name in names])
    return names[int(rng.choice(len(names), p=probs))]


def generate_corpus(n_dialogues: int, seed: int, path: str | Path | None = None) -> list[dict]:
    """Synthetic dialogues: {id, turns: [{speaker, act, text}], outcome}."""
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0], dtype=np.uint64)))
    dialogues = []
    for d in range(n_dialogues):
        speakers = list(range(int(rng.integers(2, 4))))
        topic = TOPICS[int(rng.integers(len(TOPICS)))]
        turns_per_speaker = int(rng.integers(5, 8))
        acts = {s: ["question" if rng.random() < 0.5 else "propose"] for s in speakers}
        for s in speakers:
            for _ in range(turns_per_speaker - 1):
                acts[s].append(_next_act(acts[s][-1], rng))
        turns = []
        for turn_idx in range(turns_per_speaker):
            for s in speakers:
                act = acts[s][turn_idx]
                text = ACT_TEMPLATES[act].format(topic=topic, n=int(rng.integers(0, 100)))
                turns.append({"speaker": s, "act": act, "text": text})
        agreements = sum(1 for t in turns if t["act"] == "agree")
        outcome = "success" if agreements >= 2 else "failure"
        dialogues.append({"id": f"dlg-{seed}-{d}", "turns": turns, "outcome": outcome})
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            for dialogue in dialogues:
                fh.write(json.dumps(dialogue) + "\n")
    return dialogues


def load_corpus(path: str | Path) -> list[dict]:
    dialogues = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            if "id" not in record or "turns" not in record:
                raise ConfigurationError(f"{path}:{line_number}: dialogue needs id and turns")
            for turn in record["turns"]:
                if turn.get("act") not in DIALOGUE_ACTS:
                    raise ConfigurationError(
                        f"{path}:{line_number}: unknown act {turn.get('act')!r}"
                    )
            dialogues.append(record)
    return dialogues


@dataclass
class PretrainConfig:
    lr: float = 1e-4
    epochs: int = 5
    batch_size: int = 32
    window: int = 5
    contrastive_margin: float = 1.0
    contrastive_pairs_per_batch: int = 8
    seed: int = 0


@dataclass
class PretrainSample:
    """One masked window of a single speaker's utterances."""

    utterances: list[Utterance]
    mask_index: int
    masked_embedding: np.ndarray
    next_act: int
    query: Query
    history_rows: np.ndarray  # (2, 128): query embedding + condensed stand-in
    outcome: str
    dialogue_id: str


@dataclass
class PretrainResult:
    epoch_losses: list[float] = field(default_factory=list)
    component_losses: list[dict] = field(default_factory=list)
    next_act_accuracy: float = 0.0
    majority_baseline: float = 0.0


def _dialogue_samples(
    dialogue: dict, cfg: PretrainConfig, rng: np.random.Generator
) -> list[PretrainSample]:
    query = Query.from_text(dialogue["turns"][0]["text"], "pretrain")
    spoken: dict[int, list[Utterance]] = {}
    for turn_idx, turn in enumerate(dialogue["turns"]):
        utt = Utterance.from_text(turn["speaker"], turn_idx + 1, turn["text"], act=turn["act"])
        spoken.setdefault(turn["speaker"], []).append(utt)
    samples = []
    for speaker, utterances in sorted(spoken.items()):
        if len(utterances) < cfg.window + 1:
            continue
        window = utterances[-cfg.window - 1 : -1]
        next_act = DIALOGUE_ACTS.index(utterances[-1].act)
        mask_index = int(rng.integers(len(window)))
        history = DialogueHistory()
        for utt in window:
            history.append(utt)
        from .text import condense_history

        condensed = condense_history(history.embeddings(), cfg.window)
        samples.append(
            PretrainSample(
                utterances=window,
                mask_index=mask_index,
                masked_embedding=np.array(window[mask_index].embedding),
                next_act=next_act,
                query=query,
                history_rows=np.stack([query.embedding, condensed]),
                outcome=dialogue.get("outcome", ""),
                dialogue_id=dialogue["id"],
            )
        )
    return samples


def _encode_window(
    t: Tape, sample: PretrainSample, bundle: ModelBundle, ckm_cfg: CkmNetConfig
) -> tp.Node:
    """Window encoding with the masked utterance's row zeroed."""
    from .ckm import UTT_ROW_DIM, masked_profile

    rows = []
    for i, utt in enumerate(sample.utterances):
        if i == sample.mask_index:
            rows.append(np.zeros(UTT_ROW_DIM))
        else:
            rows.append(np.concatenate((utt.embedding, masked_profile(utt, None))))
    return apply_encode(
        t,
        t.const(sample.history_rows),
        t.const(np.stack(rows)),
        bundle.stores["ckm"],
        ckm_cfg,
    )


def pretrain_ckm(
    corpus: list[dict],
    bundle: ModelBundle,
    cfg: PretrainConfig,
) -> PretrainResult:
    """Train encoder + update parameters on the three self-supervised losses."""
    if not corpus:
        raise ConfigurationError("pre-training corpus is empty")
    if len(corpus) < 100:
        raise ConfigurationError(f"pre-training needs >= 100 dialogues, got {len(corpus)}")
    rng = np.random.Generator(np.random.Philox(key=np.array([cfg.seed, 1], dtype=np.uint64)))
    samples: list[PretrainSample] = []
    for dialogue in corpus:
        samples.extend(_dialogue_samples(dialogue, cfg, rng))
    if not samples:
        raise ConfigurationError("corpus produced no usable windows")

    adam = AdamConfig(learning_rate=cfg.lr)
    result = PretrainResult()
    next_acts = np.array([s.next_act for s in samples])
    counts = np.bincount(next_acts, minlength=len(DIALOGUE_ACTS))
    result.majority_baseline = float(counts.max() / len(samples))

    for _ in range(cfg.epochs):
        order = rng.permutation(len(samples))
        epoch_loss = 0.0
        components = {"masked": 0.0, "next_act": 0.0, "contrastive": 0.0}
        n_batches = 0
        for start in range(0, len(samples), cfg.batch_size):
            batch = [samples[i] for i in order[start : start + cfg.batch_size]]
            t = Tape()
            z_nodes = [_encode_window(t, s, bundle, bundle.ckm_cfg) for s in batch]
            z_all = tp.concat_rows(t, z_nodes)

            # masked utterance embedding regression (cosine loss)
            predicted = dense_named(t, z_all, bundle.stores["ckm"], "ckm.mask_head")
            targets = np.stack([s.masked_embedding for s in batch])
            norm = tp.sqrt(t, tp.row_sum(t, tp.mul(t, predicted, predicted)))
            inv = tp.exp(t, tp.neg(t, tp.log(t, norm)))
            cos = tp.mul(t, tp.row_sum(t, tp.mul(t, predicted, t.const(targets))), inv)
            masked_loss = tp.mean_all(t, tp.add_scalar(t, tp.neg(t, cos), 1.0))

            # next-act prediction through one recurrent update on the last row
            gru_inputs = []
            for s in batch:
                history = DialogueHistory()
                for utt in s.utterances:
                    history.append(utt)
                gru_inputs.append(
                    gru_input_vector(s.utterances[-1], s.query, history, bundle.ckm_cfg)
                )
            z_next = apply_update(
                t, z_all, t.const(np.stack(gru_inputs)), bundle.stores["update"]
            )
            logits = dense_named(t, z_next, bundle.stores["ckm"], "ckm.act_head")
            lsm = tp.log_softmax_rows(t, logits)
            act_targets = np.array([s.next_act for s in batch])
            act_loss = tp.neg(t, tp.mean_all(t, tp.select_per_row(t, lsm, act_targets)))

            # outcome-contrastive pairs within the batch
            contrastive_terms = []
            for _ in range(cfg.contrastive_pairs_per_batch):
                i, j = rng.integers(len(batch)), rng.integers(len(batch))
                if i == j:
                    continue
                zi = tp.select_rows(t, z_all, np.array([i]))
                zj = tp.select_rows(t, z_all, np.array([j]))
                diff = tp.sub(t, zi, zj)
                dist = tp.sqrt(t, tp.row_sum(t, tp.mul(t, diff, diff)))
                if batch[i].outcome == batch[j].outcome:
                    contrastive_terms.append(tp.mul(t, dist, dist))
                else:
                    pushed = tp.clip(
                        t, tp.add_scalar(t, tp.neg(t, dist), cfg.contrastive_margin), 0.0, np.inf
                    )
                    contrastive_terms.append(tp.mul(t, pushed, pushed))
            if contrastive_terms:
                stacked = tp.concat_rows(t, contrastive_terms)
                contrastive_loss = tp.mean_all(t, stacked)
            else:
                contrastive_loss = t.const(np.zeros((1, 1)))

            # equal weights across the three objectives
            total = tp.add(t, tp.add(t, masked_loss, act_loss), contrastive_loss)
            t.backward(total)
            adam_step(bundle.stores["ckm"], adam)
            adam_step(bundle.stores["update"], adam)
            epoch_loss += float(total.value[0, 0])
            components["masked"] += float(masked_loss.value[0, 0])
            components["next_act"] += float(act_loss.value[0, 0])
            components["contrastive"] += float(contrastive_loss.value[0, 0])
            n_batches += 1
        result.epoch_losses.append(epoch_loss / n_batches)
        result.component_losses.append({k: v / n_batches for k, v in components.items()})

    # next-act accuracy over the corpus with the trained heads
    correct = 0
    for start in range(0, len(samples), cfg.batch_size):
        batch = samples[start : start + cfg.batch_size]
        t = Tape(grad=False)
        z_nodes = [_encode_window(t, s, bundle, bundle.ckm_cfg) for s in batch]
        z_all = tp.concat_rows(t, z_nodes)
        gru_inputs = []
        for s in batch:
            history = DialogueHistory()
            for utt in s.utterances:
                history.append(utt)
            gru_inputs.append(gru_input_vector(s.utterances[-1], s.query, history, bundle.ckm_cfg))
        z_next = apply_update(t, z_all, t.const(np.stack(gru_inputs)), bundle.stores["update"])
        logits = dense_named(t, z_next, bundle.stores["ckm"], "ckm.act_head")
        predictions = logits.value.argmax(axis=1)
        correct += int((predictions == np.array([s.next_act for s in batch])).sum())
    result.next_act_accuracy = correct / len(samples)
    return result
