"""Rule-based per-utterance feature channels.

Channels are cheap linguistic proxies computed from fixed word lists shipped
with the package: a sentiment score, a certainty score (one minus the hedging
hit rate), an interrogative flag, a 6-way dialogue-act one-hot, and claim /
evidence marker flags. All values lie in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np

DIALOGUE_ACTS = ("question", "answer", "propose", "critique", "agree", "clarify")
PROFILE_DIM = 3 + len(DIALOGUE_ACTS) + 2  # sentiment, certainty, interrogative, acts, claim, evidence


@lru_cache(maxsize=None)
def load_lexicon(name: str) -> frozenset[str]:
    """One term per line, UTF-8; blank lines ignored."""
    text = resources.files("osc.text").joinpath(f"data/{name}.txt").read_text("utf-8")
    return frozenset(line.strip() for line in text.splitlines() if line.strip())


@dataclass
class CandidateDimensionProfile:
    sentiment: float
    certainty: float
    interrogative: float
    act_one_hot: np.ndarray = field(repr=False)
    claim: float
    evidence: float

    def as_vector(self) -> np.ndarray:
        return np.concatenate(
            (
                [self.sentiment, self.certainty, self.interrogative],
                self.act_one_hot,
                [self.claim, self.evidence],
            )
        )


def profile_dimensions(text: str, tokens: list[str], act: str | None) -> CandidateDimensionProfile:
    hedges = load_lexicon("hedging")
    positive = load_lexicon("sentiment_positive")
    negative = load_lexicon("sentiment_negative")
    claims = load_lexicon("claim_markers")
    evidence_terms = load_lexicon("evidence_markers")

    n = max(1, len(tokens))
    hedge_rate = sum(1 for tok in tokens if tok in hedges) / n
    pos = sum(1 for tok in tokens if tok in positive)
    neg = sum(1 for tok in tokens if tok in negative)

    one_hot = np.zeros(len(DIALOGUE_ACTS))
    if act is not None and act in DIALOGUE_ACTS:
        one_hot[DIALOGUE_ACTS.index(act)] = 1.0

    return CandidateDimensionProfile(
        sentiment=0.5 + 0.5 * (pos - neg) / n,
        certainty=1.0 - hedge_rate,
        interrogative=1.0 if text.rstrip().endswith("?") else 0.0,
        act_one_hot=one_hot,
        claim=1.0 if any(tok in claims for tok in tokens) else 0.0,
        evidence=1.0 if any(tok in evidence_terms for tok in tokens) else 0.0,
    )
