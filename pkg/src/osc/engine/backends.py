"""Realization backends: deterministic stub and chat-completion HTTP client.

The stub renders a directive into fixed template text so the whole episode is
a pure function of configuration, seed, and parameters. The HTTP backend sends
the directive as a chat-completion request (system = role/context block, user
= remaining blocks) and retries transport failures twice before giving up.
"""

from __future__ import annotations

import json
import os
import time
import urllib.error
import urllib.request
from dataclasses import dataclass

import numpy as np

from ..errors import BackendError, ConfigurationError
from ..text import Utterance
from .directive import RealizationDirective, style_band

# dialogue act implied by each communication objective
ACT_FOR_OBJECTIVE = {
    "query_understanding": "question",
    "propose_step": "propose",
    "challenge_assumption": "critique",
    "align_plan_element": "propose",
    "request_information": "question",
    "request_explanation": "question",
    "provide_evidence": "answer",
    "confirm_agreement": "agree",
    "summarize_state": "clarify",
    "flag_conflict": "critique",
}

# objectives whose stub payload reveals the speaker's private share
REVEALING_OBJECTIVES = ("propose_step", "provide_evidence")

FILLER_TOKEN = "elaboration"
MAX_FILLER_TOKENS = 40


def _stub_payload_text(directive: RealizationDirective, payload: dict) -> str:
    share = payload["share"]
    target = directive.target
    parts: list[str] = []
    name = directive.objective_name
    if name == "provide_evidence":
        parts.append(f"my share is {share} because my own data shows it")
    elif name == "propose_step":
        parts.append(f"my share is {share} toward the team consensus value")
    elif name == "request_information":
        parts.append(f"please share your value for the consensus question agent_{target}")
    elif name == "request_explanation":
        parts.append(f"please explain your reasoning agent_{target}")
    elif name == "summarize_state":
        parts.append(f"we have {payload.get('known_count', 1)} shares noted so far")
    elif name == "confirm_agreement":
        parts.append("i agree with the current direction")
    elif name == "challenge_assumption":
        parts.append("i must challenge that assumption, it can be proved wrong")
    elif name == "flag_conflict":
        parts.append("i see a conflict between our current values")
    elif name == "align_plan_element":
        parts.append("let us align on the next plan element")
    else:  # query_understanding
        parts.append("do we all understand the consensus question?")
    for requester in payload.get("pending_requests", ()):
        parts.append(
            f"reply to agent_{requester}: my share is {share} "
            f"for the consensus value question"
        )
    return "; ".join(parts)


def realize_stub(
    directive: RealizationDirective,
    payload: dict,
    rng: np.random.Generator | None = None,
) -> Utterance:
    """Template realization; byte-identical for identical inputs.

    Token count grows monotonically with the detail style component.
    """
    filler_count = int(directive.detail * MAX_FILLER_TOKENS)
    filler = (" " + " ".join([FILLER_TOKEN] * filler_count)) if filler_count else ""
    text = (
        f"[{directive.objective_name}] -> agent_{directive.target} | "
        f"detail {style_band(directive.detail)} "
        f"assertiveness {style_band(directive.assertiveness)} | "
        f"{_stub_payload_text(directive, payload)}{filler}"
    )
    return Utterance.from_text(
        payload["speaker"],
        payload["round"],
        text,
        act=ACT_FOR_OBJECTIVE[directive.objective_name],
    )


@dataclass
class HttpBackendConfig:
    base_url: str = ""
    model: str = ""
    temperature: float = 0.7
    top_p: float = 0.9
    max_tokens: int = 512
    retries: int = 2
    backoff_seconds: float = 0.5
    timeout_seconds: float = 30.0
    api_key_env: str = "OSC_API_KEY"


class HttpRealizer:
    """Chat-completion client. Requires the credential at construction time."""

    def __init__(self, cfg: HttpBackendConfig) -> None:
        if not cfg.base_url:
            raise ConfigurationError("http backend requires a base URL")
        key = os.environ.get(cfg.api_key_env, "")
        if not key:
            raise ConfigurationError(
                f"http backend requires the {cfg.api_key_env} environment variable"
            )
        self.cfg = cfg
        self._key = key

    def request_body(self, directive: RealizationDirective) -> dict:
        directive.truncate_to_limit()
        blocks = directive.blocks()
        if directive.simplified:
            system, user = "", "\n".join(blocks)
        else:
            system, user = blocks[0], "\n".join(blocks[1:])
        return {
            "model": self.cfg.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": self.cfg.temperature,
            "top_p": self.cfg.top_p,
            "max_tokens": self.cfg.max_tokens,
        }

    def _post(self, body: dict) -> dict:
        request = urllib.request.Request(
            self.cfg.base_url.rstrip("/") + "/chat/completions",
            data=json.dumps(body).encode("utf-8"),
            headers={
                "Content-Type": "application/json",
                "Authorization": f"Bearer {self._key}",
            },
            method="POST",
        )
        with urllib.request.urlopen(request, timeout=self.cfg.timeout_seconds) as response:
            return json.loads(response.read().decode("utf-8"))

    def realize(self, directive: RealizationDirective, payload: dict) -> Utterance:
        body = self.request_body(directive)
        last_error: Exception | None = None
        for attempt in range(1 + self.cfg.retries):
            try:
                reply = self._post(body)
                text = reply["choices"][0]["message"]["content"]
                return Utterance.from_text(
                    payload["speaker"],
                    payload["round"],
                    text,
                    act=ACT_FOR_OBJECTIVE[directive.objective_name],
                )
            except (urllib.error.URLError, urllib.error.HTTPError, OSError, KeyError, json.JSONDecodeError) as exc:
                last_error = exc
                if attempt < self.cfg.retries:
                    time.sleep(self.cfg.backoff_seconds * (2**attempt))
        raise BackendError(f"realization request failed after retries: {last_error}")


def realize_http(
    directive: RealizationDirective, payload: dict, realizer: HttpRealizer
) -> Utterance:
    return realizer.realize(directive, payload)
