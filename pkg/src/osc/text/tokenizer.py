"""Deterministic lowercase tokenizer.

Tokens are maximal runs of letters or of digits; every other non-space
character is its own token. Joining tokens with spaces and re-tokenizing is
idempotent, which keeps token counts stable under round-trips.
"""

from __future__ import annotations


def tokenize(text: str) -> list[str]:
    tokens: list[str] = []
    current: list[str] = []
    current_kind = ""  # "alpha" or "digit" while a run is open

    def flush() -> None:
        nonlocal current_kind
        if current:
            tokens.append("".join(current))
            current.clear()
        current_kind = ""

    for ch in text.lower():
        if ch.isspace():
            flush()
        elif ch.isalpha():
            if current_kind != "alpha":
                flush()
                current_kind = "alpha"
            current.append(ch)
        elif ch.isdigit():
            if current_kind != "digit":
                flush()
                current_kind = "digit"
            current.append(ch)
        else:
            flush()
            tokens.append(ch)
    flush()
    return tokens
