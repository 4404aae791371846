"""Trace vocabulary and the think/answer grammar."""

from __future__ import annotations

from enum import IntEnum
from typing import Iterable, Sequence


class Token(IntEnum):
    THINK_OPEN = 0
    THINK_CLOSE = 1
    ANS_OPEN = 2
    ANS_CLOSE = 3
    REAL = 4
    FAKE = 5
    NO_ARTIFACT = 6
    SEP = 7
    CHECKER = 8
    HF_SPIKE = 9
    RINGING = 10
    TEX_REPEAT = 11
    FLAT_PATCH = 12
    NOISE_DEFICIT = 13
    EDGE_HALO = 14
    SAT_CLIP = 15


VOCAB_SIZE = len(Token)
MAX_TRACE_LEN = 32

LABEL_TOKENS = (Token.REAL, Token.FAKE)
ARTIFACT_TOKENS = tuple(Token(i) for i in range(Token.CHECKER, VOCAB_SIZE))
BODY_TOKENS = frozenset(ARTIFACT_TOKENS) | {Token.SEP, Token.NO_ARTIFACT}

ABSTAIN = "ABSTAIN"
LABELS = ("REAL", "FAKE")


def as_tokens(trace: Iterable) -> tuple[Token, ...]:
    """Coerce ints or token names to a tuple of ``Token``."""
    out = []
    for t in trace:
        out.append(Token[t] if isinstance(t, str) else Token(int(t)))
    return tuple(out)


def token_names(trace: Iterable) -> list[str]:
    return [Token(int(t)).name for t in trace]


def think_close_index(trace: Sequence[int]) -> int | None:
    """Index of the first THINK_CLOSE, or None."""
    for i, t in enumerate(trace):
        if t == Token.THINK_CLOSE:
            return i
    return None


def is_well_formed(trace: Sequence[int]) -> bool:
    """``<think> body </think> <answer> LABEL </answer>`` and nothing else.

    The body may only hold artifact tokens, SEP and NO_ARTIFACT.
    """
    n = len(trace)
    if n < 5 or trace[0] != Token.THINK_OPEN:
        return False
    close = think_close_index(trace)
    if close is None or close != n - 4:
        return False
    if any(t not in BODY_TOKENS for t in trace[1:close]):
        return False
    return (
        trace[close + 1] == Token.ANS_OPEN
        and trace[close + 2] in LABEL_TOKENS
        and trace[close + 3] == Token.ANS_CLOSE
    )


def extract_answer(trace: Sequence[int]) -> str:
    """'REAL' / 'FAKE' for a well-formed trace, ABSTAIN otherwise."""
    if not is_well_formed(trace):
        return ABSTAIN
    return Token(trace[-2]).name


def think_body(trace: Sequence[int]) -> tuple[Token, ...]:
    """Tokens strictly between the leading THINK_OPEN and the first THINK_CLOSE.

    Empty when the trace has no THINK_OPEN/THINK_CLOSE frame.
    """
    if not trace or trace[0] != Token.THINK_OPEN:
        return ()
    close = think_close_index(trace)
    if close is None:
        return ()
    return tuple(Token(t) for t in trace[1:close])


def claimed_artifacts(trace: Sequence[int]) -> frozenset:
    return frozenset(t for t in think_body(trace) if t in ARTIFACT_TOKENS)
