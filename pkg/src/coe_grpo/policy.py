"""Log-linear autoregressive policy over the trace vocabulary.

The logits at step ``t`` are ``W @ c_t`` with the context

    c_t = [features (18) ; one_hot(prev token or BOS) (17) ; memory (16)]

where ``memory = sum_{s<t} decay**(t-1-s) * one_hot(z_s)`` is an
exponentially decayed bag of everything emitted so far. Step 0 sees the
dedicated BOS slot and zero memory.

The step right after ANS_OPEN is the *answer slot*: the policy draws the
label from the logits restricted to {REAL, FAKE}, so for a well-formed trace
``log pi(tau|x) = log p(z|x) + log p(y|x,z)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .env import N_FEATURES
from .vocab import (
    ABSTAIN, LABEL_TOKENS, MAX_TRACE_LEN, VOCAB_SIZE, Token, as_tokens,
    extract_answer, think_close_index,
)

MEMORY_DECAY = 0.6
#: fixed input gain on the feature block (a preconditioner for plain GD)
FEATURE_GAIN = 2.0
BOS = VOCAB_SIZE
CONTEXT_DIM = N_FEATURES + (VOCAB_SIZE + 1) + VOCAB_SIZE
N_PARAMS = VOCAB_SIZE * CONTEXT_DIM
CHECKPOINT_SCHEMA = "coe-grpo-policy/1"

_LABEL_IDX = np.array([int(t) for t in LABEL_TOKENS])
_PREV = slice(N_FEATURES, N_FEATURES + VOCAB_SIZE + 1)
_MEM = slice(N_FEATURES + VOCAB_SIZE + 1, CONTEXT_DIM)


class CheckpointError(ValueError):
    pass


def zero_params() -> np.ndarray:
    return np.zeros((VOCAB_SIZE, CONTEXT_DIM))


def check_params(params) -> np.ndarray:
    w = np.asarray(params, dtype=float)
    if w.size != N_PARAMS:
        raise ValueError(f"policy needs {N_PARAMS} parameters, got {w.size}")
    w = w.reshape(VOCAB_SIZE, CONTEXT_DIM)
    if not np.all(np.isfinite(w)):
        raise ValueError("policy parameters must be finite")
    return w


@dataclass(frozen=True)
class Trajectory:
    trace: tuple
    answer: str
    step_logprobs: np.ndarray
    total_logprob: float

    def __len__(self):
        return len(self.trace)


def context_vector(features, prev_token: int = BOS, memory=None) -> np.ndarray:
    c = np.zeros(CONTEXT_DIM)
    c[:N_FEATURES] = FEATURE_GAIN * np.asarray(features, dtype=float)
    c[N_FEATURES + int(prev_token)] = 1.0
    if memory is not None:
        c[_MEM] = memory
    return c


def contexts(features, trace: Sequence[int]) -> np.ndarray:
    """(len(trace), CONTEXT_DIM) matrix: the context each token was emitted from."""
    n = len(trace)
    C = np.zeros((n, CONTEXT_DIM))
    C[:, :N_FEATURES] = FEATURE_GAIN * np.asarray(features, dtype=float)
    mem = np.zeros(VOCAB_SIZE)
    prev = BOS
    for t in range(n):
        C[t, N_FEATURES + prev] = 1.0
        C[t, _MEM] = mem
        mem = MEMORY_DECAY * mem
        prev = int(trace[t])
        mem[prev] += 1.0
    return C


def answer_slots(trace: Sequence[int]) -> np.ndarray:
    """Boolean mask of steps whose previous token is ANS_OPEN."""
    mask = np.zeros(len(trace), dtype=bool)
    for t in range(1, len(trace)):
        mask[t] = trace[t - 1] == Token.ANS_OPEN
    return mask


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def token_dist(params, features, prev_token: int = BOS, memory=None) -> np.ndarray:
    """Next-token distribution over the full vocabulary for one context."""
    w = check_params(params)
    return softmax(w @ context_vector(features, prev_token, memory))


def _slot_dists(logits: np.ndarray, slots: np.ndarray) -> np.ndarray:
    """Per-step distributions; answer slots are renormalized over the labels."""
    p = softmax(logits)
    if slots.any():
        q = np.zeros((int(slots.sum()), VOCAB_SIZE))
        q[:, _LABEL_IDX] = softmax(logits[slots][:, _LABEL_IDX])
        p[slots] = q
    return p


def step_logprobs(params, features, trace: Sequence[int]) -> np.ndarray:
    w = check_params(params)
    trace = [int(t) for t in trace]
    slots = answer_slots(trace)
    for t in np.flatnonzero(slots):
        if trace[t] not in _LABEL_IDX:
            raise ValueError(
                f"token {Token(trace[t]).name} after ANS_OPEN is outside the policy's support"
            )
    logits = contexts(features, trace) @ w.T
    full = _log_normalize(logits)
    out = full[np.arange(len(trace)), trace]
    if slots.any():
        lab = logits[slots][:, _LABEL_IDX]
        lab = _log_normalize(lab)
        pos = np.searchsorted(_LABEL_IDX, np.asarray(trace)[slots])
        out[slots] = lab[np.arange(len(pos)), pos]
    return out


def _total(steps) -> float:
    total = 0.0
    for v in steps:
        total += float(v)
    return total


def logprob(params, features, trace: Sequence[int]) -> float:
    if len(trace) == 0:
        raise ValueError("trace must be non-empty")
    return _total(step_logprobs(params, features, trace))


def score_residuals(params, features, trace: Sequence[int]):
    """Contexts ``C`` and residuals ``R`` with ``d logprob / dW = R.T @ C``."""
    w = check_params(params)
    trace = [int(t) for t in trace]
    C = contexts(features, trace)
    slots = answer_slots(trace)
    P = _slot_dists(C @ w.T, slots)
    R = -P
    R[np.arange(len(trace)), trace] += 1.0
    return C, R


def grad_logprob(params, features, trace: Sequence[int]) -> np.ndarray:
    if len(trace) == 0:
        raise ValueError("trace must be non-empty")
    C, R = score_residuals(params, features, trace)
    return R.T @ C


def _log_normalize(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax with max subtraction."""
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _decode_batch(params, features: np.ndarray, max_len: int, pick) -> list[Trajectory]:
    """Decode ``len(features)`` traces in lockstep.

    ``pick(probs, row)`` returns the chosen column of ``probs`` for batch
    ``row``; it is called once per live row per step, in row order.
    """
    if max_len > MAX_TRACE_LEN:
        raise ValueError(f"max_len must be <= {MAX_TRACE_LEN}")
    w = check_params(params)
    F = np.atleast_2d(np.asarray(features, dtype=float))
    B = len(F)
    # row-wise products rather than matmul: BLAS rounding can depend on the
    # batch size, and a row's trajectory must not depend on its batch mates
    base = ((FEATURE_GAIN * F)[:, None, :] * w[None, :, :N_FEATURES]).sum(-1)
    w_prev = w[:, _PREV]
    w_mem = w[:, _MEM]
    mem = np.zeros((B, VOCAB_SIZE))
    prev = np.full(B, BOS)
    traces = [[] for _ in range(B)]
    steps = [[] for _ in range(B)]
    live = np.ones(B, dtype=bool)
    for _ in range(max_len):
        rows = np.flatnonzero(live)
        if len(rows) == 0:
            break
        logits = base[rows] + w_prev[:, prev[rows]].T + (mem[rows][:, None, :] * w_mem[None]).sum(-1)
        slot = prev[rows] == Token.ANS_OPEN
        logp_full = _log_normalize(logits)
        logp_lab = _log_normalize(logits[:, _LABEL_IDX])
        for k, b in enumerate(rows):
            if slot[k]:
                j = pick(np.exp(logp_lab[k]), b)
                tok, lp = int(_LABEL_IDX[j]), float(logp_lab[k, j])
            else:
                tok = pick(np.exp(logp_full[k]), b)
                lp = float(logp_full[k, tok])
            traces[b].append(tok)
            steps[b].append(lp)
            prev[b] = tok
            if tok == Token.ANS_CLOSE:
                live[b] = False
        mem[rows] *= MEMORY_DECAY
        mem[rows, prev[rows]] += 1.0
    out = []
    for trace, st in zip(traces, steps):
        trace = as_tokens(trace)
        st = np.array(st)
        out.append(Trajectory(trace, extract_answer(trace), st, _total(st)))
    return out


def _inverse_cdf(p: np.ndarray, u: float) -> int:
    k = int(np.searchsorted(np.cumsum(p), u * p.sum(), side="right"))
    return min(k, len(p) - 1)


def sample_trajectories(params, features, rngs: Sequence[np.random.Generator],
                        max_len: int = MAX_TRACE_LEN) -> list[Trajectory]:
    """One trajectory per rng; row ``b`` draws only from ``rngs[b]``."""
    F = np.atleast_2d(np.asarray(features, dtype=float))
    if len(F) == 1 and len(rngs) > 1:
        F = np.repeat(F, len(rngs), axis=0)
    # one uniform per emitted token, inverse-CDF on the realized distribution
    return _decode_batch(params, F, max_len, lambda p, b: _inverse_cdf(p, rngs[b].random()))


def sample_trajectory(params, features, rng: np.random.Generator,
                      max_len: int = MAX_TRACE_LEN) -> Trajectory:
    """Ancestral sampling until ANS_CLOSE or ``max_len`` tokens."""
    return sample_trajectories(params, [features], [rng], max_len)[0]


def greedy_decode_many(params, features, max_len: int = MAX_TRACE_LEN) -> list[Trajectory]:
    return _decode_batch(params, features, max_len, lambda p, b: int(np.argmax(p)))


def greedy_decode(params, features, max_len: int = MAX_TRACE_LEN) -> Trajectory:
    return greedy_decode_many(params, [features], max_len)[0]


def predict_answer(params, features, max_len: int = MAX_TRACE_LEN) -> str:
    return greedy_decode(params, features, max_len).answer


def predict_answers(params, features, max_len: int = MAX_TRACE_LEN) -> list[str]:
    return [t.answer for t in greedy_decode_many(params, features, max_len)]


def answer_context(trace_prefix: Sequence[int]) -> list[int]:
    """Prefix through THINK_CLOSE followed by ANS_OPEN: what the answer slot sees."""
    close = think_close_index(trace_prefix)
    if close is None:
        raise ValueError("trace prefix has no THINK_CLOSE")
    return [int(t) for t in trace_prefix[: close + 1]] + [int(Token.ANS_OPEN)]


def answer_dist(params, features, trace_prefix: Sequence[int]) -> np.ndarray:
    """p(REAL), p(FAKE) at the answer slot following ``prefix + ANS_OPEN``."""
    w = check_params(params)
    prefix = answer_context(trace_prefix)
    # the answer-slot context is what contexts() would give for one more token
    c = contexts(features, prefix + [int(Token.REAL)])[-1]
    return softmax((w @ c)[_LABEL_IDX])


def answer_grad(params, features, trace_prefix: Sequence[int], label: str) -> np.ndarray:
    """Gradient of log p(label | x, z) with respect to W."""
    w = check_params(params)
    prefix = answer_context(trace_prefix)
    c = contexts(features, prefix + [int(Token.REAL)])[-1]
    q = softmax((w @ c)[_LABEL_IDX])
    r = np.zeros(VOCAB_SIZE)
    r[_LABEL_IDX] = -q
    r[int(Token[label])] += 1.0
    return np.outer(r, c)


def _pair_dists(params, C: np.ndarray, slots: np.ndarray | None):
    w = check_params(params)
    if slots is None:
        slots = np.zeros(len(C), dtype=bool)
    return _slot_dists(C @ w.T, slots)


def kl_exact(params_a, params_b, C: np.ndarray, slots: np.ndarray | None = None) -> float:
    """Mean over contexts of KL(pi_a(.|c) || pi_b(.|c)), summed exactly over tokens.

    ``C`` holds context vectors (one per row); ``slots`` flags answer-slot
    contexts whose distribution lives on {REAL, FAKE} only.
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if len(C) == 0:
        raise ValueError("need at least one context")
    pa = _pair_dists(params_a, C, slots)
    pb = _pair_dists(params_b, C, slots)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(pa > 0, pa * (np.log(pa) - np.log(pb)), 0.0)
    kl = float(terms.sum(axis=1).mean())
    return max(kl, 0.0)


def kl_grad(params_a, params_b, C: np.ndarray, slots: np.ndarray | None = None) -> np.ndarray:
    """Gradient of ``kl_exact(a, b, C)`` with respect to ``params_b``."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    pa = _pair_dists(params_a, C, slots)
    pb = _pair_dists(params_b, C, slots)
    return (pb - pa).T @ C / len(C)


class TokenBatch:
    """Many traces stacked row-wise, so losses and gradients are one matmul.

    ``owner[r]`` is the trace index of row ``r``; ``slots[r]`` flags answer
    slots. Row log-probabilities follow the policy's own convention (answer
    slots renormalized over the labels).
    """

    def __init__(self, traces: Sequence[Sequence[int]], features: Sequence):
        if len(traces) == 0:
            raise ValueError("batch must be non-empty")
        Cs, toks, slots, owner = [], [], [], []
        for i, (trace, f) in enumerate(zip(traces, features)):
            trace = [int(t) for t in trace]
            if not trace:
                raise ValueError("traces must be non-empty")
            Cs.append(contexts(f, trace))
            toks.extend(trace)
            s = answer_slots(trace)
            for t in np.flatnonzero(s):
                if trace[t] not in _LABEL_IDX:
                    raise ValueError("answer slot holds a non-label token")
            slots.append(s)
            owner.extend([i] * len(trace))
        self.n = len(traces)
        self.C = np.vstack(Cs)
        self.tokens = np.array(toks)
        self.slots = np.concatenate(slots)
        self.owner = np.array(owner)
        self._rows = np.arange(len(self.tokens))
        self._slot_pos = np.searchsorted(_LABEL_IDX, self.tokens[self.slots])

    def __len__(self):
        return len(self.tokens)

    def _dists(self, w):
        logits = self.C @ w.T
        logp = _log_normalize(logits)
        if self.slots.any():
            lab = logits[self.slots][:, _LABEL_IDX]
            lab = _log_normalize(lab)
            full = np.full((len(lab), VOCAB_SIZE), -np.inf)
            full[:, _LABEL_IDX] = lab
            logp[self.slots] = full
        return logp

    def row_logprobs(self, params) -> np.ndarray:
        logp = self._dists(check_params(params))
        return logp[self._rows, self.tokens]

    def trace_logprobs(self, params) -> np.ndarray:
        return np.bincount(self.owner, weights=self.row_logprobs(params), minlength=self.n)

    def weighted_grad(self, params, row_weights: np.ndarray) -> np.ndarray:
        """Gradient of ``sum_r row_weights[r] * row_logprob[r]``."""
        P = np.exp(self._dists(check_params(params)))
        R = -P * row_weights[:, None]
        R[self._rows, self.tokens] += row_weights
        return R.T @ self.C

    def kl(self, ref_params, params) -> float:
        return kl_exact(ref_params, params, self.C, self.slots)

    def kl_grad(self, ref_params, params) -> np.ndarray:
        return kl_grad(ref_params, params, self.C, self.slots)


def prev_token_contexts(features, prev_tokens: Sequence[int]) -> np.ndarray:
    """Memory-free contexts, one per previous token."""
    return np.stack([context_vector(features, p) for p in prev_tokens])


def save_checkpoint(params, path) -> None:
    w = check_params(params)
    lines = [
        f"schema_version={CHECKPOINT_SCHEMA}",
        f"vocab_size={VOCAB_SIZE}",
        f"feature_length={N_FEATURES}",
        f"context_length={CONTEXT_DIM}",
        "",
    ]
    lines += [repr(float(v)) for v in w.ravel()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> np.ndarray:
    text = Path(path).read_text().split("\n")
    header = {}
    i = 0
    while i < len(text) and text[i]:
        key, _, val = text[i].partition("=")
        header[key] = val
        i += 1
    expect = {
        "schema_version": CHECKPOINT_SCHEMA,
        "vocab_size": str(VOCAB_SIZE),
        "feature_length": str(N_FEATURES),
        "context_length": str(CONTEXT_DIM),
    }
    for key, val in expect.items():
        if header.get(key) != val:
            raise CheckpointError(f"{path}: {key}={header.get(key)!r}, expected {val!r}")
    values = [float(v) for v in text[i + 1:] if v.strip()]
    if len(values) != N_PARAMS:
        raise CheckpointError(f"{path}: {len(values)} parameters, expected {N_PARAMS}")
    return check_params(np.array(values))
