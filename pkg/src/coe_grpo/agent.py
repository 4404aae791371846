"""Client for an external judge service.

Wire format (JSON over HTTP POST)::

    request  {"schema_version": "coe-judge/1", "instructions_id": ...,
              "trace": [token names], "gold": [token names],
              "views": {"SPECTRAL": [...], "HIGHPASS": [...], "PATCHES": [...]}}
    response {"a_sem": float, "a_logic": float, "a_view": float}

Responses are cached by the SHA-256 of the canonical request, so a run sees
one deterministic score per distinct request.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import urllib.error
import urllib.request
from pathlib import Path
from typing import Callable

from .env import View
from .rewards import OracleJudge
from .vocab import token_names

log = logging.getLogger(__name__)

JUDGE_SCHEMA = "coe-judge/1"
SCORE_KEYS = ("a_sem", "a_logic", "a_view")


class JudgeError(RuntimeError):
    pass


class JudgeTransportError(JudgeError):
    pass


class JudgeResponseError(JudgeError):
    pass


class JudgeScoreRangeError(JudgeResponseError):
    pass


def build_request(trace, gold_trace, views, instructions_id: str = "coe-forensic-v1") -> dict:
    visible = {}
    for v in View:
        kinds = views.visible[v] if views is not None else ()
        visible[v.name] = sorted(k.name for k in kinds)
    return {
        "schema_version": JUDGE_SCHEMA,
        "instructions_id": instructions_id,
        "trace": token_names(trace),
        "gold": token_names(gold_trace),
        "views": visible,
    }


def request_key(request: dict) -> str:
    blob = json.dumps(request, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def parse_response(payload) -> tuple[float, float, float]:
    if isinstance(payload, (bytes, str)):
        try:
            payload = json.loads(payload)
        except json.JSONDecodeError as exc:
            raise JudgeResponseError(f"response is not JSON: {exc}") from None
    if not isinstance(payload, dict):
        raise JudgeResponseError("response must be a JSON object")
    out = []
    for key in SCORE_KEYS:
        val = payload.get(key)
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise JudgeResponseError(f"{key} missing or non-numeric: {val!r}")
        val = float(val)
        if not 0.0 <= val <= 1.0:  # NaN fails this too
            raise JudgeScoreRangeError(f"{key}={val} outside [0, 1]")
        out.append(val)
    return tuple(out)


def http_transport(endpoint: str, timeout: float) -> Callable[[dict], bytes]:
    def send(request: dict) -> bytes:
        body = json.dumps(request).encode()
        req = urllib.request.Request(
            endpoint, data=body, headers={"Content-Type": "application/json"}, method="POST"
        )
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                return resp.read()
        except (urllib.error.URLError, OSError) as exc:
            raise JudgeTransportError(f"{endpoint}: {exc}") from exc
    return send


class AgentJudge:
    """Scores traces by asking an external service, with a content-hash cache.

    ``transport`` maps a request dict to raw response bytes and raises
    ``JudgeTransportError`` on failure; it defaults to HTTP POST to
    ``endpoint``. Transport failures are retried ``retries`` times.
    """

    def __init__(self, endpoint: str | None = None, timeout: float = 30.0, retries: int = 2,
                 transport: Callable[[dict], bytes] | None = None, cache_path=None,
                 max_in_flight: int = 4, instructions_id: str = "coe-forensic-v1"):
        if transport is None:
            if not endpoint:
                raise ValueError("AgentJudge needs an endpoint or a transport")
            transport = http_transport(endpoint, timeout)
        self.transport = transport
        self.retries = retries
        self.instructions_id = instructions_id
        self.cache: dict[str, tuple[float, float, float]] = {}
        self.cache_path = Path(cache_path) if cache_path else None
        self.calls = 0
        self._lock = threading.Lock()
        self._slots = threading.BoundedSemaphore(max_in_flight)
        if self.cache_path and self.cache_path.exists():
            self._load_cache()

    def _load_cache(self):
        for line in self.cache_path.read_text().splitlines():
            if line.strip():
                rec = json.loads(line)
                self.cache[rec["key"]] = parse_response(rec["scores"])

    def _store(self, key, scores):
        with self._lock:
            if key in self.cache:
                return
            self.cache[key] = scores
            if self.cache_path:
                with self.cache_path.open("a") as fh:
                    fh.write(json.dumps({"key": key, "scores": dict(zip(SCORE_KEYS, scores))}) + "\n")

    def score(self, trace, gold_trace, views) -> tuple[float, float, float]:
        request = build_request(trace, gold_trace, views, self.instructions_id)
        key = request_key(request)
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        last = None
        for _ in range(self.retries + 1):
            try:
                with self._slots:
                    self.calls += 1
                    raw = self.transport(request)
                break
            except JudgeTransportError as exc:
                last = exc
        else:
            raise last
        scores = parse_response(raw)
        self._store(key, scores)
        return scores

    def assess(self, trace, gold_trace, shuffled, views, params, features):
        return self.score(trace, gold_trace, views)


class FallbackJudge:
    """Use ``primary``; on any JudgeError score with ``fallback`` instead."""

    def __init__(self, primary, fallback=None):
        self.primary = primary
        self.fallback = fallback or OracleJudge()
        self.fallbacks = 0

    def assess(self, trace, gold_trace, shuffled, views, params, features):
        try:
            return self.primary.assess(trace, gold_trace, shuffled, views, params, features)
        except JudgeError as exc:
            self.fallbacks += 1
            log.warning("judge failed (%s); using fallback", exc)
            return self.fallback.assess(trace, gold_trace, shuffled, views, params, features)


def make_judge(mode: str, logic_direction: str = "stability", endpoint: str | None = None,
               timeout: float = 30.0, retries: int = 2, cache_path=None):
    oracle = OracleJudge(logic_direction)
    if mode == "oracle":
        return oracle
    agent = AgentJudge(endpoint, timeout=timeout, retries=retries, cache_path=cache_path)
    if mode == "agent":
        return agent
    if mode == "agent-with-fallback":
        return FallbackJudge(agent, oracle)
    raise ValueError(f"unknown judge mode {mode!r}")
