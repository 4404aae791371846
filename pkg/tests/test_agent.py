import json
import socket
import threading
from concurrent.futures import ThreadPoolExecutor
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from coe_grpo import agent
from coe_grpo.agent import (
    AgentJudge, FallbackJudge, JudgeResponseError, JudgeScoreRangeError,
    JudgeTransportError, build_request, parse_response, request_key,
)
from coe_grpo.policy import zero_params
from coe_grpo.rewards import OracleJudge, RewardWeights, composite_reward
from coe_grpo.policy import Trajectory
from coe_grpo.vocab import extract_answer


class Handler(BaseHTTPRequestHandler):
    reply = {"a_sem": 0.7, "a_logic": 1.0, "a_view": 0.5}
    seen: list = []

    def do_POST(self):
        body = self.rfile.read(int(self.headers["Content-Length"]))
        Handler.seen.append(json.loads(body))
        out = json.dumps(Handler.reply).encode() if isinstance(Handler.reply, dict) else Handler.reply
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        self.wfile.write(out)

    def log_message(self, *a):
        pass


@pytest.fixture
def server():
    Handler.seen = []
    Handler.reply = {"a_sem": 0.7, "a_logic": 1.0, "a_view": 0.5}
    srv = HTTPServer(("127.0.0.1", 0), Handler)
    t = threading.Thread(target=srv.serve_forever, daemon=True)
    t.start()
    yield f"http://127.0.0.1:{srv.server_port}/judge"
    srv.shutdown()


def test_valid_response_and_cache(server, small_set):
    inst = small_set[0]
    j = AgentJudge(server)
    assert j.score(inst.gold_trace, inst.gold_trace, inst.views) == (0.7, 1.0, 0.5)
    assert j.score(inst.gold_trace, inst.gold_trace, inst.views) == (0.7, 1.0, 0.5)
    assert j.calls == 1 and len(Handler.seen) == 1
    req = Handler.seen[0]
    assert req["schema_version"] == agent.JUDGE_SCHEMA
    assert req["trace"][0] == "THINK_OPEN" and set(req["views"]) == {"SPECTRAL", "HIGHPASS", "PATCHES"}


def test_out_of_range_and_malformed(server, small_set):
    inst = small_set[0]
    Handler.reply = {"a_sem": 1.3, "a_logic": 1.0, "a_view": 0.5}
    with pytest.raises(JudgeScoreRangeError):
        AgentJudge(server).score(inst.gold_trace, inst.gold_trace, inst.views)
    Handler.reply = b"not json"
    with pytest.raises(JudgeResponseError):
        AgentJudge(server).score(inst.gold_trace, inst.gold_trace, inst.views)
    Handler.reply = {"a_sem": "high", "a_logic": 1.0, "a_view": 0.5}
    with pytest.raises(JudgeResponseError):
        AgentJudge(server).score(inst.gold_trace, inst.gold_trace, inst.views)


def _closed_port():
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return f"http://127.0.0.1:{port}/judge"


def test_transport_error_is_distinct(small_set):
    inst = small_set[0]
    j = AgentJudge(_closed_port(), timeout=1.0, retries=1)
    with pytest.raises(JudgeTransportError):
        j.score(inst.gold_trace, inst.gold_trace, inst.views)
    assert j.calls == 2
    assert not issubclass(JudgeTransportError, JudgeResponseError)


def test_fallback_uses_oracle(small_set):
    inst = small_set[0]
    fb = FallbackJudge(AgentJudge(_closed_port(), timeout=1.0, retries=0), OracleJudge())
    traj = Trajectory(inst.gold_trace, extract_answer(inst.gold_trace), None, 0.0)
    b1 = composite_reward(traj, inst, RewardWeights(), 0, fb, zero_params())
    b2 = composite_reward(traj, inst, RewardWeights(), 0, OracleJudge(), zero_params())
    assert b1 == b2 and fb.fallbacks == 1


def test_agent_drives_composite_reward(server, small_set):
    inst = small_set[0]
    traj = Trajectory(inst.gold_trace, extract_answer(inst.gold_trace), None, 0.0)
    b = composite_reward(traj, inst, RewardWeights(), 0, AgentJudge(server), zero_params())
    assert (b.a_sem, b.a_logic, b.r_view) == (0.7, 1.0, 0.5)
    assert b.total == 1.0 + 0.5 * 1.7 + 0.5 * 0.5


def test_persisted_cache(tmp_path, server, small_set):
    inst = small_set[0]
    path = tmp_path / "cache.jsonl"
    AgentJudge(server, cache_path=path).score(inst.gold_trace, inst.gold_trace, inst.views)
    j2 = AgentJudge(_closed_port(), cache_path=path)
    assert j2.score(inst.gold_trace, inst.gold_trace, inst.views) == (0.7, 1.0, 0.5)
    assert j2.calls == 0


def test_concurrent_requests_share_cache(small_set):
    calls = []

    def transport(req):
        calls.append(request_key(req))
        return json.dumps({"a_sem": 0.2, "a_logic": 0.0, "a_view": 1.0}).encode()

    j = AgentJudge(transport=transport, max_in_flight=2)
    with ThreadPoolExecutor(4) as ex:
        res = list(ex.map(lambda i: j.score(i.gold_trace, i.gold_trace, i.views), small_set * 3))
    assert all(r == (0.2, 0.0, 1.0) for r in res)
    assert len(j.cache) == len({request_key(build_request(i.gold_trace, i.gold_trace, i.views)) for i in small_set})


def test_request_key_is_content_hash(small_set):
    a = build_request(small_set[0].gold_trace, small_set[0].gold_trace, small_set[0].views)
    b = json.loads(json.dumps(a))
    assert request_key(a) == request_key(b) and len(request_key(a)) == 64


def test_parse_response_bounds():
    assert parse_response({"a_sem": 0, "a_logic": 1, "a_view": 0.5}) == (0.0, 1.0, 0.5)
    with pytest.raises(JudgeScoreRangeError):
        parse_response({"a_sem": float("nan"), "a_logic": 1, "a_view": 0.5})
    with pytest.raises(JudgeResponseError):
        parse_response({"a_sem": True, "a_logic": 1, "a_view": 0.5})
    with pytest.raises(JudgeResponseError):
        parse_response([1, 2, 3])


def test_make_judge_modes():
    assert isinstance(agent.make_judge("oracle"), OracleJudge)
    assert isinstance(agent.make_judge("agent", endpoint="http://x"), AgentJudge)
    assert isinstance(agent.make_judge("agent-with-fallback", endpoint="http://x"), FallbackJudge)
    with pytest.raises(ValueError):
        agent.make_judge("other")
