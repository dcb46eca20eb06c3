import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from osc.engine.backends import HttpBackendConfig, HttpRealizer
from osc.engine.directive import RealizationDirective
from osc.errors import BackendError, ConfigurationError


class _MockHandler(BaseHTTPRequestHandler):
    captured: list[dict] = []
    fail_count = 0
    mode = "ok"

    def do_POST(self):  # noqa: N802  (stdlib naming)
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        _MockHandler.captured.append(
            {"path": self.path, "auth": self.headers.get("Authorization"), "body": body}
        )
        if _MockHandler.mode == "fail" or (
            _MockHandler.mode == "flaky" and _MockHandler.fail_count > 0
        ):
            if _MockHandler.mode == "flaky":
                _MockHandler.fail_count -= 1
            self.send_response(500)
            self.end_headers()
            self.wfile.write(b"{}")
            return
        reply = {"choices": [{"message": {"content": "mock reply about the consensus"}}]}
        payload = json.dumps(reply).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture()
def mock_server():
    _MockHandler.captured = []
    _MockHandler.mode = "ok"
    _MockHandler.fail_count = 0
    server = HTTPServer(("127.0.0.1", 0), _MockHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()
    thread.join(timeout=2)


def _directive() -> RealizationDirective:
    return RealizationDirective(
        speaker=0,
        target=1,
        objective_name="request_information",
        role_prefix="you are agent_0 of 2 agents working on: q?",
        history_snippets=["earlier message"],
        ckm_assessment="collaborator agent_1: divergence concentrates on dims 0+ 1- 2+",
        own_state="own state: summary",
        gap_focus="gap magnitude 0.5 for pair (agent_0, agent_1)",
        objective_instruction="objective: request_information | target: agent_1",
        style_directives="style: detail=low assertiveness=low",
        detail=0.2,
        assertiveness=0.2,
    )


PAYLOAD = {"speaker": 0, "round": 1, "share": 3, "known_count": 1, "pending_requests": []}


def test_missing_credential_fails_before_any_network(monkeypatch, mock_server):
    monkeypatch.delenv("OSC_API_KEY", raising=False)
    with pytest.raises(ConfigurationError, match="OSC_API_KEY"):
        HttpRealizer(HttpBackendConfig(base_url=mock_server))
    assert _MockHandler.captured == []


def test_missing_base_url_rejected(monkeypatch):
    monkeypatch.setenv("OSC_API_KEY", "k")
    with pytest.raises(ConfigurationError, match="URL"):
        HttpRealizer(HttpBackendConfig(base_url=""))


def test_request_body_matches_configured_sampling(monkeypatch, mock_server):
    monkeypatch.setenv("OSC_API_KEY", "secret-key")
    realizer = HttpRealizer(
        HttpBackendConfig(base_url=mock_server, model="mock-model", backoff_seconds=0.0)
    )
    utterance = realizer.realize(_directive(), PAYLOAD)
    assert utterance.text == "mock reply about the consensus"
    assert utterance.act == "question"
    assert len(_MockHandler.captured) == 1
    request = _MockHandler.captured[0]
    assert request["path"] == "/chat/completions"
    assert request["auth"] == "Bearer secret-key"
    body = request["body"]
    assert body["model"] == "mock-model"
    assert body["temperature"] == 0.7
    assert body["top_p"] == 0.9
    assert body["max_tokens"] == 512
    assert body["messages"][0]["role"] == "system"
    assert body["messages"][0]["content"].startswith("you are agent_0")
    assert body["messages"][1]["role"] == "user"
    assert "objective: request_information" in body["messages"][1]["content"]


def test_retries_then_success(monkeypatch, mock_server):
    monkeypatch.setenv("OSC_API_KEY", "k")
    _MockHandler.mode = "flaky"
    _MockHandler.fail_count = 2
    realizer = HttpRealizer(HttpBackendConfig(base_url=mock_server, backoff_seconds=0.0))
    utterance = realizer.realize(_directive(), PAYLOAD)
    assert utterance.text == "mock reply about the consensus"
    assert len(_MockHandler.captured) == 3  # two failures then success


def test_persistent_failure_aborts_after_retries(monkeypatch, mock_server):
    monkeypatch.setenv("OSC_API_KEY", "k")
    _MockHandler.mode = "fail"
    realizer = HttpRealizer(HttpBackendConfig(base_url=mock_server, retries=2, backoff_seconds=0.0))
    with pytest.raises(BackendError):
        realizer.realize(_directive(), PAYLOAD)
    assert len(_MockHandler.captured) == 3  # initial try plus two retries


def test_backend_failure_marks_episode_invalid(monkeypatch, mock_server):
    monkeypatch.setenv("OSC_API_KEY", "k")
    _MockHandler.mode = "fail"
    from osc.engine import EpisodeConfig, run_episode
    from osc.model import ModelBundle
    from osc.policy import PolicyNetConfig
    from osc.rl import RewardConfig, ShapingConfig

    bundle = ModelBundle.build(
        3, policy_cfg=PolicyNetConfig(enc_layers=1, enc_heads=2, model_dim=32, ff_dim=48)
    )
    realizer = HttpRealizer(HttpBackendConfig(base_url=mock_server, retries=0, backoff_seconds=0.0))
    cfg = EpisodeConfig(agent_count=2, n_round=2, backend="http")
    trace = run_episode(
        cfg, bundle, RewardConfig(), ShapingConfig(tau_conflict=1.0),
        global_seed=1, episode_index=0, realizer=realizer,
    )
    assert trace.valid is False
    assert trace.abort_reason
    assert trace.outcome == "failure"


def test_overlong_directive_truncates_history_block_only(monkeypatch, mock_server):
    monkeypatch.setenv("OSC_API_KEY", "k")
    realizer = HttpRealizer(HttpBackendConfig(base_url=mock_server, backoff_seconds=0.0))
    directive = _directive()
    directive.history_snippets = [f"history snippet {i} " + "word " * 30 for i in range(30)]
    directive.max_tokens = 200
    body = realizer.request_body(directive)
    assert directive.token_count() <= 200
    assert directive.objective_instruction in body["messages"][1]["content"]
    assert directive.ckm_assessment in body["messages"][1]["content"]
    assert len(directive.history_snippets) < 30
