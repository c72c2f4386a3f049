import json
import logging
import threading
from datetime import date
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from misder.data import NewsArticle
from misder.events import extract_events


def articles(n=3):
    return [NewsArticle(id=f"a{i}", text=f"article text {i}", label=0,
                        timestamp=date(2015, 1, 1 + i)) for i in range(n)]


class TestOffline:
    def test_offline_mean_returns_texts(self):
        arts = articles()
        assert extract_events(arts, "offline_mean") == [a.text for a in arts]

    def test_unknown_extractor(self):
        with pytest.raises(ValueError, match="extractor"):
            extract_events(articles(), "psychic")


class TestSidecar:
    def test_all_ids_present(self, tmp_path):
        arts = articles()
        p = tmp_path / "events.jsonl"
        p.write_text("\n".join(json.dumps({"id": a.id, "event": f"event {a.id}"})
                               for a in arts))
        out = extract_events(arts, "sidecar_file", sidecar_path=str(p))
        assert out == [f"event {a.id}" for a in arts]

    def test_missing_id_falls_back_to_text(self, tmp_path, caplog):
        arts = articles()
        p = tmp_path / "events.jsonl"
        p.write_text(json.dumps({"id": "a0", "event": "only one"}))
        with caplog.at_level(logging.WARNING):
            out = extract_events(arts, "sidecar_file", sidecar_path=str(p))
        assert out[0] == "only one"
        assert out[1] == arts[1].text
        assert any("missing" in r.message for r in caplog.records)

    def test_path_required(self):
        with pytest.raises(ValueError, match="sidecar_path"):
            extract_events(articles(), "sidecar_file")


class _StubHandler(BaseHTTPRequestHandler):
    fail_first = 0
    calls = 0
    reply = "stub event"

    def do_POST(self):
        cls = _StubHandler
        cls.calls += 1
        self.rfile.read(int(self.headers.get("Content-Length", 0)))
        if cls.calls <= cls.fail_first:
            self.send_response(500)
            self.end_headers()
            return
        body = json.dumps({"choices": [{"message": {"content": cls.reply}}]}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *a):
        pass


@pytest.fixture
def stub_server():
    _StubHandler.calls = 0
    _StubHandler.fail_first = 0
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}/v1/chat/completions"
    server.shutdown()


class TestHttpLlm:
    def test_stub_reply_used_per_article(self, stub_server):
        out = extract_events(articles(2), "http_llm", endpoint=stub_server,
                             backoff=0.0)
        assert out == ["stub event", "stub event"]

    def test_retries_then_succeeds(self, stub_server):
        _StubHandler.fail_first = 2
        out = extract_events(articles(1), "http_llm", endpoint=stub_server,
                             retries=3, backoff=0.0)
        assert out == ["stub event"]
        assert _StubHandler.calls == 3

    def test_exhausted_retries_fall_back_to_text(self, stub_server, caplog):
        _StubHandler.fail_first = 99
        arts = articles(1)
        with caplog.at_level(logging.WARNING):
            out = extract_events(arts, "http_llm", endpoint=stub_server,
                                 retries=3, backoff=0.0)
        assert out == [arts[0].text]
        assert any("falling back" in r.message for r in caplog.records)

    def test_endpoint_required(self, monkeypatch):
        monkeypatch.delenv("MISDER_LLM_ENDPOINT", raising=False)
        with pytest.raises(ValueError, match="endpoint"):
            extract_events(articles(1), "http_llm")
