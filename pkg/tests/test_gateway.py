import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest
from hypothesis import given, strategies as st

from hdlagent.errors import (ExtractionError, ProviderError, ProviderTimeoutError,
                             ScriptedMockError, TemplateError)
from hdlagent.gateway import (Gateway, PromptTemplate, ProviderConfig, ScriptedMock,
                              TokenBucket, complete, extract_all_fences, extract_fenced_code,
                              render_template)


def mock_cfg(**kw):
    kw.setdefault("backoff_base", 0)
    return ProviderConfig("mock:inline", **kw)


def test_render_substitutes():
    t = PromptTemplate("fix", "Fix: {code}")
    assert render_template(t, {"code": "module m;"}) == "Fix: module m;"


def test_render_missing_binding_named():
    t = PromptTemplate("fix", "{code}\n{log}")
    with pytest.raises(TemplateError, match="log"):
        render_template(t, {"code": "x"})


def test_render_brace_escape():
    t = PromptTemplate("t", "always @(*) begin {{ {x} }}")
    assert render_template(t, {"x": "a"}) == "always @(*) begin { a }"


def test_render_leaves_binding_text_alone():
    t = PromptTemplate("t", "{a}")
    assert render_template(t, {"a": "{b} }}"}) == "{b} }}"


@given(st.text(alphabet=st.characters(blacklist_characters="{}"), max_size=40),
       st.text(max_size=40))
def test_render_property(prefix, value):
    t = PromptTemplate("t", prefix + "{v}")
    assert render_template(t, {"v": value}) == prefix + value


def test_scripted_mock_single_response():
    ex = complete(mock_cfg(), "hi", provider=ScriptedMock([{"response_text": "A"}]))
    assert ex.response == "A" and ex.latency >= 0 and ex.attempts == 1


def test_retries_then_succeeds():
    mock = ScriptedMock([{"error": "transport", "repeat": 2}, {"response_text": "B"}])
    gw = Gateway(mock_cfg(max_retries=3), mock)
    ex = gw.complete("hi")
    assert ex.response == "B" and gw.transport_attempts == 3 and ex.attempts == 3


def test_always_failing_gives_provider_error():
    mock = ScriptedMock([{"error": "transport", "repeat": 5}])
    gw = Gateway(mock_cfg(max_retries=1), mock)
    with pytest.raises(ProviderError) as ei:
        gw.complete("hi")
    assert gw.transport_attempts == 2 and ei.value.attempts == 2


def test_timeouts_surface_as_timeout_error():
    mock = ScriptedMock([{"error": "timeout", "repeat": 3}])
    with pytest.raises(ProviderTimeoutError):
        Gateway(mock_cfg(max_retries=2), mock).complete("hi")


def test_backoff_is_exponential():
    slept = []
    mock = ScriptedMock([{"error": "transport", "repeat": 3}, {"response_text": "ok"}])
    Gateway(mock_cfg(max_retries=3, backoff_base=0.5), mock, sleep=slept.append).complete("x")
    assert slept == [0.5, 1.0, 2.0]


def test_mock_matches_by_substring_in_order():
    mock = ScriptedMock([{"expect_substring": "[b]", "response_text": "B"},
                         {"expect_substring": "[a]", "response_text": "A1"},
                         {"expect_substring": "[a]", "response_text": "A2"}])
    cfg = mock_cfg()
    assert complete(cfg, "x [a]", provider=mock).response == "A1"
    assert complete(cfg, "x [b]", provider=mock).response == "B"
    assert complete(cfg, "x [a]", provider=mock).response == "A2"
    with pytest.raises(ScriptedMockError, match="no unconsumed record"):
        complete(cfg, "x [a]", provider=mock)


def test_mock_rejects_unknown_fields():
    with pytest.raises(ScriptedMockError, match="bogus"):
        ScriptedMock([{"response_text": "a", "bogus": 1}])


def test_mock_state_persists(tmp_path):
    recs = [{"response_text": "one"}, {"response_text": "two"}]
    state = tmp_path / "state.json"
    first = ScriptedMock(recs, state)
    assert complete(mock_cfg(), "p", provider=first).response == "one"
    again = ScriptedMock(recs, state)
    assert again.remaining == 1
    assert complete(mock_cfg(), "p", provider=again).response == "two"


def test_mock_from_file_reports_bad_line(tmp_path):
    p = tmp_path / "s.jsonl"
    p.write_text('{"response_text": "a"}\nnot json\n')
    with pytest.raises(ScriptedMockError, match=":2:"):
        ScriptedMock.from_file(p)


def test_empty_prompt_rejected():
    with pytest.raises(ValueError):
        complete(mock_cfg(), "", provider=ScriptedMock([{"response_text": "a"}]))


def test_provider_config_bounds():
    with pytest.raises(ValueError):
        ProviderConfig("mock:x", max_retries=-1)
    with pytest.raises(ValueError):
        ProviderConfig("mock:x", timeout=0)


def test_extract_tagged_fence():
    assert extract_fenced_code("x\n```verilog\nmodule m; endmodule\n```\ny", "verilog") \
        == "module m; endmodule\n"


def test_extract_first_fence_without_tag():
    text = "```c\nint a;\n```\n```verilog\nmodule m;\n```\n"
    assert extract_fenced_code(text) == "int a;\n"
    assert extract_fenced_code(text, "verilog") == "module m;\n"


def test_extract_without_fence():
    with pytest.raises(ExtractionError):
        extract_fenced_code("no code here")


def test_extract_unterminated():
    with pytest.raises(ExtractionError, match="unterminated"):
        extract_fenced_code("```verilog\nmodule m;\n")


def test_extract_all_fences():
    text = "```json\n{}\n```\ntext\n```\nplain\n```\n"
    assert extract_all_fences(text) == [("json", "{}\n"), ("", "plain\n")]


@given(st.text(alphabet=st.characters(blacklist_characters="`\r", blacklist_categories=("Cs",)),
               max_size=80))
def test_extract_returns_interior_verbatim(body):
    if body and not body.endswith("\n"):
        body += "\n"
    assert extract_fenced_code(f"intro\n```verilog\n{body}```\n", "verilog") == body


def test_token_bucket_waits():
    now = [0.0]
    slept = []

    def sleep(s):
        slept.append(s)
        now[0] += s
    b = TokenBucket(60.0, clock=lambda: now[0], sleep=sleep)
    for _ in range(60):
        b.acquire()
    assert not slept
    b.acquire()
    assert abs(sum(slept) - 1.0) < 1e-9


class _Handler(BaseHTTPRequestHandler):
    seen = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        _Handler.seen.append((self.headers.get("Authorization"), body))
        out = json.dumps({"choices": [{"message": {"content": "hello"}}]}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(out)))
        self.end_headers()
        self.wfile.write(out)

    def log_message(self, *a):
        pass


def test_http_provider_reads_key_from_env(monkeypatch):
    srv = HTTPServer(("127.0.0.1", 0), _Handler)
    t = threading.Thread(target=srv.serve_forever, daemon=True)
    t.start()
    try:
        monkeypatch.setenv("LLM_API_KEY", "secret-token")
        cfg = ProviderConfig(f"http://127.0.0.1:{srv.server_port}/v1/chat", model_name="m",
                             temperature=0.0, timeout=5)
        ex = complete(cfg, "prompt text")
    finally:
        srv.shutdown()
    assert ex.response == "hello"
    auth, body = _Handler.seen[-1]
    assert auth == "Bearer secret-token"
    assert body["model"] == "m" and body["messages"][0]["content"] == "prompt text"
