import json
import threading
import time

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ccot_emo.errors import AuthError, NetworkDisabled, ParseFailure, RemoteFailure, ReplayMiss, Timeout
from ccot_emo.model_client import (
    GenerationParams,
    HTTPChatClient,
    MockClient,
    ModelRequest,
    RateLimiter,
    ReplayClient,
    ResponseStore,
    disable_network,
    parse_option_letter,
)
from ccot_emo.prompting import LabelSet

FIVE = LabelSet.for_dataset("default")


@pytest.fixture
def wav(tmp_path):
    p = tmp_path / "a.wav"
    p.write_bytes(b"RIFF....fake audio bytes")
    return p


def ok_transport(counter, reply="The answer is (B)"):
    def handler(request):
        counter.append(json.loads(request.content))
        return httpx.Response(200, json={"choices": [{"message": {"content": reply}}]})

    return httpx.MockTransport(handler)


def status_transport(code, counter):
    def handler(request):
        counter.append(1)
        return httpx.Response(code, json={"error": "x"})

    return httpx.MockTransport(handler)


# keys ---------------------------------------------------------------------------------


def test_key_is_deterministic_and_content_addressed(tmp_path, wav):
    a = ModelRequest.build("prompt", wav)
    assert a.idempotency_key == ModelRequest.build("prompt", wav).idempotency_key
    moved = tmp_path / "elsewhere.wav"
    moved.write_bytes(wav.read_bytes())
    assert ModelRequest.build("prompt", moved).idempotency_key == a.idempotency_key
    assert ModelRequest.build("prompt!", wav).idempotency_key != a.idempotency_key
    assert ModelRequest.build("prompt", wav, GenerationParams(max_output_tokens=8)).idempotency_key != a.idempotency_key
    moved.write_bytes(b"different")
    assert ModelRequest.build("prompt", moved).idempotency_key != a.idempotency_key


# replay and cache -----------------------------------------------------------------------


def test_replay_returns_recorded_text(tmp_path):
    req = ModelRequest.build("q")
    ResponseStore(tmp_path).put(req, "The answer is (B)", "qwen")
    resp = ReplayClient(tmp_path).query(req)
    assert resp.text == "The answer is (B)"
    assert resp.cached is True
    with pytest.raises(ReplayMiss):
        ReplayClient(tmp_path).query(ModelRequest.build("other"))


def test_cache_serves_second_request(tmp_path, wav):
    seen = []
    client = HTTPChatClient("http://model.invalid/v1", "m", cache_dir=tmp_path, transport=ok_transport(seen))
    req = ModelRequest.build("hello", wav)
    first = client.query(req)
    second = client.query(req)
    assert first.text == second.text == "The answer is (B)"
    assert (first.cached, second.cached) == (False, True)
    assert client.calls == 1 and len(seen) == 1
    part = seen[0]["messages"][0]["content"][1]
    assert part["type"] == "input_audio" and part["input_audio"]["format"] == "wav"


def test_recorded_run_replays(tmp_path):
    seen = []
    live = HTTPChatClient("http://model.invalid/v1", "m", record_dir=tmp_path, transport=ok_transport(seen, "C"))
    req = ModelRequest.build("x")
    live.query(req)
    assert ReplayClient(tmp_path).query(req).text == "C"


def test_empty_completion_is_error():
    with pytest.raises(RemoteFailure):
        MockClient("   ").query(ModelRequest.build("x"))


# transport failures -------------------------------------------------------------------------


def test_unreachable_gives_up_after_three_attempts():
    attempts, sleeps = [], []

    def handler(request):
        attempts.append(1)
        raise httpx.ConnectError("connection refused", request=request)

    client = HTTPChatClient("http://model.invalid/v1", "m", transport=httpx.MockTransport(handler), sleep=sleeps.append)
    with pytest.raises(RemoteFailure):
        client.query(ModelRequest.build("x"))
    assert len(attempts) == 3
    assert sleeps == [1.0, 2.0]


def test_real_unreachable_port():
    client = HTTPChatClient("http://127.0.0.1:9/v1", "m", timeout_s=2, sleep=lambda s: None)
    with pytest.raises(RemoteFailure):
        client.query(ModelRequest.build("x"))


@pytest.mark.parametrize("code", [401, 403])
def test_auth_error_not_retried(code):
    seen = []
    client = HTTPChatClient("http://m.invalid", "m", transport=status_transport(code, seen), sleep=lambda s: None)
    with pytest.raises(AuthError):
        client.query(ModelRequest.build("x"))
    assert len(seen) == 1


@pytest.mark.parametrize("code", [429, 500, 503])
def test_retryable_statuses(code):
    seen = []
    client = HTTPChatClient("http://m.invalid", "m", transport=status_transport(code, seen), sleep=lambda s: None)
    with pytest.raises(RemoteFailure):
        client.query(ModelRequest.build("x"))
    assert len(seen) == 3


def test_timeout():
    def handler(request):
        raise httpx.ReadTimeout("slow", request=request)

    client = HTTPChatClient("http://m.invalid", "m", transport=httpx.MockTransport(handler), sleep=lambda s: None)
    with pytest.raises(Timeout):
        client.query(ModelRequest.build("x"))


def test_recovers_after_transient_failure():
    codes = iter([503, 200])

    def handler(request):
        code = next(codes)
        return httpx.Response(code, json={"text": "A"} if code == 200 else {})

    client = HTTPChatClient("http://m.invalid", "m", transport=httpx.MockTransport(handler), sleep=lambda s: None)
    assert client.query(ModelRequest.build("x")).text == "A"


def test_api_key_header(monkeypatch):
    seen = []

    def handler(request):
        seen.append(request.headers.get("authorization"))
        return httpx.Response(200, json={"text": "A"})

    monkeypatch.setenv("CCOT_EMO_API_KEY", "sk-test")
    HTTPChatClient("http://m.invalid", "m", transport=httpx.MockTransport(handler)).query(ModelRequest.build("x"))
    assert seen == ["Bearer sk-test"]


def test_network_kill_switch():
    seen = []
    client = HTTPChatClient("http://m.invalid", "m", transport=ok_transport(seen))
    disable_network()
    try:
        with pytest.raises(NetworkDisabled):
            client.query(ModelRequest.build("x"))
    finally:
        disable_network(False)
    assert seen == []


# limiter ------------------------------------------------------------------------------------


def test_limiter_caps_in_flight():
    limiter = RateLimiter(max_in_flight=2)
    active, peak, lock = [0], [0], threading.Lock()

    def work():
        with limiter:
            with lock:
                active[0] += 1
                peak[0] = max(peak[0], active[0])
            time.sleep(0.02)
            with lock:
                active[0] -= 1

    threads = [threading.Thread(target=work) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert peak[0] == 2


def test_limiter_requests_per_minute():
    now = [0.0]
    slept = []

    def sleep(s):
        slept.append(s)
        now[0] += s

    limiter = RateLimiter(max_in_flight=4, requests_per_minute=2, clock=lambda: now[0], sleep=sleep)
    for _ in range(3):
        with limiter:
            pass
    assert slept and now[0] >= 60.0


# answer parsing -----------------------------------------------------------------------------


@pytest.mark.parametrize(
    "text, label",
    [
        ("The answer is (B) Happy", "happy"),
        ("B", "happy"),
        ("(E)", "angry"),
        ("Answer: C.", "sad"),
        ("I believe the speaker sounds surprised.", "surprised"),
        ("(Z) then (A)", "neutral"),
    ],
)
def test_parse_examples(text, label):
    assert parse_option_letter(text, FIVE) == label


@pytest.mark.parametrize("text", ["It could be sad or angry", "", "Z", "(Z)", "no idea at all"])
def test_parse_failures(text):
    with pytest.raises(ParseFailure):
        parse_option_letter(text, FIVE)


def test_parse_respects_labelset():
    four = LabelSet.for_dataset("iemocap")
    with pytest.raises(ParseFailure):
        parse_option_letter("E", four)
    assert parse_option_letter("D", four) == "angry"


@given(st.text(max_size=200))
def test_parse_is_total(text):
    try:
        assert parse_option_letter(text, FIVE) in FIVE.names
    except ParseFailure:
        pass
