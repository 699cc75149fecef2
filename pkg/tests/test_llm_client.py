import asyncio
import json
import random

import httpx
import pytest

from src.core.evalkit import UNPARSED
from src.core.llm_client import (
    ChatClient,
    InferenceResult,
    backoff_delay,
    build_messages,
    parse_action_units,
    parse_response,
    read_jsonl,
    write_jsonl,
)
from src.core.params import EndpointConfig
from src.utils.errors import AuthenticationError, MalformedResponseError, RetryExhaustedError


def completion(text: str) -> dict:
    return {"choices": [{"message": {"role": "assistant", "content": text}}]}


def scripted(responses, calls):
    """Handler replaying a list of (status, body) or exceptions, recording every request."""
    queue = list(responses)

    def handler(request: httpx.Request) -> httpx.Response:
        calls.append(request)
        item = queue.pop(0) if len(queue) > 1 else queue[0]
        if isinstance(item, Exception):
            raise item
        status, body = item
        return httpx.Response(status, json=body)

    return handler


class SleepRecorder:
    def __init__(self):
        self.delays = []

    def __call__(self, seconds: float) -> None:
        self.delays.append(seconds)


def make_client(handler, sleep=None, **config) -> ChatClient:
    return ChatClient(
        EndpointConfig(**config),
        transport=httpx.MockTransport(handler),
        sleep=sleep or SleepRecorder(),
    )


class TestSendInference:

    def test_echo(self, api_key):
        calls = []

        def handler(request):
            calls.append(request)
            body = json.loads(request.content)
            return httpx.Response(200, json=completion(body["messages"][1]["content"]))

        client = make_client(handler, base_url="http://llm.test/v1/", model_name="m1", max_tokens=64)
        assert client.send_inference("instr", "motion prompt") == "motion prompt"

        request = calls[0]
        assert str(request.url) == "http://llm.test/v1/chat/completions"
        assert request.headers["Authorization"] == "Bearer test-key"
        body = json.loads(request.content)
        assert body["model"] == "m1"
        assert body["max_tokens"] == 64
        assert body["temperature"] == 0.0
        assert body["messages"] == build_messages("instr", "motion prompt")

    def test_retries_rate_limit(self, api_key):
        calls, sleep = [], SleepRecorder()
        handler = scripted([(429, {}), (429, {}), (200, completion("ok"))], calls)
        client = make_client(handler, sleep=sleep, backoff_base_seconds=1.0)
        assert client.send_inference("i", "p") == "ok"
        assert len(calls) == 3
        assert len(sleep.delays) == 2
        assert 0.8 <= sleep.delays[0] <= 1.2
        assert 1.6 <= sleep.delays[1] <= 2.4

    def test_retry_exhausted(self, api_key):
        calls, sleep = [], SleepRecorder()
        client = make_client(scripted([(500, {})], calls), sleep=sleep, max_retries=2)
        with pytest.raises(RetryExhaustedError) as exc_info:
            client.send_inference("i", "p")
        assert exc_info.value.attempts == 3
        assert len(calls) == 3
        assert len(sleep.delays) == 2

    def test_timeout_is_retried(self, api_key):
        calls = []
        timeout = httpx.ReadTimeout("slow", request=httpx.Request("POST", "http://x"))
        client = make_client(scripted([timeout, (200, completion("late"))], calls))
        assert client.send_inference("i", "p") == "late"
        assert len(calls) == 2

    def test_auth_failure_not_retried(self, api_key):
        calls = []
        client = make_client(scripted([(401, {"error": "bad key"})], calls))
        with pytest.raises(AuthenticationError):
            client.send_inference("i", "p")
        assert len(calls) == 1

    def test_missing_key(self, no_api_key):
        calls = []
        client = make_client(scripted([(200, completion("x"))], calls))
        with pytest.raises(AuthenticationError):
            client.check_credentials()
        assert calls == []

    def test_keyless(self, no_api_key):
        calls = []
        client = make_client(scripted([(200, completion("x"))], calls), keyless=True)
        assert client.send_inference("i", "p") == "x"
        assert "Authorization" not in calls[0].headers

    def test_malformed_reply(self, api_key):
        client = make_client(scripted([(200, {"choices": []})], []))
        with pytest.raises(MalformedResponseError):
            client.send_inference("i", "p")


def test_backoff_delay_bounds():
    for attempt in range(8):
        expected = min(30.0, 0.5 * 2 ** attempt)
        for _ in range(20):
            assert 0.8 * expected <= backoff_delay(attempt, 0.5) <= 1.2 * expected


class TestParseResponse:

    def test_three_step_response(self, fixtures_dir):
        text = (fixtures_dir / "three_step_response.txt").read_text(encoding="utf-8")
        assert parse_response(text, "three_class") == ("positive", ["AU12", "AU6"])

    def test_category_line_wins(self):
        text = "3) Summary\nThis looks like surprise at first.\nCategory: negative"
        assert parse_response(text)[0] == "negative"

    def test_last_mention_without_category(self):
        text = "Summary: could be negative, but the brow raise suggests surprise."
        assert parse_response(text)[0] == "surprise"

    def test_category_needs_word_boundary(self):
        text = "Summary\nsubcategory: negative\nThe lip corners rise, so positive."
        assert parse_response(text)[0] == "positive"
        assert parse_response("Summary\nCategoryX: negative, then surprise")[0] == "surprise"

    def test_last_category_line_outside_summary(self):
        text = "Category: surprise\n3) Summary\nBrows raised as described above."
        assert parse_response(text)[0] == "surprise"

    def test_ambiguous_category(self):
        assert parse_response("Summary\nCategory: positive or negative")[0] == UNPARSED

    def test_no_label(self):
        assert parse_response("Summary\nNo clear expression.") == (UNPARSED, [])
        assert parse_response("") == (UNPARSED, [])

    def test_seven_class(self):
        text = "Summary\nAU4 and AU9 point to disgust.\nCategory: Disgust"
        assert parse_response(text, "seven_class") == ("disgust", ["AU4", "AU9"])

    def test_action_unit_forms(self):
        assert parse_action_units("AU 12, L-AU12, r-au4, AU12 again, AU04") == ["AU12", "L-AU12", "R-AU4", "AU4"]


class TestBatch:

    def test_order_and_bound(self, api_key):
        in_flight = 0
        peak = 0
        delays = random.Random(5)

        async def handler(request):
            nonlocal in_flight, peak
            in_flight += 1
            peak = max(peak, in_flight)
            await asyncio.sleep(delays.uniform(0.0, 0.01))
            in_flight -= 1
            prompt = json.loads(request.content)["messages"][1]["content"]
            return httpx.Response(200, json=completion(f"Summary\nCategory: {prompt}"))

        labels = ["positive", "negative", "surprise"] * 7
        samples = [(f"s{i:02d}", "instr", label) for i, label in enumerate(labels)]
        client = ChatClient(EndpointConfig(max_in_flight=3), async_transport=httpx.MockTransport(handler))
        results = client.batch_infer(samples, "three_class", gts=labels)

        assert [r.sample_id for r in results] == [s[0] for s in samples]
        assert [r.predicted_label for r in results] == labels
        assert all(r.gt == r.predicted_label for r in results)
        assert 1 <= peak <= 3

    def test_failures_are_isolated(self, api_key):
        def handler(request):
            prompt = json.loads(request.content)["messages"][1]["content"]
            if prompt == "fail":
                return httpx.Response(503)
            return httpx.Response(200, json=completion("Summary\nCategory: positive"))

        client = ChatClient(
            EndpointConfig(max_retries=1, backoff_base_seconds=0.0),
            async_transport=httpx.MockTransport(handler),
        )
        results = client.batch_infer([("a", "i", "ok"), ("b", "i", "fail"), ("c", "i", "ok")])
        assert [r.predicted_label for r in results] == ["positive", UNPARSED, "positive"]
        assert results[1].error.startswith("retry_exhausted")
        assert results[0].error is None


def test_jsonl_roundtrip(tmp_path):
    records = [
        InferenceResult(sample_id="a", predicted_label="positive", action_units=["AU12"], gt="positive"),
        InferenceResult(sample_id="b", predicted_label=UNPARSED, error="retry_exhausted: down"),
    ]
    path = tmp_path / "results.jsonl"
    write_jsonl(path, records)
    first = json.loads(path.read_text(encoding="utf-8").splitlines()[0])
    assert first["id"] == "a" and first["pred"] == "positive"
    assert [InferenceResult.model_validate(r) for r in read_jsonl(path)] == records


def test_jsonl_reports_bad_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id": "a"}\nnot json\n', encoding="utf-8")
    with pytest.raises(ValueError, match=":2:"):
        read_jsonl(path)
