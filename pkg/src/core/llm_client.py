"""
Chat-completion client for micro-expression inference.

Handles:
  - exponential backoff with jitter on timeouts, 429 and 5xx
  - bounded concurrency (asyncio.Semaphore) with order-preserving results
  - parsing of the three-step response into label + action units
"""
import asyncio
import json
import os
import random
import re
import time
from pathlib import Path
from typing import Callable, Iterable, Optional

import httpx
from pydantic import BaseModel, ConfigDict, Field

from src.core.evalkit import UNPARSED
from src.core.fgmu import TASK_LABELS, Task
from src.core.params import EndpointConfig
from src.utils.errors import (
    AuthenticationError,
    EndpointError,
    MalformedResponseError,
    RetryExhaustedError,
)
from src.utils.logging import get_logger

logger = get_logger(__name__)

BACKOFF_FACTOR = 2.0
MAX_BACKOFF = 30.0
RETRYABLE_STATUS = {408, 429}


class InferenceResult(BaseModel):
    """One parsed model answer. Serialized as a JSON-lines record keyed {id, gt, pred, ...}."""
    model_config = ConfigDict(populate_by_name=True)

    sample_id: str = Field(alias="id", description="Sample identifier")
    predicted_label: str = Field(alias="pred", description="Predicted label or UNPARSED")
    action_units: list[str] = Field(default_factory=list)
    raw_text: str = ""
    latency: float = Field(default=0.0, ge=0, description="seconds")
    gt: Optional[str] = None
    error: Optional[str] = None


def build_messages(instruction: str, prompt: str) -> list[dict]:
    """Two-part chat: the instruction as system message, the motion prompt as user message."""
    return [
        {"role": "system", "content": instruction},
        {"role": "user", "content": prompt},
    ]


def backoff_delay(attempt: int, base: float) -> float:
    """base · 2^attempt, capped, with ±20% jitter."""
    delay = min(MAX_BACKOFF, base * BACKOFF_FACTOR ** attempt)
    return delay * (0.8 + 0.4 * random.random())


def _is_retryable(status: int) -> bool:
    return status in RETRYABLE_STATUS or 500 <= status < 600


def _extract_text(response: httpx.Response) -> str:
    try:
        body = response.json()
        content = body["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as e:
        raise MalformedResponseError(f"Unexpected endpoint reply: {response.text[:200]!r}") from e
    if not isinstance(content, str):
        raise MalformedResponseError("Reply content is not text")
    return content


class ChatClient:
    """
    Usage:
        client = ChatClient(EndpointConfig(base_url="http://localhost:8000/v1"))
        text = client.send_inference(instruction, prompt_text)
        results = client.batch_infer([(sample_id, instruction, prompt_text), ...], task="three_class")
    """

    def __init__(
        self,
        config: EndpointConfig | None = None,
        transport: httpx.BaseTransport | None = None,
        async_transport: httpx.AsyncBaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config or EndpointConfig()
        self.transport = transport
        self.async_transport = async_transport
        self.sleep = sleep

    @property
    def url(self) -> str:
        return self.config.base_url.rstrip("/") + "/chat/completions"

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.config.keyless:
            return headers
        key = os.environ.get(self.config.api_key_env_var)
        if not key:
            raise AuthenticationError(
                f"No API key in environment variable {self.config.api_key_env_var}"
            )
        headers["Authorization"] = f"Bearer {key}"
        return headers

    def check_credentials(self) -> None:
        """Raise AuthenticationError now rather than once per request."""
        self._headers()

    def _body(self, instruction: str, prompt: str) -> dict:
        body = {
            "model": self.config.model_name,
            "messages": build_messages(instruction, prompt),
            "temperature": self.config.temperature,
        }
        if self.config.max_tokens is not None:
            body["max_tokens"] = self.config.max_tokens
        return body

    def _handle(self, response: httpx.Response, attempt: int) -> Optional[str]:
        """Text on success, None when the status is worth retrying."""
        if response.status_code in (401, 403):
            raise AuthenticationError(f"Endpoint rejected credentials ({response.status_code})")
        if _is_retryable(response.status_code):
            logger.info("attempt %d: HTTP %d, retrying", attempt + 1, response.status_code)
            return None
        if response.status_code >= 400:
            raise EndpointError(f"Endpoint returned HTTP {response.status_code}")
        return _extract_text(response)

    def send_inference(self, instruction: str, prompt: str) -> str:
        """
        POST one chat completion and return the model's full text.

        Raises:
            RetryExhaustedError: every attempt (1 + max_retries) failed transiently
            AuthenticationError: missing key or 401/403
            MalformedResponseError: reply without choices[0].message.content
        """
        headers = self._headers()
        body = self._body(instruction, prompt)
        attempts = self.config.max_retries + 1
        last_error = None

        with httpx.Client(timeout=self.config.timeout, transport=self.transport) as client:
            for attempt in range(attempts):
                try:
                    response = client.post(self.url, json=body, headers=headers)
                    text = self._handle(response, attempt)
                    if text is not None:
                        return text
                    last_error = f"HTTP {response.status_code}"
                except httpx.TimeoutException as e:
                    logger.info("attempt %d: timeout, retrying", attempt + 1)
                    last_error = f"timeout: {e}"
                except httpx.TransportError as e:
                    logger.info("attempt %d: transport error, retrying", attempt + 1)
                    last_error = f"transport: {e}"

                if attempt < attempts - 1:
                    self.sleep(backoff_delay(attempt, self.config.backoff_base_seconds))

        raise RetryExhaustedError(
            f"Endpoint failed after {attempts} attempts ({last_error})", attempts, last_error
        )

    async def asend_inference(self, client: httpx.AsyncClient, instruction: str, prompt: str) -> str:
        """Async twin of send_inference sharing one AsyncClient."""
        headers = self._headers()
        body = self._body(instruction, prompt)
        attempts = self.config.max_retries + 1
        last_error = None

        for attempt in range(attempts):
            try:
                response = await client.post(self.url, json=body, headers=headers)
                text = self._handle(response, attempt)
                if text is not None:
                    return text
                last_error = f"HTTP {response.status_code}"
            except httpx.TimeoutException as e:
                logger.info("attempt %d: timeout, retrying", attempt + 1)
                last_error = f"timeout: {e}"
            except httpx.TransportError as e:
                logger.info("attempt %d: transport error, retrying", attempt + 1)
                last_error = f"transport: {e}"

            if attempt < attempts - 1:
                await asyncio.sleep(backoff_delay(attempt, self.config.backoff_base_seconds))

        raise RetryExhaustedError(
            f"Endpoint failed after {attempts} attempts ({last_error})", attempts, last_error
        )

    async def _abatch(self, samples: list[tuple[str, str, str]], task: Task, gts: list[Optional[str]]):
        semaphore = asyncio.Semaphore(self.config.max_in_flight)

        async with httpx.AsyncClient(timeout=self.config.timeout, transport=self.async_transport) as client:

            async def run_one(index: int) -> InferenceResult:
                sample_id, instruction, prompt = samples[index]
                async with semaphore:
                    start = time.monotonic()
                    try:
                        text = await self.asend_inference(client, instruction, prompt)
                    except EndpointError as e:
                        logger.warning("sample %s failed: %s", sample_id, e)
                        return InferenceResult(
                            sample_id=sample_id,
                            predicted_label=UNPARSED,
                            latency=time.monotonic() - start,
                            gt=gts[index],
                            error=f"{e.code}: {e}",
                        )
                    latency = time.monotonic() - start

                label, units = parse_response(text, task)
                logger.debug("sample %s -> %s %s", sample_id, label, units)
                return InferenceResult(
                    sample_id=sample_id,
                    predicted_label=label,
                    action_units=units,
                    raw_text=text,
                    latency=latency,
                    gt=gts[index],
                )

            # gather keeps input order whatever the completion order
            return await asyncio.gather(*(run_one(i) for i in range(len(samples))))

    def batch_infer(
        self,
        samples: list[tuple[str, str, str]],
        task: Task = "three_class",
        gts: list[Optional[str]] | None = None,
    ) -> list[InferenceResult]:
        """
        Run (id, instruction, prompt) samples with at most max_in_flight
        requests outstanding. A failing sample yields an UNPARSED result with
        an error note; the batch itself never raises for endpoint failures.
        """
        gts = gts if gts is not None else [None] * len(samples)
        logger.info("Inferring %d samples (max %d in flight)", len(samples), self.config.max_in_flight)
        return list(asyncio.run(self._abatch(list(samples), task, list(gts))))


# ---------------------------------------------------------------- parsing

_SUMMARY = re.compile(r"\bsummary\b", re.IGNORECASE)
_CATEGORY = re.compile(r"\bcategory\s*[:：]\s*(?P<rest>[^\n]*)", re.IGNORECASE)
_AU = re.compile(r"(?<![A-Za-z0-9])(?:(?P<side>[LR])\s*-\s*)?AU\s*(?P<num>\d+)(?!\d)", re.IGNORECASE)


def _find_labels(text: str, labels: tuple[str, ...]) -> list[tuple[int, str]]:
    """(position, label) of every whole-word, case-insensitive label mention."""
    found = []
    for label in labels:
        for match in re.finditer(rf"\b{re.escape(label)}\b", text, re.IGNORECASE):
            found.append((match.start(), label))
    return sorted(found)


def _summary_section(text: str) -> Optional[str]:
    matches = list(_SUMMARY.finditer(text))
    if matches:
        return text[matches[-1].start():]
    categories = list(_CATEGORY.finditer(text))
    if categories:
        return text[categories[-1].start():]
    return None


def parse_action_units(text: str) -> list[str]:
    """AU identifiers in order of first mention, e.g. ["AU4", "L-AU12"]."""
    units = []
    for match in _AU.finditer(text):
        side = match["side"]
        unit = f"AU{int(match['num'])}"
        if side:
            unit = f"{side.upper()}-{unit}"
        if unit not in units:
            units.append(unit)
    return units


def parse_response(raw_text: str, task: Task = "three_class") -> tuple[str, list[str]]:
    """
    Label and action units from the final answer.

    Precedence: the last `Category:` line of the reply, else the last label
    mentioned in the final summary section, else UNPARSED. A Category line
    naming no label or several different labels is UNPARSED. Action units come
    from the summary section. Never raises.
    """
    labels = TASK_LABELS[task]
    raw_text = raw_text or ""
    summary = _summary_section(raw_text)
    units = parse_action_units(summary) if summary is not None else []

    categories = list(_CATEGORY.finditer(raw_text))
    if categories:
        named = {label for _, label in _find_labels(categories[-1]["rest"], labels)}
        if len(named) != 1:
            return UNPARSED, units
        return named.pop(), units

    mentions = _find_labels(summary, labels) if summary is not None else []
    if not mentions:
        return UNPARSED, units
    return mentions[-1][1], units


# ---------------------------------------------------------------- JSON lines

def read_jsonl(path: str | Path) -> list[dict]:
    records = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if line.strip():
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{line_no}: invalid JSON ({e.msg})") from e
    return records


def write_jsonl(path: str | Path, records: Iterable[BaseModel | dict]) -> None:
    lines = []
    for record in records:
        data = record.model_dump(by_alias=True) if isinstance(record, BaseModel) else record
        lines.append(json.dumps(data, ensure_ascii=False, sort_keys=True))
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
