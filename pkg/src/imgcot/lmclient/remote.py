"""HTTP client for completion endpoints that echo prompt log-probabilities.

Request body (POST ``{base_url}/completions``)::

    {"model": ..., "prompt": <text>, "echo": true, "logprobs": 1, "max_tokens": 0}

The response must carry ``choices[0].logprobs.tokens`` and
``choices[0].logprobs.token_logprobs`` (the first entry may be null).

Recorded fixtures replace the network in tests.  A fixture file is JSON::

    {"exchanges": [
        {"status": 500, "body": {"error": "overloaded"}},
        {"status": 200, "body": {"model": "m", "choices": [...]}},
        {"timeout": true}
    ]}

Exchanges are replayed in order, one per HTTP attempt; ``body`` may be an
object or a raw string.
"""

from __future__ import annotations

import json
import os
import threading
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from imgcot.errors import ConfigError, ProtocolError, RemoteConfigError, RetryExhaustedError
from imgcot.lmclient.types import ScoreRequest, ScoreResponse

ENV_PREFIX = "IMGCOT_SCORER_"


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model: str
    token: str | None = None
    timeout: float = 30.0
    max_attempts: int = 3
    backoff: float = 0.5
    concurrency: int = 4
    jitter_seed: int = 0

    def __post_init__(self):
        problems = []
        if not self.base_url:
            problems.append("base_url is required")
        if not self.model:
            problems.append("model is required")
        if self.timeout <= 0:
            problems.append("timeout must be positive")
        if self.max_attempts < 1:
            problems.append("max_attempts must be at least 1")
        if self.concurrency < 1:
            problems.append("concurrency must be at least 1")
        if problems:
            raise ConfigError(problems)

    @classmethod
    def from_mapping(cls, data: dict | None = None, env=None) -> "EndpointConfig":
        """Build from a config table; ``IMGCOT_SCORER_<FIELD>`` environment variables win."""
        data = dict(data or {})
        env = os.environ if env is None else env
        casts = {"timeout": float, "max_attempts": int, "backoff": float, "concurrency": int, "jitter_seed": int}
        for key in ("base_url", "model", "token", *casts):
            val = env.get(ENV_PREFIX + key.upper())
            if val is not None:
                data[key] = val
        try:
            for key, cast in casts.items():
                if key in data:
                    data[key] = cast(data[key])
        except ValueError as exc:
            raise ConfigError([f"bad scorer setting: {exc}"]) from exc
        unknown = sorted(set(data) - set(cls.__dataclass_fields__))
        if unknown:
            raise ConfigError([f"unknown scorer setting {k!r}" for k in unknown])
        return cls(**{"base_url": "", "model": "", **data})


class HttpTransport:
    def __call__(self, url: str, body: bytes, headers: dict, timeout: float) -> tuple:
        req = urllib.request.Request(url, data=body, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                return resp.status, resp.read()
        except urllib.error.HTTPError as exc:
            return exc.code, exc.read()


class FixtureTransport:
    """Replays recorded exchanges in order; records the requests it saw."""

    def __init__(self, exchanges):
        if isinstance(exchanges, (str, Path)):
            exchanges = json.loads(Path(exchanges).read_text())["exchanges"]
        self.exchanges = list(exchanges)
        self.requests = []
        self._lock = threading.Lock()

    def __call__(self, url: str, body: bytes, headers: dict, timeout: float) -> tuple:
        with self._lock:
            self.requests.append({"url": url, "body": json.loads(body), "headers": dict(headers)})
            if not self.exchanges:
                raise ProtocolError("fixture exhausted", url)
            ex = self.exchanges.pop(0)
        if ex.get("timeout"):
            raise TimeoutError("recorded timeout")
        payload = ex.get("body", "")
        raw = payload if isinstance(payload, str) else json.dumps(payload)
        return int(ex["status"]), raw.encode()


def _fragment(raw) -> str:
    text = raw if isinstance(raw, str) else json.dumps(raw)
    return text[:200]


def parse_completion(payload, text: str) -> tuple:
    """Extract ``(tokens, logprobs, model)`` from a decoded response body."""
    try:
        lp = payload["choices"][0]["logprobs"]
        tokens = lp["tokens"]
        values = lp["token_logprobs"]
    except (KeyError, IndexError, TypeError):
        raise ProtocolError("response lacks per-token logprobs", _fragment(payload)) from None
    if not isinstance(tokens, list) or not isinstance(values, list) or len(tokens) != len(values):
        raise ProtocolError("malformed logprobs block", _fragment(lp))
    try:
        arr = np.array([np.nan if v is None else float(v) for v in values], dtype=np.float64)
    except (TypeError, ValueError):
        raise ProtocolError("non-numeric logprob", _fragment(values)) from None
    return tokens, arr, str(payload.get("model", ""))


class RemoteScorer:
    def __init__(self, config: EndpointConfig, transport=None, sleep=time.sleep):
        self.config = config
        self.name = f"remote:{config.model}"
        self.transport = transport or HttpTransport()
        self.sleep = sleep
        self._jitter = np.random.default_rng(config.jitter_seed)
        self._jitter_lock = threading.Lock()
        self.delays = []

    def _delay(self, attempt: int) -> float:
        with self._jitter_lock:
            factor = float(self._jitter.uniform(0.5, 1.5))
        return self.config.backoff * (2 ** (attempt - 1)) * factor

    def score(self, request: ScoreRequest) -> ScoreResponse:
        cfg = self.config
        url = cfg.base_url.rstrip("/") + "/completions"
        body = json.dumps({"model": cfg.model, "prompt": request.text, "echo": True,
                           "logprobs": 1, "max_tokens": 0}).encode()
        headers = {"Content-Type": "application/json"}
        if cfg.token:
            headers["Authorization"] = f"Bearer {cfg.token}"
        if request.request_id:
            headers["X-Request-Id"] = request.request_id
        last = "no attempt made"
        for attempt in range(1, cfg.max_attempts + 1):
            try:
                status, raw = self.transport(url, body, headers, cfg.timeout)
            except (TimeoutError, OSError) as exc:
                last = f"transport failure: {exc}"
            else:
                if 200 <= status < 300:
                    try:
                        payload = json.loads(raw)
                    except json.JSONDecodeError:
                        raise ProtocolError("response is not JSON", raw[:200].decode(errors="replace")) from None
                    tokens, values, model = parse_completion(payload, request.text)
                    resp = ScoreResponse(tokens, values, model or cfg.model, request.request_id, attempt)
                    return resp.validate(request.text)
                snippet = raw[:200].decode(errors="replace")
                if 400 <= status < 500:
                    raise RemoteConfigError(f"endpoint rejected request with HTTP {status}: {snippet}", status)
                last = f"HTTP {status}: {snippet}"
            if attempt < cfg.max_attempts:
                delay = self._delay(attempt)
                self.delays.append(delay)
                self.sleep(delay)
        raise RetryExhaustedError(f"scoring request failed ({last})", cfg.max_attempts)


def score_remote(request: ScoreRequest, endpoint_config: EndpointConfig, transport=None, sleep=time.sleep) -> ScoreResponse:
    return RemoteScorer(endpoint_config, transport, sleep).score(request)


def score_many(scorer, requests, max_workers: int = 4) -> list:
    """Score requests concurrently; results come back in request order."""
    requests = [r if r.request_id else replace(r, request_id=f"req-{i}") for i, r in enumerate(requests)]
    if max_workers <= 1 or len(requests) <= 1:
        return [scorer.score(r) for r in requests]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(scorer.score, requests))
