"""Scoring request/response records and the scorer interface."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from imgcot.errors import ContractError, ProtocolError

LOGPROB_SLACK = 1e-9


@dataclass(frozen=True)
class ScoreRequest:
    text: str
    scorer: str = ""
    step_boundaries: tuple | None = None
    request_id: str = ""

    def __post_init__(self):
        if not self.text:
            raise ContractError("cannot score empty text")


@dataclass
class ScoreResponse:
    """Per-token natural-log likelihoods.

    ``logprobs[0]`` is NaN when the backend gives no value for the first
    token (it has no conditioning prefix).
    """

    tokens: list
    logprobs: np.ndarray
    model: str = ""
    request_id: str = ""
    attempts: int = 1
    offsets: np.ndarray = field(init=False)

    def __post_init__(self):
        self.tokens = [str(t) for t in self.tokens]
        self.logprobs = np.asarray(self.logprobs, dtype=np.float64).reshape(-1)
        if len(self.tokens) != len(self.logprobs):
            raise ProtocolError("token and logprob counts differ", f"{len(self.tokens)} vs {len(self.logprobs)}")
        lengths = np.array([len(t) for t in self.tokens], dtype=np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(np.int64)

    @property
    def text(self) -> str:
        return "".join(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def validate(self, text: str) -> "ScoreResponse":
        if self.text != text:
            raise ProtocolError("tokens do not reassemble to the request text", self.text[:80])
        body = self.logprobs[1:]
        if not np.all(np.isfinite(body)):
            raise ProtocolError("non-finite log-likelihood in response", str(body[~np.isfinite(body)][:3]))
        if np.any(self.logprobs[np.isfinite(self.logprobs)] > LOGPROB_SLACK):
            raise ProtocolError("log-likelihood above zero", str(self.logprobs.max()))
        return self


class Scorer(Protocol):
    name: str

    def score(self, request: ScoreRequest) -> ScoreResponse: ...
