"""Token log-likelihood providers: the local toy model and a remote completion endpoint."""

from imgcot.lmclient.local import LocalScorer, score_local
from imgcot.lmclient.remote import (
    EndpointConfig,
    FixtureTransport,
    HttpTransport,
    RemoteScorer,
    parse_completion,
    score_many,
    score_remote,
)
from imgcot.lmclient.types import ScoreRequest, ScoreResponse, Scorer

__all__ = [
    "EndpointConfig", "FixtureTransport", "HttpTransport", "LocalScorer", "RemoteScorer", "ScoreRequest",
    "ScoreResponse", "Scorer", "parse_completion", "score_local", "score_many", "score_remote",
]
