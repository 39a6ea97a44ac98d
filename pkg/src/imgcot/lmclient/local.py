"""Scores text with the in-repo reasoner's text head."""

from __future__ import annotations

from imgcot.errors import ContractError
from imgcot.lmclient.types import ScoreRequest, ScoreResponse
from imgcot.reasoner.model import ReasonerNet
from imgcot.reasoner.train import load_reasoner, token_logprobs
from imgcot.reasoner.vocab import Vocab


class LocalScorer:
    """One token per character; the first character gets NaN."""

    def __init__(self, net: ReasonerNet, vocab: Vocab, name: str = "local"):
        self.net = net
        self.vocab = vocab
        self.name = name

    @classmethod
    def from_checkpoint(cls, path, name: str | None = None) -> "LocalScorer":
        net, vocab, _ = load_reasoner(path)
        return cls(net, vocab, name or f"local:{path}")

    def score(self, request: ScoreRequest) -> ScoreResponse:
        ids = self.vocab.encode(request.text)
        if len(ids) > self.net.config.context:
            raise ContractError(f"text of {len(ids)} tokens exceeds context {self.net.config.context}")
        values = token_logprobs(self.net, ids)
        return ScoreResponse(list(request.text), values, self.name, request.request_id)


def score_local(request: ScoreRequest, checkpoint) -> ScoreResponse:
    """``checkpoint`` is a path or a ready :class:`LocalScorer`."""
    scorer = checkpoint if isinstance(checkpoint, LocalScorer) else LocalScorer.from_checkpoint(checkpoint)
    return scorer.score(request)
