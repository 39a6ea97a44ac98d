"""Confidence-based pruning of reasoning steps.

Each token gets its log-likelihood under a scorer; a step whose mean
log-likelihood exceeds a corpus threshold gamma is deemed easy and dropped,
and each run of dropped steps is replaced by a single ellipsis marker.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from imgcot.errors import ContractError, EmptyInputError, ImgCoTError, ParseError, ScoringError
from imgcot.io import atomic_write_text
from imgcot.lmclient.types import ScoreRequest
from imgcot.reasoner.sample import assemble_sample
from imgcot.reasoner.vocab import Vocab

DEFAULT_DELIMITERS = ("\n",)
STEP_SEPARATOR = "\n"


class Aggregation(str, enum.Enum):
    MEAN = "mean"
    SUM = "sum"


class _Ellipsis:
    """Marker standing for one run of removed steps."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "ELLIPSIS"


ELLIPSIS = _Ellipsis()


def step_spans(text: str, delimiters=DEFAULT_DELIMITERS) -> list:
    """Character spans ``(start, end)`` of the non-empty, whitespace-stripped steps."""
    pattern = "|".join(re.escape(d) for d in sorted(delimiters, key=len, reverse=True))
    spans = []
    pos = 0
    for m in list(re.finditer(pattern, text)) + [None]:
        end = m.start() if m else len(text)
        piece = text[pos:end]
        stripped = piece.strip()
        if stripped:
            lead = len(piece) - len(piece.lstrip())
            spans.append((pos + lead, pos + lead + len(stripped)))
        if m:
            pos = m.end()
    if not spans:
        raise EmptyInputError("text contains no reasoning steps")
    return spans


@dataclass
class ConfidenceProfile:
    tokens: list
    values: np.ndarray
    token_step: np.ndarray
    steps: list

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    def step_ranges(self) -> list:
        """Token index ranges ``(start, end)`` per step."""
        out = []
        for j in range(self.n_steps):
            idx = np.flatnonzero(self.token_step == j)
            out.append((int(idx[0]), int(idx[-1]) + 1) if idx.size else (0, 0))
        return out

    @property
    def step_means(self) -> np.ndarray:
        """Mean log-likelihood per step; position 0 never counts; NaN if a step has no scored token."""
        means = np.full(self.n_steps, np.nan)
        scored = np.isfinite(self.values)
        scored[0] = False
        for j in range(self.n_steps):
            sel = scored & (self.token_step == j)
            if sel.any():
                means[j] = self.values[sel].mean()
        return means


def assign_tokens(offsets: np.ndarray, spans: list) -> np.ndarray:
    """Step index for each token by its starting character.

    Step j owns characters from its own start up to the next step's start
    (the first step also owns any leading text), so a token straddling a
    boundary goes to the earlier step.
    """
    starts = np.array([s for s, _ in spans])
    return np.clip(np.searchsorted(starts, np.asarray(offsets), side="right") - 1, 0, len(spans) - 1)


def confidence(text: str, scorer, delimiters=DEFAULT_DELIMITERS) -> ConfidenceProfile:
    spans = step_spans(text, delimiters)
    try:
        resp = scorer.score(ScoreRequest(text, getattr(scorer, "name", ""), tuple(spans)))
    except ScoringError:
        raise
    except ImgCoTError as exc:
        raise ScoringError(f"scorer failed: {exc}") from exc
    if resp.text != text:
        raise ScoringError("scorer tokens do not reassemble to the text")
    token_step = assign_tokens(resp.offsets, spans)
    values = resp.logprobs
    bad = ~np.isfinite(values[1:])
    if bad.any():
        raise ScoringError("non-finite token log-likelihood", step=int(token_step[1:][bad][0]))
    return ConfidenceProfile(resp.tokens, values, token_step, [text[a:b] for a, b in spans])


@dataclass(frozen=True)
class GammaEstimate:
    gamma: float
    corpus: str
    token_count: int
    mode: Aggregation = Aggregation.MEAN
    scorer: str = ""

    def __post_init__(self):
        if not np.isfinite(self.gamma):
            raise ContractError("gamma must be finite")
        if self.token_count <= 0:
            raise ContractError("gamma needs at least one scored token")
        object.__setattr__(self, "mode", Aggregation(self.mode))

    def to_dict(self) -> dict:
        return {"gamma": self.gamma, "corpus": self.corpus, "token_count": self.token_count,
                "mode": self.mode.value, "scorer": self.scorer}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "GammaEstimate":
        return cls(float(data["gamma"]), str(data.get("corpus", "")), int(data.get("token_count", 1)),
                   Aggregation(data.get("mode", "mean")), str(data.get("scorer", "")))


def read_gamma(path) -> GammaEstimate:
    """Load a gamma record: a JSON object, or a bare number on its own."""
    raw = Path(path).read_text().strip()
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ParseError(f"unreadable gamma file {path}: {exc.msg}", exc.pos) from None
    if isinstance(data, (int, float)) and not isinstance(data, bool):
        return GammaEstimate(float(data), str(path), 1, Aggregation.MEAN, "")
    if not isinstance(data, dict) or "gamma" not in data:
        raise ParseError(f"gamma file {path} has no 'gamma' field")
    return GammaEstimate.from_dict(data)


def write_gamma(estimate: GammaEstimate, path) -> None:
    atomic_write_text(path, estimate.to_json() + "\n")


def estimate_gamma(corpus, scorer, mode: Aggregation = Aggregation.MEAN, corpus_id: str = "") -> GammaEstimate:
    """Aggregate token log-likelihoods over every text (position 0 of each text excluded)."""
    texts = [t for t in corpus]
    if not texts:
        raise ContractError("gamma needs a non-empty corpus")
    total = 0.0
    count = 0
    for i, text in enumerate(texts):
        try:
            resp = scorer.score(ScoreRequest(text, getattr(scorer, "name", "")))
        except ImgCoTError as exc:
            raise ScoringError(f"scoring corpus text {i} failed: {exc}") from exc
        vals = resp.logprobs[1:]
        if not np.all(np.isfinite(vals)):
            raise ScoringError(f"non-finite log-likelihood in corpus text {i}")
        total += float(vals.sum())
        count += vals.size
    if count == 0:
        raise ContractError("corpus has no scorable positions")
    mode = Aggregation(mode)
    gamma = total / count if mode is Aggregation.MEAN else total
    return GammaEstimate(gamma, corpus_id, count, mode, getattr(scorer, "name", ""))


@dataclass(frozen=True)
class FilteredTrace:
    items: tuple
    kept: tuple
    means: tuple
    original: str = ""

    @property
    def n_filtered(self) -> int:
        return len(self.means) - len(self.kept)

    @property
    def text(self) -> str:
        if self.n_filtered == 0 and self.original:
            return self.original
        return STEP_SEPARATOR.join("..." if it is ELLIPSIS else it for it in self.items)

    def token_ids(self, vocab: Vocab) -> np.ndarray:
        if self.n_filtered == 0 and self.original:
            return vocab.encode(self.original)
        sep = vocab.encode(STEP_SEPARATOR)
        parts = []
        for i, it in enumerate(self.items):
            if i:
                parts.append(sep)
            parts.append(np.array([vocab.ellipsis_id]) if it is ELLIPSIS else vocab.encode(it))
        return np.concatenate(parts).astype(np.int64)


def retention(means, gamma: float) -> np.ndarray:
    """True where a step is kept: its mean is not strictly above gamma (NaN means keep)."""
    means = np.asarray(means, dtype=np.float64)
    return ~(means > gamma)


def collapse(steps, keep) -> tuple:
    items = []
    for text, k in zip(steps, keep):
        if k:
            items.append(text)
        elif not items or items[-1] is not ELLIPSIS:
            items.append(ELLIPSIS)
    return tuple(items)


def filter_profile(profile: ConfidenceProfile, gamma: float, original: str = "") -> FilteredTrace:
    means = profile.step_means
    keep = retention(means, gamma)
    return FilteredTrace(collapse(profile.steps, keep), tuple(int(i) for i in np.flatnonzero(keep)),
                         tuple(float(m) for m in means), original)


def filter_trace(cot: str, gamma: float, scorer, delimiters=DEFAULT_DELIMITERS) -> FilteredTrace:
    return filter_profile(confidence(cot, scorer, delimiters), gamma, cot)


def build_limgcot_sample(question, latent, trace: FilteredTrace, answer: str, vocab: Vocab, dim: int | None = None):
    """Sample whose output is the filtered trace, a separator, then the answer."""
    output = np.concatenate([trace.token_ids(vocab), vocab.encode(STEP_SEPARATOR), vocab.encode(answer)])
    return assemble_sample(question, latent, output, vocab, dim)


def full_cot_output(cot: str, answer: str, vocab: Vocab) -> np.ndarray:
    return np.concatenate([vocab.encode(cot), vocab.encode(STEP_SEPARATOR), vocab.encode(answer)])
