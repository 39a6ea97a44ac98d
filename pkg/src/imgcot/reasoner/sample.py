"""Mixed latent/text training sequences.

Layout of one sample (half-open spans)::

    [question] <bot> [n latent rows] <eol> [output ... <eos>]
                     s_z           e_z e_z  s_o              e_o
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from imgcot.errors import ContractError
from imgcot.reasoner.vocab import Vocab


class Modality(enum.Enum):
    TEXT = "text"
    LATENT = "latent"


@dataclass(frozen=True)
class TrainingSample:
    question: np.ndarray
    latent: np.ndarray
    output: np.ndarray
    bot_id: int
    end_latent_id: int
    pad_id: int = 0

    def __post_init__(self):
        if self.latent.ndim != 2 or self.latent.shape[0] < 1:
            raise ContractError(f"latent must be (n >= 1, d), got shape {self.latent.shape}")
        if self.output.size == 0:
            raise ContractError("output must contain at least the end-of-sequence token")

    @property
    def n(self) -> int:
        return self.latent.shape[0]

    @property
    def dim(self) -> int:
        return self.latent.shape[1]

    @property
    def s_z(self) -> int:
        return len(self.question) + 1

    @property
    def e_z(self) -> int:
        return self.s_z + self.n

    @property
    def s_o(self) -> int:
        return self.e_z + 1

    @property
    def e_o(self) -> int:
        return self.s_o + len(self.output)

    @property
    def length(self) -> int:
        return self.e_o

    @property
    def denominator(self) -> int:
        return self.n + len(self.output)

    @property
    def latent_mask(self) -> np.ndarray:
        mask = np.zeros(self.length, dtype=bool)
        mask[self.s_z:self.e_z] = True
        return mask

    @property
    def modality(self) -> tuple:
        return tuple(Modality.LATENT if m else Modality.TEXT for m in self.latent_mask)

    @property
    def input_ids(self) -> np.ndarray:
        """Token ids per position; latent positions hold the pad id."""
        ids = np.full(self.length, self.pad_id, dtype=np.int64)
        ids[: len(self.question)] = self.question
        ids[len(self.question)] = self.bot_id
        ids[self.e_z] = self.end_latent_id
        ids[self.s_o:self.e_o] = self.output
        return ids


def _ids(value, vocab: Vocab) -> np.ndarray:
    if isinstance(value, str):
        return vocab.encode(value)
    arr = np.asarray(value, dtype=np.int64).reshape(-1)
    if arr.size and (arr.min() < 0 or arr.max() >= vocab.size):
        raise ContractError("token id outside the vocabulary")
    return arr


def assemble_sample(question, latent, output, vocab: Vocab, dim: int | None = None) -> TrainingSample:
    """Build ``question <bot> latent <eol> output <eos>``.

    ``question`` and ``output`` are strings or id sequences; ``latent`` is a
    ``LatentCode`` or an (n, d) array whose rows become input embeddings.
    """
    rows = getattr(latent, "embeddings", latent)
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise ContractError(f"latent must be (n >= 1, d), got shape {rows.shape}")
    if dim is not None and rows.shape[1] != dim:
        raise ContractError(f"latent width {rows.shape[1]} != model width {dim}")
    q = _ids(question, vocab)
    out = np.concatenate([_ids(output, vocab), [vocab.eos_id]]).astype(np.int64)
    return TrainingSample(q, rows, out, vocab.bot_id, vocab.end_latent_id, vocab.pad_id)
