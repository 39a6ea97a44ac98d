"""Character-level vocabulary with reserved special tokens."""

from __future__ import annotations

import numpy as np

from imgcot.errors import VocabError

PAD = "<pad>"
BOT = "<bot>"
END_LATENT = "<eol>"
EOS = "<eos>"
ELLIPSIS = "<...>"
SPECIALS = (PAD, BOT, END_LATENT, EOS, ELLIPSIS)

DEFAULT_CHARS = "\n" + "".join(chr(c) for c in range(32, 127))


class Vocab:
    """Special ids occupy ``0..len(SPECIALS)-1``; characters follow in table order."""

    def __init__(self, chars: str = DEFAULT_CHARS):
        if len(set(chars)) != len(chars):
            raise VocabError(sorted({c for c in chars if chars.count(c) > 1}))
        self.chars = chars
        self.tokens = list(SPECIALS) + list(chars)
        self._char_id = {c: i + len(SPECIALS) for i, c in enumerate(chars)}
        self.pad_id, self.bot_id, self.end_latent_id, self.eos_id, self.ellipsis_id = range(len(SPECIALS))

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return self.size

    def is_special(self, token_id: int) -> bool:
        return 0 <= int(token_id) < len(SPECIALS)

    def encode(self, text: str) -> np.ndarray:
        unknown = sorted({c for c in text if c not in self._char_id})
        if unknown:
            raise VocabError(unknown)
        return np.array([self._char_id[c] for c in text], dtype=np.int64)

    def decode(self, ids, ellipsis: str = "...") -> str:
        """Characters are emitted verbatim, the ellipsis token as ``ellipsis``; other specials vanish."""
        out = []
        for t in np.asarray(ids, dtype=np.int64).reshape(-1):
            t = int(t)
            if t == self.ellipsis_id:
                out.append(ellipsis)
            elif t >= len(SPECIALS):
                out.append(self.tokens[t])
        return "".join(out)

    def to_dict(self) -> dict:
        return {"chars": self.chars}

    @classmethod
    def from_dict(cls, data: dict) -> "Vocab":
        return cls(data["chars"])

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and other.chars == self.chars
