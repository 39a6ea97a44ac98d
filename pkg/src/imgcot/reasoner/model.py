"""Decoder-only transformer over mixed latent/text sequences and its loss."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from imgcot.errors import ContractError
from imgcot.numerics import Tensor, add, cross_entropy, embedding, gather, make_rng, mse, mul, reshape
from imgcot.numerics.layers import Block, LayerNorm, Linear, Module, causal_mask, param
from imgcot.numerics.tensor import get_default_dtype
from imgcot.reasoner.sample import TrainingSample


@dataclass(frozen=True)
class ReasonerConfig:
    vocab_size: int
    dim: int = 64
    layers: int = 4
    heads: int = 4
    context: int = 512
    seed: int = 0

    def __post_init__(self):
        if self.dim % self.heads:
            raise ContractError("dim must be divisible by heads")
        if min(self.vocab_size, self.dim, self.layers, self.context) < 1:
            raise ContractError("vocab_size, dim, layers and context must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


class ReasonerNet(Module):
    def __init__(self, config: ReasonerConfig):
        self.config = config
        c = config
        rng = make_rng(c.seed, "reasoner", "init")
        self.tok_emb = param(rng.normal(0.0, 0.02, size=(c.vocab_size, c.dim)))
        self.pos_emb = param(rng.normal(0.0, 0.02, size=(c.context, c.dim)))
        self.blocks = [Block(c.dim, c.heads, rng) for _ in range(c.layers)]
        self.ln_f = LayerNorm(c.dim)
        self.text_head = Linear(c.dim, c.vocab_size, rng)
        self.latent_head = Linear(c.dim, c.dim, rng)

    def hidden(self, ids: np.ndarray, latents: np.ndarray, latent_mask: np.ndarray) -> Tensor:
        """Final hidden states (B, T, d).

        ``latents`` is (B, T, d) and is used verbatim wherever ``latent_mask``
        is set; token embeddings fill every other position.
        """
        ids = np.asarray(ids)
        b, t = ids.shape
        if t > self.config.context:
            raise ContractError(f"sequence length {t} exceeds context {self.config.context}")
        dtype = self.tok_emb.data.dtype
        keep = (~np.asarray(latent_mask, dtype=bool)).astype(dtype)[..., None]
        x = mul(embedding(self.tok_emb, ids), Tensor(keep))
        x = add(x, Tensor(np.asarray(latents, dtype=dtype) * (1 - keep)))
        x = add(x, gather(self.pos_emb, np.arange(t), axis=0))
        mask = causal_mask(t, dtype)
        for blk in self.blocks:
            x = blk(x, mask)
        return self.ln_f(x)


def pack(samples, dtype=None) -> tuple:
    """Right-pad a list of samples into ``(ids, latents, latent_mask)`` arrays."""
    dtype = dtype or get_default_dtype()
    t = max(s.length for s in samples)
    d = samples[0].dim
    ids = np.zeros((len(samples), t), dtype=np.int64)
    lat = np.zeros((len(samples), t, d), dtype=dtype)
    mask = np.zeros((len(samples), t), dtype=bool)
    for i, s in enumerate(samples):
        if s.dim != d:
            raise ContractError("all samples in a batch must share the latent width")
        ids[i, : s.length] = s.input_ids
        lat[i, s.s_z:s.e_z] = s.latent
        mask[i, s.s_z:s.e_z] = True
    return ids, lat, mask


@dataclass
class LossBreakdown:
    total: Tensor
    mse_terms: np.ndarray
    ce_terms: np.ndarray
    denominators: np.ndarray

    @property
    def mse_sum(self) -> float:
        return float(self.mse_terms.sum())

    @property
    def ce_sum(self) -> float:
        return float(self.ce_terms.sum())

    @property
    def value(self) -> float:
        return float(self.total.data)


def _check_spans(s: TrainingSample) -> None:
    if not (0 < s.s_z < s.e_z < s.s_o <= s.e_o) or s.e_z - s.s_z != s.n or s.e_o - s.s_o != len(s.output):
        raise ContractError("sample spans are inconsistent")


def batch_loss(net: ReasonerNet, samples) -> LossBreakdown:
    """Mean over samples of the per-sample mixed loss.

    For each sample the latent head's prediction at position i-1 is scored
    by MSE against the latent row at i (for i in [s_z, e_z)), the text
    head's prediction at i-1 by cross-entropy against the token at i (for i
    in [s_o, e_o)); the sum is divided by n + |output|.  The prediction of
    the end-of-latent token is not supervised.
    """
    samples = list(samples)
    if not samples:
        raise ContractError("empty batch")
    d = net.config.dim
    for s in samples:
        _check_spans(s)
        if s.dim != d:
            raise ContractError(f"latent width {s.dim} != model width {d}")
    ids, lat, mask = pack(samples, net.tok_emb.data.dtype)
    b, t = ids.shape
    flat = reshape(net.hidden(ids, lat, mask), (b * t, d))
    m_rows, m_tgt, m_w, c_rows, c_tgt, c_w = [], [], [], [], [], []
    denoms = np.array([s.denominator for s in samples], dtype=np.float64)
    for i, s in enumerate(samples):
        w = 1.0 / (denoms[i] * len(samples))
        pos = np.arange(s.s_z, s.e_z)
        m_rows.append(i * t + pos - 1)
        m_tgt.append(s.latent)
        m_w.append(np.full(len(pos), w))
        pos = np.arange(s.s_o, s.e_o)
        c_rows.append(i * t + pos - 1)
        c_tgt.append(ids[i, pos])
        c_w.append(np.full(len(pos), w))
    m_rows, c_rows = np.concatenate(m_rows), np.concatenate(c_rows)
    m_tgt = np.concatenate(m_tgt).astype(flat.data.dtype)
    c_tgt = np.concatenate(c_tgt)
    latent_pred = net.latent_head(gather(flat, m_rows, axis=0))
    logits = net.text_head(gather(flat, c_rows, axis=0))
    total = add(mse(latent_pred, Tensor(m_tgt), np.concatenate(m_w)),
                cross_entropy(logits, c_tgt, np.concatenate(c_w)))
    mse_terms = ((latent_pred.data.astype(np.float64) - m_tgt) ** 2).mean(axis=-1)
    ce_terms = -log_softmax(logits.data.astype(np.float64))[np.arange(len(c_tgt)), c_tgt]
    return LossBreakdown(total, mse_terms, ce_terms, denoms)


def text_lm_loss(net: ReasonerNet, sequences) -> Tensor:
    """Next-token cross-entropy over plain id sequences (no latents), averaged per sequence then over the batch."""
    seqs = [np.asarray(s, dtype=np.int64) for s in sequences]
    if not seqs or min(len(s) for s in seqs) < 2:
        raise ContractError("each sequence needs at least two tokens")
    b, t, d = len(seqs), max(len(s) for s in seqs), net.config.dim
    ids = np.zeros((b, t), dtype=np.int64)
    rows, targets, weights = [], [], []
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        rows.append(i * t + np.arange(len(s) - 1))
        targets.append(s[1:])
        weights.append(np.full(len(s) - 1, 1.0 / ((len(s) - 1) * b)))
    dtype = net.tok_emb.data.dtype
    flat = reshape(net.hidden(ids, np.zeros((b, t, d), dtype=dtype), np.zeros((b, t), dtype=bool)), (b * t, d))
    logits = net.text_head(gather(flat, np.concatenate(rows), axis=0))
    return cross_entropy(logits, np.concatenate(targets), np.concatenate(weights))


def mixed_loss(net: ReasonerNet, sample: TrainingSample) -> LossBreakdown:
    """Per-sample mixed loss; ``total * (n + |output|)`` equals ``mse_sum + ce_sum``."""
    return batch_loss(net, [sample])


def log_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
