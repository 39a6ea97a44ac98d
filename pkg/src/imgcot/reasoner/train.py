"""Reasoner training loop, checkpoints and greedy latent-then-text inference."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from imgcot.errors import ContractError, IncompatibleVersionError, NumericError
from imgcot.numerics import AdamW, CosineRestartSchedule, backward, load_checkpoint, make_rng, no_grad, save_checkpoint
from imgcot.numerics.tensor import default_dtype
from imgcot.reasoner.model import ReasonerConfig, ReasonerNet, batch_loss, log_softmax, text_lm_loss
from imgcot.reasoner.vocab import Vocab
from imgcot.vqtok.model import nearest_indices

log = logging.getLogger(__name__)


@dataclass
class ReasonerSettings:
    epochs: int = 5
    batch_size: int = 16
    lr: float = 1e-3
    warmup_frac: float = 0.15
    restarts: int = 1
    weight_decay: float = 0.1
    seed: int = 0


@dataclass
class TrainResult:
    curve: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)


def _no_decay(net: ReasonerNet) -> list:
    return [p for name, p in net.named_parameters() if name.endswith(("bias", "gain", "shift"))]


def _fit(items, net: ReasonerNet, settings: ReasonerSettings, loss_fn, tag: str, on_epoch=None) -> list:
    """Shuffled mini-batch AdamW epochs; ``loss_fn(net, batch)`` returns a scalar Tensor. Returns the loss curve."""
    bs = settings.batch_size
    per_epoch = -(-len(items) // bs)
    schedule = CosineRestartSchedule(settings.lr, per_epoch * settings.epochs, settings.warmup_frac, settings.restarts)
    opt = AdamW(net.parameters(), schedule, weight_decay=settings.weight_decay, no_decay=_no_decay(net))
    curve = []
    with default_dtype(net.tok_emb.data.dtype.type):
        for epoch in range(settings.epochs):
            order = make_rng(settings.seed, tag, "shuffle", epoch).permutation(len(items))
            total = 0.0
            for start in range(0, len(items), bs):
                batch = [items[i] for i in order[start:start + bs]]
                opt.zero_grad()
                loss = loss_fn(net, batch)
                value = float(loss.data)
                if not np.isfinite(value):
                    raise NumericError(f"{tag} loss is not finite at epoch {epoch}", primitive=loss.op)
                backward(loss)
                opt.step()
                total += value * len(batch)
            mean = total / len(items)
            curve.append(mean)
            log.info("%s epoch %d mean loss %.6f", tag, epoch, mean)
            if on_epoch:
                on_epoch(epoch, mean)
    return curve


def train_reasoner(samples, net: ReasonerNet, settings: ReasonerSettings | None = None, vocab: Vocab | None = None,
                   checkpoint_dir=None, codebook: np.ndarray | None = None, progress=None) -> TrainResult:
    """Train for ``settings.epochs`` epochs; returns the per-epoch mean loss curve.

    With ``checkpoint_dir`` (and ``vocab``) a checkpoint is written after every epoch.
    """
    settings = settings or ReasonerSettings()
    samples = list(samples)
    if not samples:
        raise ContractError("empty training set")
    dims = {s.dim for s in samples}
    if dims != {net.config.dim}:
        raise ContractError(f"sample widths {sorted(dims)} do not match model width {net.config.dim}")
    if checkpoint_dir is not None and vocab is None:
        raise ContractError("a vocab is required to write checkpoints")
    result = TrainResult()

    def on_epoch(epoch, mean):
        if checkpoint_dir is not None:
            path = Path(checkpoint_dir) / f"reasoner-epoch{epoch:03d}.ckpt"
            save_reasoner(net, vocab, path, codebook)
            result.checkpoints.append(path)
        if progress:
            progress(epoch, mean)

    result.curve = _fit(samples, net, settings, lambda m, b: batch_loss(m, b).total, "reasoner", on_epoch)
    return result


def train_text_model(texts, net: ReasonerNet, vocab: Vocab, settings: ReasonerSettings | None = None) -> list:
    """Fit the text head as a character language model on plain texts (each followed by end-of-sequence).

    This is how the local confidence scorer is built. Returns the loss curve.
    """
    settings = settings or ReasonerSettings()
    seqs = [np.append(vocab.encode(t), vocab.eos_id) for t in texts]
    if not seqs:
        raise ContractError("empty text corpus")
    return _fit(seqs, net, settings, text_lm_loss, "scorer")


@dataclass
class InferenceResult:
    latents: np.ndarray
    latent_indices: np.ndarray | None
    output_ids: list
    text: str
    truncated: bool

    @property
    def latent_tokens(self) -> int:
        return self.latents.shape[0]

    @property
    def text_tokens(self) -> int:
        return len(self.output_ids)


def infer(net: ReasonerNet, question: str, vocab: Vocab, n_latent: int, codebook: np.ndarray | None = None,
          requantize: bool = True, max_text_len: int = 64) -> InferenceResult:
    """Roll out exactly ``n_latent`` latent vectors, then greedily decode text.

    With ``requantize`` each predicted latent is snapped to its nearest
    codebook row before being fed back.  Decoding stops at end-of-sequence;
    hitting ``max_text_len`` first sets ``truncated``.
    """
    if n_latent < 1:
        raise ContractError("n_latent must be at least 1")
    if requantize and codebook is None:
        raise ContractError("re-quantization needs a codebook")
    d = net.config.dim
    q = vocab.encode(question)
    dtype = net.tok_emb.data.dtype
    cap = len(q) + 2 + n_latent + max_text_len
    ids = np.zeros(cap, dtype=np.int64)
    lat = np.zeros((cap, d), dtype=dtype)
    mask = np.zeros(cap, dtype=bool)
    ids[: len(q)] = q
    ids[len(q)] = vocab.bot_id
    t = len(q) + 1
    latents, indices = [], []

    def last_hidden(length):
        return net.hidden(ids[None, :length], lat[None, :length], mask[None, :length]).data[0, -1]

    with no_grad(), default_dtype(dtype.type):
        for _ in range(n_latent):
            h = last_hidden(t)
            z = h @ net.latent_head.weight.data + net.latent_head.bias.data
            if requantize:
                j = int(nearest_indices(z[None], codebook)[0])
                indices.append(j)
                z = np.asarray(codebook[j], dtype=dtype)
            latents.append(np.asarray(z, dtype=np.float64))
            lat[t] = z
            mask[t] = True
            t += 1
        ids[t] = vocab.end_latent_id
        t += 1
        out = []
        truncated = True
        for _ in range(max_text_len):
            h = last_hidden(t)
            logits = h @ net.text_head.weight.data + net.text_head.bias.data
            tok = int(np.argmax(logits))
            if tok == vocab.eos_id:
                truncated = False
                break
            out.append(tok)
            ids[t] = tok
            t += 1
    return InferenceResult(np.stack(latents), np.array(indices) if requantize else None, out,
                           vocab.decode(out), truncated)


def token_logprobs(net: ReasonerNet, ids: np.ndarray) -> np.ndarray:
    """Natural-log probability of each token given its prefix under the text head.

    Position 0 has no prefix and gets NaN.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ContractError("need a non-empty 1-D id sequence")
    d = net.config.dim
    dtype = net.tok_emb.data.dtype
    with no_grad():
        h = net.hidden(ids[None], np.zeros((1, len(ids), d), dtype=dtype), np.zeros((1, len(ids)), dtype=bool)).data[0]
        logits = (h @ net.text_head.weight.data + net.text_head.bias.data).astype(np.float64)
    logp = log_softmax(logits)
    out = np.full(len(ids), np.nan)
    out[1:] = logp[np.arange(len(ids) - 1), ids[1:]]
    return out


CHECKPOINT_KIND = "reasoner"


def save_reasoner(net: ReasonerNet, vocab: Vocab, path, codebook: np.ndarray | None = None) -> None:
    arrays = net.state_dict()
    if codebook is not None:
        arrays["codebook"] = np.asarray(codebook)
    meta = {"kind": CHECKPOINT_KIND, "config": net.config.to_dict(), "vocab": vocab.to_dict()}
    save_checkpoint(path, arrays, meta)


def load_reasoner(path) -> tuple:
    """Returns ``(net, vocab, codebook_or_None)``."""
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise IncompatibleVersionError(f"checkpoint kind {meta.get('kind')!r} is not a reasoner")
    codebook = arrays.pop("codebook", None)
    dtype = arrays["tok_emb"].dtype.type
    with default_dtype(dtype):
        net = ReasonerNet(ReasonerConfig(**meta["config"]))
    net.load_state_dict(arrays)
    return net, Vocab.from_dict(meta["vocab"]), codebook
