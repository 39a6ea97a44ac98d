"""Tokenizer training: reconstruction plus codebook and commitment losses."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.cluster.vq import kmeans2

from imgcot.errors import ContractError, IncompatibleVersionError, NumericError
from imgcot.numerics import (
    AdamW,
    CosineRestartSchedule,
    Tensor,
    add,
    backward,
    load_checkpoint,
    make_rng,
    mse,
    mul,
    no_grad,
    save_checkpoint,
    sg,
)
from imgcot.numerics.tensor import default_dtype
from imgcot.vqtok.model import Codebook, TokenizerConfig, TokenizerNet, patchify, quantize, quantize_tensor

log = logging.getLogger(__name__)


@dataclass
class LossReport:
    rec: float
    codebook: float
    commit: float
    total: float
    step: int = 0


@dataclass
class TrainSettings:
    steps: int = 500
    batch_size: int = 24
    lr: float = 2e-3
    warmup_frac: float = 0.15
    restarts: int = 1
    weight_decay: float = 0.0
    reinit_every: int = 25
    reinit_threshold: int = 1
    continuous_steps: int = 0
    kmeans_iters: int = 20
    seed: int = 0


def tokenizer_losses(net: TokenizerNet, patches: np.ndarray, count: bool = True, quantized: bool = True):
    """Forward pass returning ``(total, rec, codebook, commit, h)``.

    With ``quantized=False`` the decoder reads ``h`` directly and only the
    reconstruction term is optimized (continuous warm-up).
    """
    h = net.encode_patches(patches)
    if not quantized:
        l_rec = mse(net.decode_patches(h), Tensor(patches))
        zero = Tensor(np.zeros((), dtype=l_rec.data.dtype))
        return l_rec, l_rec, zero, zero, h
    z_hat, e, _ = quantize_tensor(h, net.codebook, count=count)
    recon = net.decode_patches(z_hat)
    l_rec = mse(recon, Tensor(patches))
    l_code = mse(e, sg(h))
    l_commit = mse(h, sg(e))
    total = add(add(l_rec, l_code), mul(l_commit, net.config.beta))
    return total, l_rec, l_code, l_commit, h


def train_step(net: TokenizerNet, pages, optimizer: AdamW, quantized: bool = True) -> tuple:
    """One optimizer step on a batch of uint8 pages; returns ``(report, h)``."""
    arr = np.asarray(pages)
    if arr.ndim != 3 or arr.shape[0] == 0:
        raise ContractError("train_step needs a non-empty (B, H, W) batch")
    optimizer.zero_grad()
    total, l_rec, l_code, l_commit, h = tokenizer_losses(net, patchify(arr, net.config), quantized=quantized)
    if not np.isfinite(total.data):
        raise NumericError("tokenizer loss is not finite", primitive=total.op)
    backward(total)
    optimizer.step()
    report = LossReport(float(l_rec.data), float(l_code.data), float(l_commit.data), float(total.data),
                        optimizer.step_count)
    return report, h.data


def reinit_dead_codes(codebook: Codebook, batch_h: np.ndarray, threshold: int = 1,
                      rng: np.random.Generator | None = None) -> int:
    """Reset entries used fewer than ``threshold`` times to random encoder outputs; clears usage."""
    rng = rng or np.random.default_rng(0)
    rows = np.asarray(batch_h).reshape(-1, codebook.dim)
    dead = np.flatnonzero(codebook.usage < threshold)
    if dead.size and rows.shape[0]:
        pick = rng.choice(rows.shape[0], size=dead.size, replace=rows.shape[0] < dead.size)
        codebook.entries.data[dead] = rows[pick].astype(codebook.entries.data.dtype)
    codebook.reset_usage()
    return int(dead.size)


def init_codebook_kmeans(codebook: Codebook, vectors: np.ndarray, iters: int = 20,
                         rng: np.random.Generator | None = None) -> None:
    """Set the codebook to k-means centroids of ``vectors`` (k-means++ seeding); clears usage.

    With fewer vectors than codes, only the first ``len(vectors)`` rows are
    replaced and the rest keep their values.
    """
    data = np.asarray(vectors, dtype=np.float64).reshape(-1, codebook.dim)
    if data.shape[0] == 0:
        raise ContractError("k-means initialization needs at least one vector")
    k = min(codebook.size, data.shape[0])
    with warnings.catch_warnings():
        # an empty cluster keeps its previous centroid
        warnings.simplefilter("ignore", UserWarning)
        centroids, _ = kmeans2(data, k, iter=iters, minit="++", seed=rng or np.random.default_rng(0))
    codebook.entries.data[:k] = centroids.astype(codebook.entries.data.dtype)
    codebook.reset_usage()


def encode_latents(net: TokenizerNet, pages, batch: int = 64) -> np.ndarray:
    """Continuous encoder outputs ``h`` for a stack of pages, shape (B, n, d)."""
    pages = np.asarray(pages)
    with no_grad():
        return np.concatenate([net.encode(pages[i:i + batch]).data for i in range(0, pages.shape[0], batch)])


def make_optimizer(net: TokenizerNet, settings: TrainSettings) -> AdamW:
    schedule = CosineRestartSchedule(settings.lr, settings.steps, settings.warmup_frac, settings.restarts)
    return AdamW(net.parameters(), schedule, weight_decay=settings.weight_decay,
                 no_decay=[net.codebook.entries])


def train_tokenizer(pages, config: TokenizerConfig, settings: TrainSettings | None = None,
                    net: TokenizerNet | None = None, progress=None) -> tuple:
    """Train on a fixed set of uint8 pages; returns ``(net, reports)``."""
    settings = settings or TrainSettings()
    pages = np.asarray(pages)
    if pages.ndim != 3 or pages.shape[0] == 0:
        raise ContractError("need a non-empty stack of pages")
    with default_dtype(np.float32):
        net = net or TokenizerNet(config)
        opt = make_optimizer(net, settings)
        rng = make_rng(settings.seed, "vqtok", "batches")
        reinit_rng = make_rng(settings.seed, "vqtok", "reinit")
        reports = []
        for step in range(1, settings.steps + 1):
            quantized = step > settings.continuous_steps
            if settings.continuous_steps and step == settings.continuous_steps + 1:
                init_codebook_kmeans(net.codebook, encode_latents(net, pages), settings.kmeans_iters,
                                     make_rng(settings.seed, "vqtok", "kmeans"))
            bs = min(settings.batch_size, pages.shape[0])
            idx = rng.choice(pages.shape[0], size=bs, replace=False)
            report, h = train_step(net, pages[idx], opt, quantized)
            reports.append(report)
            if quantized and settings.reinit_every and step % settings.reinit_every == 0 and step < settings.steps:
                n = reinit_dead_codes(net.codebook, h, settings.reinit_threshold, reinit_rng)
                log.debug("step %d: reinitialised %d codes", step, n)
            if progress:
                progress(report)
    return net, reports


def encode_pages(net: TokenizerNet, pages, batch: int = 64) -> list:
    """Quantized codes for each page (no gradient, usage counters untouched)."""
    pages = np.asarray(pages)
    if pages.ndim == 2:
        pages = pages[None]
    out = []
    with no_grad(), default_dtype(net.codebook.entries.data.dtype.type):
        for start in range(0, pages.shape[0], batch):
            h = net.encode(pages[start:start + batch]).data
            for row in h:
                out.append(quantize(row, net.codebook, count=False))
    return out


CHECKPOINT_KIND = "tokenizer"


def save_tokenizer(net: TokenizerNet, path) -> None:
    arrays = net.state_dict()
    arrays["codebook.usage"] = net.codebook.usage.copy()
    meta = {"kind": CHECKPOINT_KIND, "config": net.config.to_dict(),
            "k": net.codebook.size, "d": net.codebook.dim}
    save_checkpoint(path, arrays, meta)


def load_tokenizer(path) -> TokenizerNet:
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise IncompatibleVersionError(f"checkpoint kind {meta.get('kind')!r} is not a tokenizer")
    config = TokenizerConfig(**meta["config"])
    dtype = arrays["codebook.entries"].dtype.type
    with default_dtype(dtype):
        net = TokenizerNet(config)
    usage = arrays.pop("codebook.usage")
    net.load_state_dict(arrays)
    net.codebook.usage = usage.astype(np.int64).copy()
    return net
