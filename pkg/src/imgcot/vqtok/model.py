"""1D vector-quantized page tokenizer.

A page is cut into PxP patches, embedded, and processed together with n
learnable latent queries by a transformer encoder; the n query outputs are
the continuous latents h.  Each h_i snaps to its nearest codebook entry and
the straight-through sum h + sg(e - h) feeds a decoder in which one mask
token per patch position attends to the latents and predicts pixels.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from imgcot.errors import ContractError
from imgcot.numerics import Tensor, add, embedding, gather, make_rng, mul, sg
from imgcot.numerics.layers import Block, LayerNorm, Linear, Module, concat_rows, param
from imgcot.numerics.tensor import frozen_value, get_default_dtype


@dataclass(frozen=True)
class TokenizerConfig:
    height: int = 64
    width: int = 64
    patch: int = 8
    channels: int = 3
    n_latent: int = 8
    dim: int = 64
    codebook_size: int = 256
    enc_layers: int = 2
    dec_layers: int = 2
    heads: int = 4
    beta: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.height % self.patch or self.width % self.patch:
            raise ContractError("page size must be divisible by the patch size")
        if self.n_latent < 1 or self.codebook_size < 1 or self.dim < 1:
            raise ContractError("n_latent, codebook_size and dim must be positive")
        if self.dim % self.heads:
            raise ContractError("dim must be divisible by heads")

    @property
    def grid(self) -> tuple:
        return self.height // self.patch, self.width // self.patch

    @property
    def n_patches(self) -> int:
        gh, gw = self.grid
        return gh * gw

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch * self.channels

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LatentCode:
    indices: np.ndarray
    embeddings: np.ndarray
    page_id: str = ""


class Codebook(Module):
    def __init__(self, size: int, dim: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(dim)
        self.entries = param(rng.uniform(-bound, bound, size=(size, dim)))
        self.usage = np.zeros(size, dtype=np.int64)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]

    def reset_usage(self) -> None:
        self.usage[:] = 0


def nearest_indices(h: np.ndarray, entries: np.ndarray) -> np.ndarray:
    """argmin_j ||h_i - e_j||^2 per row; ties go to the smallest j."""
    if entries.shape[0] == 0:
        raise ContractError("codebook is empty")
    flat = np.asarray(h, dtype=np.float64).reshape(-1, entries.shape[1])
    e = np.asarray(entries, dtype=np.float64)
    dist = ((flat[:, None, :] - e[None, :, :]) ** 2).sum(axis=-1)
    return dist.argmin(axis=1).reshape(np.shape(h)[:-1])


def quantize_tensor(h: Tensor, codebook: Codebook, count: bool = True):
    """Straight-through quantization.

    Returns ``(z_hat, e, indices)`` where ``z_hat = h + sg(e - h)`` carries
    an identity gradient to ``h`` and ``e`` are the selected codebook rows
    (differentiable with respect to the codebook).
    """
    if h.shape[-1] != codebook.dim:
        raise ContractError(f"latent width {h.shape[-1]} != codebook dim {codebook.dim}")
    idx = frozen_value(lambda: nearest_indices(h.data, codebook.entries.data))
    if count:
        np.add.at(codebook.usage, idx.reshape(-1), 1)
    e = embedding(codebook.entries, idx)
    z_hat = add(h, sg(add(e, mul(h, -1.0))))
    return z_hat, e, idx


def quantize(h, codebook: Codebook, page_id: str = "", count: bool = True) -> LatentCode:
    """Nearest-neighbour lookup of each row of ``h`` (n x d)."""
    data = h.data if isinstance(h, Tensor) else np.asarray(h)
    if data.shape[-1] != codebook.dim:
        raise ContractError(f"latent width {data.shape[-1]} != codebook dim {codebook.dim}")
    idx = nearest_indices(data, codebook.entries.data)
    if count:
        np.add.at(codebook.usage, idx.reshape(-1), 1)
    return LatentCode(idx, codebook.entries.data[idx].copy(), page_id)


def patchify(pages, config: TokenizerConfig) -> np.ndarray:
    """uint8 pages (B, H, W) -> normalized patches (B, N, P*P*C) in [0, 1]."""
    arr = np.asarray(pages)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.shape[1:] != (config.height, config.width):
        raise ContractError(f"page shape {arr.shape[1:]} != configured {(config.height, config.width)}")
    b = arr.shape[0]
    p = config.patch
    gh, gw = config.grid
    x = arr.astype(get_default_dtype()) / 255.0
    x = x.reshape(b, gh, p, gw, p).transpose(0, 1, 3, 2, 4).reshape(b, gh * gw, p * p)
    # grayscale replicated to the colour channels the tokenizer expects
    return np.repeat(x[..., None], config.channels, axis=-1).reshape(b, gh * gw, config.patch_dim)


def unpatchify(patches: np.ndarray, config: TokenizerConfig) -> np.ndarray:
    """(B, N, P*P*C) normalized -> uint8 pages (B, H, W), channels averaged and clamped."""
    b = patches.shape[0]
    p = config.patch
    gh, gw = config.grid
    x = patches.reshape(b, gh * gw, p * p, config.channels).mean(axis=-1)
    x = x.reshape(b, gh, gw, p, p).transpose(0, 1, 3, 2, 4).reshape(b, config.height, config.width)
    return np.clip(np.rint(x * 255.0), 0, 255).astype(np.uint8)


class TokenizerNet(Module):
    def __init__(self, config: TokenizerConfig):
        self.config = config
        c = config
        rng = make_rng(c.seed, "vqtok", "init")
        d = c.dim
        self.patch_embed = Linear(c.patch_dim, d, rng)
        self.enc_pos = param(rng.normal(0.0, 0.02, size=(c.n_patches, d)))
        # unit-scale queries keep the latent slots from collapsing onto one summary
        self.latent_queries = param(rng.normal(0.0, 1.0, size=(c.n_latent, d)))
        self.enc_blocks = [Block(d, c.heads, rng) for _ in range(c.enc_layers)]
        self.enc_ln = LayerNorm(d)
        self.enc_proj = Linear(d, d, rng)
        self.dec_in = Linear(d, d, rng)
        self.dec_latent_pos = param(rng.normal(0.0, 0.02, size=(c.n_latent, d)))
        self.mask_token = param(rng.normal(0.0, 0.02, size=(1, d)))
        self.dec_pos = param(rng.normal(0.0, 0.02, size=(c.n_patches, d)))
        self.dec_blocks = [Block(d, c.heads, rng) for _ in range(c.dec_layers)]
        self.dec_ln = LayerNorm(d)
        self.unembed = Linear(d, c.patch_dim, rng)
        self.codebook = Codebook(c.codebook_size, d, make_rng(c.seed, "vqtok", "codebook"))

    def encode_patches(self, patches) -> Tensor:
        c = self.config
        x = add(self.patch_embed(Tensor(patches) if not isinstance(patches, Tensor) else patches), self.enc_pos)
        seq = concat_rows([self.latent_queries, x])
        for blk in self.enc_blocks:
            seq = blk(seq)
        latents = gather(seq, np.arange(c.n_latent), axis=1)
        return self.enc_proj(self.enc_ln(latents))

    def encode(self, pages) -> Tensor:
        """Pages (B, H, W) or (H, W) uint8 -> h of shape (B, n, d)."""
        return self.encode_patches(patchify(pages, self.config))

    def decode_patches(self, z_hat: Tensor) -> Tensor:
        c = self.config
        if z_hat.shape[-2:] != (c.n_latent, c.dim):
            raise ContractError(f"latents must be (..., {c.n_latent}, {c.dim}), got {z_hat.shape}")
        if z_hat.ndim == 2:
            z_hat = Tensor(z_hat.data[None]) if not z_hat.requires_grad else z_hat.reshape(1, *z_hat.shape)
        lat = add(self.dec_in(z_hat), self.dec_latent_pos)
        masks = add(self.mask_token, self.dec_pos)
        seq = concat_rows([lat, masks])
        for blk in self.dec_blocks:
            seq = blk(seq)
        out = gather(seq, np.arange(c.n_latent, c.n_latent + c.n_patches), axis=1)
        return self.unembed(self.dec_ln(out))

    def decode(self, z_hat) -> np.ndarray:
        """Latents (B, n, d) or (n, d) -> reconstructed uint8 pages (B, H, W)."""
        if not isinstance(z_hat, Tensor):
            z_hat = Tensor(np.asarray(z_hat, dtype=get_default_dtype()))
        return unpatchify(self.decode_patches(z_hat).data, self.config)
