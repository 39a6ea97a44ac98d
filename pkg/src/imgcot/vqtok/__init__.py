"""Vector-quantized 1D page tokenizer."""

from imgcot.vqtok.model import (
    Codebook,
    LatentCode,
    TokenizerConfig,
    TokenizerNet,
    nearest_indices,
    patchify,
    quantize,
    quantize_tensor,
    unpatchify,
)
from imgcot.vqtok.train import (
    LossReport,
    TrainSettings,
    encode_latents,
    encode_pages,
    init_codebook_kmeans,
    load_tokenizer,
    reinit_dead_codes,
    save_tokenizer,
    tokenizer_losses,
    train_step,
    train_tokenizer,
)

__all__ = [
    "Codebook", "LatentCode", "LossReport", "TokenizerConfig", "TokenizerNet", "TrainSettings",
    "encode_latents", "encode_pages", "init_codebook_kmeans", "load_tokenizer", "nearest_indices", "patchify", "quantize", "quantize_tensor",
    "reinit_dead_codes", "save_tokenizer", "tokenizer_losses", "train_step", "train_tokenizer", "unpatchify",
]
