"""Toy decoder-only reasoner over mixed latent/text sequences."""

from imgcot.reasoner.model import LossBreakdown, ReasonerConfig, ReasonerNet, batch_loss, log_softmax, mixed_loss, pack, text_lm_loss
from imgcot.reasoner.sample import Modality, TrainingSample, assemble_sample
from imgcot.reasoner.train import (
    InferenceResult,
    ReasonerSettings,
    TrainResult,
    infer,
    load_reasoner,
    save_reasoner,
    token_logprobs,
    train_reasoner,
    train_text_model,
)
from imgcot.reasoner.vocab import SPECIALS, Vocab

__all__ = [
    "InferenceResult", "LossBreakdown", "Modality", "ReasonerConfig", "ReasonerNet", "ReasonerSettings",
    "SPECIALS", "TrainResult", "TrainingSample", "Vocab", "assemble_sample", "batch_loss", "infer",
    "load_reasoner", "log_softmax", "mixed_loss", "pack", "save_reasoner", "token_logprobs", "text_lm_loss", "train_reasoner", "train_text_model",
]
