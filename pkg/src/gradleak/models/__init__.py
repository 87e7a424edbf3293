"""Victim classifier, auxiliary language models, vocabulary and trainers."""
from .classifier import (
    ClassifierConfig,
    ModelParams,
    embed,
    forward,
    init_classifier,
    loss_from_embeddings,
    loss_from_tokens,
    predict,
    token_embeddings,
)
from .lm import BigramLM, LMConfig, LmParams, UniformLM, init_lm, lm_perplexity, lm_perplexity_batch
from .train import accuracy, train_classifier, train_lm
from .vocab import CLS, PAD, UNK, TokenSequence, Vocab, pad_ids, tokenize

__all__ = [
    "BigramLM",
    "CLS",
    "ClassifierConfig",
    "LMConfig",
    "LmParams",
    "ModelParams",
    "PAD",
    "TokenSequence",
    "UNK",
    "UniformLM",
    "Vocab",
    "accuracy",
    "embed",
    "forward",
    "init_classifier",
    "init_lm",
    "lm_perplexity",
    "lm_perplexity_batch",
    "loss_from_embeddings",
    "loss_from_tokens",
    "pad_ids",
    "predict",
    "token_embeddings",
    "tokenize",
    "train_classifier",
    "train_lm",
]
