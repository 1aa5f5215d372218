"""Training objectives: bidirectional InfoNCE and the inference-like tag classification loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import numcore as nc
from .encoders import encode_speech, encode_text
from .errors import ConfigurationError, ContractError, DegenerateEmbeddingError, ShapeError
from .numcore import Tensor

TAU_MIN = 1e-3
TAU_MAX = 100.0
MODES = ("intrinsic", "situational", "combined")


def temperature(log_tau, tau_min: float = TAU_MIN, tau_max: float = TAU_MAX) -> Tensor:
    return nc.exp(nc.clip(log_tau, np.log(tau_min), np.log(tau_max)))


def cosine_similarity_matrix(speech_embs, text_embs) -> Tensor:
    """``S[i, j]`` = cosine between speech row i and text row j."""
    speech_embs, text_embs = nc.as_tensor(speech_embs), nc.as_tensor(text_embs)
    if speech_embs.ndim != 2 or text_embs.ndim != 2 or speech_embs.shape[1] != text_embs.shape[1]:
        raise ShapeError(f"cannot compare embeddings {speech_embs.shape} and {text_embs.shape}")
    for label, e in (("speech", speech_embs), ("text", text_embs)):
        if np.any(np.all(e.data == 0.0, axis=1)):
            raise DegenerateEmbeddingError(f"zero-norm {label} embedding")
    a = speech_embs / nc.sqrt((speech_embs * speech_embs).sum(axis=1, keepdims=True))
    b = text_embs / nc.sqrt((text_embs * text_embs).sum(axis=1, keepdims=True))
    return a @ b.T


def contrastive_loss(sim, tau) -> Tensor:
    """Symmetric InfoNCE over a square similarity matrix whose diagonal holds the positives."""
    sim = nc.as_tensor(sim)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise ContractError(f"contrastive loss needs a square similarity matrix, got {sim.shape}")
    n = sim.shape[0]
    logits = sim / tau
    diag = (logits * np.eye(n)).sum(axis=1)
    speech_to_text = nc.logsumexp(logits, axis=1) - diag
    text_to_speech = nc.logsumexp(logits, axis=0) - diag
    return (speech_to_text.sum() + text_to_speech.sum()) * (1.0 / (2 * n))


def sample_tag_captions(
    captions: Mapping[str, Sequence[str]], tag_names: Sequence[str], rng: np.random.Generator
) -> tuple[list[str], list[int]]:
    """Draw one paraphrase per tag, uniformly; returns ``(captions, choice indices)``."""
    chosen, picks = [], []
    for name in tag_names:
        options = captions.get(name)
        if not options:
            raise ConfigurationError(f"no paraphrases for tag {name!r}")
        i = int(rng.integers(0, len(options)))
        chosen.append(options[i])
        picks.append(i)
    return chosen, picks


class TagCaptionBank:
    """Paraphrase bank pre-tokenized in tag-vocabulary order."""

    def __init__(self, captions: Mapping[str, Sequence[str]], tag_names: Sequence[str], tokenizer):
        self.tag_names = list(tag_names)
        if not self.tag_names:
            raise ConfigurationError("tag vocabulary is empty")
        for name in self.tag_names:
            if not captions.get(name):
                raise ConfigurationError(f"no paraphrases for tag {name!r}")
        self.tokens = {n: [tokenizer.encode(c) for c in captions[n]] for n in self.tag_names}

    def sample(self, rng: np.random.Generator) -> tuple[list[list[int]], list[int]]:
        return sample_tag_captions(self.tokens, self.tag_names, rng)


def classification_loss(speech_embs, tag_embs, targets) -> Tensor:
    """BCE-with-logits on raw dot products, summed over tags, averaged over the batch."""
    speech_embs, tag_embs = nc.as_tensor(speech_embs), nc.as_tensor(tag_embs)
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != (speech_embs.shape[0], tag_embs.shape[0]):
        raise ShapeError(f"targets {y.shape} vs logits ({speech_embs.shape[0]}, {tag_embs.shape[0]})")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ContractError("tag targets must be 0 or 1")
    logits = speech_embs @ tag_embs.T
    per_entry = nc.softplus(logits) - logits * y
    return per_entry.sum() * (1.0 / y.shape[0])


@dataclass
class Batch:
    features: np.ndarray  # (B, L, F)
    mask: np.ndarray  # (B, L)
    tokens: list[list[int]]
    tags: np.ndarray  # (B, M)


@dataclass
class LossTerms:
    total: Tensor
    contrastive: Tensor
    classification: Tensor | None
    tau: float


def total_loss(
    mode: str,
    batch: Batch,
    params: Mapping[str, Tensor],
    rng: np.random.Generator | None = None,
    tag_bank: TagCaptionBank | None = None,
    multitask: bool = True,
    classify_weight: float = 1.0,
    tau_bounds: tuple[float, float] = (TAU_MIN, TAU_MAX),
) -> LossTerms:
    """Mode-dependent objective.

    Intrinsic mode adds the classification term (unless ``multitask`` is off);
    situational and combined modes use the contrastive term alone. One fresh
    caption per tag is drawn from ``tag_bank`` with ``rng``, and only when the
    classification term is active.
    """
    if mode not in MODES:
        raise ConfigurationError(f"mode must be one of {MODES}, got {mode!r}")
    speech = encode_speech(batch.features, batch.mask, params)
    text = encode_text(batch.tokens, params)
    tau = temperature(params["log_tau"], *tau_bounds)
    contrastive = contrastive_loss(cosine_similarity_matrix(speech, text), tau)
    if mode != "intrinsic" or not multitask:
        return LossTerms(contrastive, contrastive, None, tau.item())
    if tag_bank is None or rng is None or batch.tags.shape[1] == 0:
        raise ConfigurationError("intrinsic mode with multitask needs a tag vocabulary and paraphrase bank")
    if len(tag_bank.tag_names) != batch.tags.shape[1]:
        raise ShapeError(f"{len(tag_bank.tag_names)} tag captions for {batch.tags.shape[1]} tag columns")
    tokens, _ = tag_bank.sample(rng)
    tag_embs = encode_text(tokens, params)
    classify = classification_loss(speech, tag_embs, batch.tags)
    total = contrastive + (classify if classify_weight == 1.0 else classify * classify_weight)
    return LossTerms(total, contrastive, classify, tau.item())
