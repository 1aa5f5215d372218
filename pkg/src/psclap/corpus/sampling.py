"""Length fitting and batch sampling (plain, class-balanced, two-source balanced)."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import ConfigurationError
from .model import TagVocabulary, TrainingExample


def fit_length(features: np.ndarray, length: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Randomly crop or zero-pad a clip to exactly ``length`` frames.

    Returns ``(features, mask)``; the mask is false over padding.
    """
    frames = features.shape[0]
    if frames > length:
        start = int(rng.integers(0, frames - length + 1))
        return features[start : start + length].copy(), np.ones(length, dtype=bool)
    out = np.zeros((length, features.shape[1]))
    out[:frames] = features
    mask = np.zeros(length, dtype=bool)
    mask[:frames] = True
    return out, mask


def class_balanced_weights(
    examples: Sequence[TrainingExample], vocab: TagVocabulary, aggregate: str = "mean"
) -> np.ndarray:
    """Per-example sampling probabilities from inverse tag frequencies.

    A tag's frequency is the fraction of examples carrying it. An example's
    raw weight aggregates ``1/f_k`` over its active tags (mean by default);
    the result is normalised to sum to one.
    """
    tags = np.stack([ex.tags for ex in examples])
    if tags.shape[1] != len(vocab):
        raise ConfigurationError(f"tag vectors have width {tags.shape[1]}, vocabulary has {len(vocab)}")
    per_example = tags.sum(axis=1)
    if np.any(per_example == 0):
        bad = examples[int(np.argmax(per_example == 0))].example_id
        raise ConfigurationError(f"example {bad} has no active tags; cannot class-balance")
    support = tags.sum(axis=0)
    if np.any(support == 0):
        missing = [vocab.names[k] for k in np.flatnonzero(support == 0)]
        raise ConfigurationError(f"tags with zero support: {', '.join(missing)}")
    inv = len(examples) / support
    if aggregate == "mean":
        raw = (tags @ inv) / per_example
    elif aggregate == "sum":
        raw = tags @ inv
    elif aggregate == "max":
        raw = (tags * inv).max(axis=1)
    else:
        raise ConfigurationError(f"unknown weight aggregate {aggregate!r}")
    return raw / raw.sum()


class WeightedSampler:
    """I.i.d. draws with replacement; uniform when ``weights`` is None."""

    def __init__(self, size: int, weights: np.ndarray | None = None):
        if size < 1:
            raise ConfigurationError("cannot sample from an empty pool")
        self.size = size
        self.weights = weights

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.weights is None:
            return rng.integers(0, self.size, size=n)
        return rng.choice(self.size, size=n, replace=True, p=self.weights)


class BalancedStream:
    """Draws from two pools with probability 1/2 each, repeating the smaller as needed.

    Indices refer to ``examples``, the concatenation ``first + second``.
    """

    def __init__(self, first: Sequence[TrainingExample], second: Sequence[TrainingExample]):
        if not first or not second:
            raise ConfigurationError("balanced stream needs both sources to be nonempty")
        self.examples = list(first) + list(second)
        self.split = len(first)
        self.size = len(self.examples)

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        pick_second = rng.random(n) < 0.5
        a = rng.integers(0, self.split, size=n)
        b = self.split + rng.integers(0, self.size - self.split, size=n)
        return np.where(pick_second, b, a)


def upsample_balance(
    intrinsic_examples: Sequence[TrainingExample], situational_examples: Sequence[TrainingExample]
) -> BalancedStream:
    return BalancedStream(intrinsic_examples, situational_examples)
