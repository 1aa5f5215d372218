"""Retrieval (Recall@k, median rank) and zero-shot classification (UAR, macro F1)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import softmax

from ..errors import ConfigurationError, EvaluationError
from ..templates import ZERO_SHOT_TEMPLATE


def rank_prompts(scores: np.ndarray, truth_index: int) -> int:
    """1-based rank of ``truth_index`` when scores are sorted descending.

    Ties are broken pessimistically by index: a tied prompt with a lower
    column index ranks ahead of the truth.
    """
    scores = np.asarray(scores)
    target = scores[truth_index]
    return int(1 + np.sum(scores > target) + np.sum(scores[:truth_index] == target))


@dataclass
class RetrievalResult:
    ranks: np.ndarray
    recall: dict[int, float]
    median_rank: int

    def to_dict(self) -> dict:
        out = {f"R@{k}": v for k, v in self.recall.items()}
        out["MedRank"] = self.median_rank
        out["num_clips"] = int(self.ranks.size)
        return out


def lower_median(values: np.ndarray) -> int:
    ordered = np.sort(np.asarray(values))
    return int(ordered[(ordered.size - 1) // 2])


def retrieval_metrics(sim: np.ndarray, truth: Sequence[int], ks: Sequence[int] = (1, 10)) -> RetrievalResult:
    """Rank every prompt per clip (row) and score the ground-truth prompt's position.

    Several clips may share a truth prompt. Recall values are percentages;
    the median rank is the lower median.
    """
    sim = np.asarray(sim, dtype=np.float64)
    truth = np.asarray(truth, dtype=int)
    n_clips, n_prompts = sim.shape
    if truth.shape != (n_clips,):
        raise EvaluationError(f"{truth.size} truth indices for {n_clips} clips")
    if np.any(truth < 0) or np.any(truth >= n_prompts):
        raise EvaluationError(f"truth prompt index out of range [0, {n_prompts})")
    target = sim[np.arange(n_clips), truth][:, None]
    cols = np.arange(n_prompts)[None, :]
    ranks = 1 + (sim > target).sum(axis=1) + ((sim == target) & (cols < truth[:, None])).sum(axis=1)
    recall = {k: 100.0 * np.count_nonzero(ranks <= k) / n_clips for k in ks}
    return RetrievalResult(ranks=ranks, recall=recall, median_rank=lower_median(ranks))


def classify_zero_shot(
    speech_embs: np.ndarray,
    class_labels: Sequence[str],
    text_encoder: Callable[[list[str]], np.ndarray],
    template: str = ZERO_SHOT_TEMPLATE,
) -> np.ndarray:
    """Predict a class per clip from cosine similarity to templated label prompts."""
    if len(class_labels) < 2:
        raise ConfigurationError("zero-shot classification needs at least two classes")
    if len(set(class_labels)) != len(class_labels):
        raise ConfigurationError("duplicate class labels")
    prompts = [template.format(label=label) for label in class_labels]
    text = np.asarray(text_encoder(prompts), dtype=np.float64)
    speech = np.asarray(speech_embs, dtype=np.float64)
    sims = (speech / np.linalg.norm(speech, axis=1, keepdims=True)) @ (
        text / np.linalg.norm(text, axis=1, keepdims=True)
    ).T
    # argmax picks the lowest index among ties
    return np.argmax(softmax(sims, axis=1), axis=1)


@dataclass
class ClassificationResult:
    confusion: np.ndarray
    per_class_recall: np.ndarray
    per_class_f1: np.ndarray
    uar: float
    macro_f1: float

    def to_dict(self) -> dict:
        return {
            "UAR": self.uar,
            "macro_F1": self.macro_f1,
            "num_clips": int(self.confusion.sum()),
            "num_classes": int(self.confusion.shape[0]),
            "confusion": self.confusion.tolist(),
        }


def classification_metrics(preds: Sequence[int], labels: Sequence[int], num_classes: int) -> ClassificationResult:
    """Per-class recall and F1, macro-averaged, as percentages.

    Every class needs at least one gold instance. A class whose precision
    and recall are both zero contributes F1 = 0.
    """
    preds, labels = np.asarray(preds, dtype=int), np.asarray(labels, dtype=int)
    if preds.shape != labels.shape:
        raise EvaluationError("predictions and labels differ in length")
    for name, arr in (("label", labels), ("prediction", preds)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise EvaluationError(f"{name} outside [0, {num_classes})")
    confusion = np.zeros((num_classes, num_classes), dtype=int)
    np.add.at(confusion, (labels, preds), 1)
    support = confusion.sum(axis=1)
    if np.any(support == 0):
        empty = np.flatnonzero(support == 0).tolist()
        raise EvaluationError(f"classes {empty} have no gold instances; UAR is undefined")
    hits = np.diag(confusion).astype(np.float64)
    recall = hits / support
    predicted = confusion.sum(axis=0)
    precision = np.divide(hits, predicted, out=np.zeros_like(hits), where=predicted > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(hits), where=denom > 0)
    return ClassificationResult(
        confusion=confusion,
        per_class_recall=recall,
        per_class_f1=f1,
        uar=100.0 * float(recall.sum()) / num_classes,
        macro_f1=100.0 * float(f1.sum()) / num_classes,
    )
