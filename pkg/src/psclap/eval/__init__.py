"""Evaluation of a trained dual encoder on a corpus's eval split."""

from __future__ import annotations

import numpy as np

from ..corpus import Corpus
from ..encoders import DualEncoder
from ..errors import EvaluationError
from ..losses import cosine_similarity_matrix
from .metrics import (
    ClassificationResult,
    RetrievalResult,
    classification_metrics,
    classify_zero_shot,
    rank_prompts,
    retrieval_metrics,
)
from .report import read_report, write_report


def evaluate_retrieval(model: DualEncoder, corpus: Corpus, ks=(1, 10)) -> RetrievalResult:
    """Rank the corpus's eval prompts for every eval clip."""
    if not corpus.prompts:
        raise EvaluationError("corpus has no eval prompts")
    index = corpus.prompt_index()
    truth = []
    for ex in corpus.eval:
        key = frozenset(corpus.vocab.names[k] for k in np.flatnonzero(ex.tags))
        if key not in index:
            raise EvaluationError(f"eval clip {ex.example_id} has no matching prompt")
        truth.append(index[key])
    speech = model.embed_speech([ex.features for ex in corpus.eval])
    text = model.embed_text([p.caption for p in corpus.prompts])
    sim = cosine_similarity_matrix(speech, text).data
    return retrieval_metrics(sim, truth, ks)


def evaluate_classification(model: DualEncoder, corpus: Corpus) -> ClassificationResult:
    """Zero-shot tag classification over eval clips that carry exactly one tag."""
    single = [ex for ex in corpus.eval if ex.tags.sum() == 1]
    if not single:
        raise EvaluationError("no single-tag eval clips; classification does not apply to this corpus")
    labels = np.array([int(np.flatnonzero(ex.tags)[0]) for ex in single])
    speech = model.embed_speech([ex.features for ex in single])
    preds = classify_zero_shot(speech, corpus.vocab.names, model.embed_text)
    return classification_metrics(preds, labels, len(corpus.vocab))


__all__ = [
    "ClassificationResult",
    "RetrievalResult",
    "classification_metrics",
    "classify_zero_shot",
    "evaluate_classification",
    "evaluate_retrieval",
    "rank_prompts",
    "read_report",
    "retrieval_metrics",
    "write_report",
]
