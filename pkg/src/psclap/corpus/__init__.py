"""Training data: triplet model, on-disk format, sampling, planted corpora."""

from .io import load_corpus, read_features, write_corpus, write_features
from .model import (
    Corpus,
    ParaphraseBank,
    Prompt,
    Tag,
    TagVocabulary,
    Tokenizer,
    TrainingExample,
)
from .planted import PlantedSpec, build_planted_corpus, generate_planted_corpus
from .sampling import (
    BalancedStream,
    WeightedSampler,
    class_balanced_weights,
    fit_length,
    upsample_balance,
)

__all__ = [
    "BalancedStream",
    "Corpus",
    "ParaphraseBank",
    "PlantedSpec",
    "Prompt",
    "Tag",
    "TagVocabulary",
    "Tokenizer",
    "TrainingExample",
    "WeightedSampler",
    "build_planted_corpus",
    "class_balanced_weights",
    "fit_length",
    "generate_planted_corpus",
    "load_corpus",
    "read_features",
    "upsample_balance",
    "write_corpus",
    "write_features",
]
