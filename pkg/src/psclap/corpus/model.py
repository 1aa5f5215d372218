"""In-memory data model: tag vocabulary, tokenizer, paraphrase bank, examples."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..encoders import CLS_ID, UNK_ID
from ..errors import ConfigurationError, VocabularyError

CLS_TOKEN = "[CLS]"
UNK_TOKEN = "[UNK]"
TAG_KINDS = ("intrinsic", "situational")
CORPUS_KINDS = ("intrinsic", "situational", "combined")


@dataclass(frozen=True)
class Tag:
    name: str
    kind: str


class TagVocabulary:
    """Ordered tag list; the order fixes the columns of every tag vector."""

    def __init__(self, tags: Iterable[Tag]):
        self.tags = list(tags)
        names = [t.name for t in self.tags]
        if len(set(names)) != len(names):
            raise ConfigurationError("tag names must be unique")
        for t in self.tags:
            if t.kind not in TAG_KINDS:
                raise ConfigurationError(f"tag {t.name!r} has unknown kind {t.kind!r}")
        self._index = {n: i for i, n in enumerate(names)}

    def __len__(self) -> int:
        return len(self.tags)

    def __eq__(self, other) -> bool:
        return isinstance(other, TagVocabulary) and self.tags == other.tags

    @property
    def names(self) -> list[str]:
        return [t.name for t in self.tags]

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise ConfigurationError(f"unknown tag {name!r}") from None

    def multi_hot(self, names: Iterable[str]) -> np.ndarray:
        y = np.zeros(len(self.tags))
        for n in names:
            y[self.index(n)] = 1.0
        return y

    def to_records(self) -> list[dict]:
        return [{"name": t.name, "kind": t.kind} for t in self.tags]

    @classmethod
    def from_records(cls, records: Sequence[Mapping]) -> TagVocabulary:
        return cls(Tag(r["name"], r["kind"]) for r in records)


class Tokenizer:
    """Whitespace, case-folded tokenizer over a closed vocabulary.

    Ids 0 and 1 are reserved for CLS and UNK. Unknown words raise rather
    than map to UNK so vocabulary drift is caught early.
    """

    def __init__(self, words: Sequence[str]):
        words = list(words)
        if words[:2] != [CLS_TOKEN, UNK_TOKEN]:
            words = [CLS_TOKEN, UNK_TOKEN] + [w for w in words if w not in (CLS_TOKEN, UNK_TOKEN)]
        self.words = words
        self._ids = {w: i for i, w in enumerate(words)}
        assert self._ids[CLS_TOKEN] == CLS_ID and self._ids[UNK_TOKEN] == UNK_ID

    @classmethod
    def build(cls, texts: Iterable[str]) -> Tokenizer:
        seen: dict[str, None] = {}
        for text in texts:
            for w in text.lower().split():
                seen.setdefault(w)
        return cls(sorted(seen))

    def __len__(self) -> int:
        return len(self.words)

    def __eq__(self, other) -> bool:
        return isinstance(other, Tokenizer) and self.words == other.words

    def encode(self, text: str) -> list[int]:
        ids = [CLS_ID]
        for w in text.lower().split():
            if w not in self._ids:
                raise VocabularyError(f"out-of-vocabulary token {w!r} in {text!r}")
            ids.append(self._ids[w])
        return ids


class ParaphraseBank:
    """Tag name -> caption paraphrases used to build classification class embeddings."""

    def __init__(self, captions: Mapping[str, Sequence[str]]):
        self.captions = {k: list(v) for k, v in captions.items()}

    def validate(self, vocab: TagVocabulary) -> None:
        for name in vocab.names:
            if not self.captions.get(name):
                raise ConfigurationError(f"paraphrase bank has no captions for tag {name!r}")

    def texts(self) -> list[str]:
        return [c for caps in self.captions.values() for c in caps]

    @classmethod
    def from_templates(cls, templates: Sequence[str], tag_names: Iterable[str]) -> ParaphraseBank:
        return cls({n: [t.format(tag=n) for t in templates] for n in tag_names})

    @classmethod
    def load(cls, path: str | Path) -> ParaphraseBank:
        with open(path) as f:
            data = json.load(f)
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path}: paraphrase bank must map tag -> list of captions")
        return cls(data)

    def save(self, path: str | Path) -> None:
        with open(path, "w") as f:
            json.dump(self.captions, f, indent=2, sort_keys=True)
            f.write("\n")


@dataclass
class TrainingExample:
    example_id: str
    features: np.ndarray
    caption: str
    tags: np.ndarray
    caption_tokens: list[int] = field(default_factory=list)
    source: str = "intrinsic"

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, TrainingExample)
            and self.example_id == other.example_id
            and self.caption == other.caption
            and self.caption_tokens == other.caption_tokens
            and self.source == other.source
            and np.array_equal(self.tags, other.tags)
            and np.array_equal(self.features, other.features)
        )


@dataclass
class Prompt:
    caption: str
    tags: list[str]


@dataclass
class Corpus:
    kind: str
    vocab: TagVocabulary
    tokenizer: Tokenizer
    feature_dim: int
    fixed_length: int
    train: list[TrainingExample]
    eval: list[TrainingExample]
    prompts: list[Prompt]
    caption_template: str = ""
    planted: dict | None = None

    def prompt_index(self) -> dict[frozenset, int]:
        return {frozenset(p.tags): i for i, p in enumerate(self.prompts)}

    def signatures(self) -> np.ndarray | None:
        if not self.planted:
            return None
        return np.asarray(self.planted["signatures"], dtype=np.float64)
