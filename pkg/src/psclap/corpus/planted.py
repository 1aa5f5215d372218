"""Synthetic corpora with planted tag structure.

Each tag owns a fixed random unit signature in feature space. A clip whose
active tag set is K has every frame equal to
``signature_scale * mean(signatures[K]) + N(0, noise_sigma^2)``, and its
caption names each active tag, so correct alignment is decodable by
construction and the noise level controls how hard it is.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from ..errors import GenerationError
from ..seeding import derive_rng
from ..templates import DEFAULT_PARAPHRASE_TEMPLATES, PLANTED_CAPTION_TEMPLATE, ZERO_SHOT_TEMPLATE, render_caption
from .io import write_corpus
from .model import CORPUS_KINDS, Corpus, ParaphraseBank, Prompt, Tag, TagVocabulary, Tokenizer, TrainingExample

INTRINSIC_WORDS = (
    "deep", "shrill", "husky", "nasal", "breathy", "raspy", "smooth", "guttural",
    "hoarse", "crisp", "muffled", "warm", "bright", "booming", "thin", "gravelly",
)
SITUATIONAL_WORDS = (
    "happy", "sad", "angry", "calm", "whispered", "enunciated", "sarcastic", "fearful",
    "confused", "excited", "bored", "sleepy", "disgusted", "awed", "pained", "laughing",
)


@dataclass(frozen=True)
class PlantedSpec:
    num_tags: int = 8
    feature_dim: int = 16
    frames: int = 20
    frame_jitter: int = 0
    fixed_length: int | None = None
    noise_sigma: float = 0.1
    signature_scale: float = 1.0
    train_examples: int = 512
    eval_examples: int = 128
    imbalance_ratio: float = 1.0
    max_tags_per_example: int = 1
    num_combinations: int | None = None
    kind: str = "intrinsic"
    situational_share: float = 1.0 / 9.0
    eval_single_tag: bool = False
    seed: int = 0

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def combinations(self) -> int:
        return self.num_combinations if self.num_combinations is not None else self.num_tags

    def validate(self) -> None:
        problems = []
        if self.num_tags < 2:
            problems.append("num_tags must be >= 2")
        if self.feature_dim < 1 or self.frames < 1:
            problems.append("feature_dim and frames must be >= 1")
        if not 0 <= self.frame_jitter < self.frames:
            problems.append("frame_jitter must be in [0, frames)")
        if self.fixed_length is not None and self.fixed_length < 1:
            problems.append("fixed_length must be >= 1")
        if self.noise_sigma < 0:
            problems.append("noise_sigma must be >= 0")
        if self.imbalance_ratio < 1:
            problems.append("imbalance_ratio must be >= 1")
        if self.imbalance_ratio != 1 and self.kind == "combined":
            problems.append("an imbalanced tag profile is not supported for combined corpora")
        if not 1 <= self.max_tags_per_example <= self.num_tags:
            problems.append("max_tags_per_example must be in [1, num_tags]")
        if self.kind not in CORPUS_KINDS:
            problems.append(f"kind must be one of {CORPUS_KINDS}")
        if self.kind == "combined" and not 0 < self.situational_share < 1:
            problems.append("situational_share must be in (0, 1)")
        if self.combinations < self.num_tags:
            problems.append("num_combinations must be >= num_tags (every single tag is a combination)")
        eval_groups = self.num_tags if self.eval_single_tag else self.combinations
        if self.eval_examples < eval_groups:
            problems.append("eval_examples too small: every eval prompt needs at least one clip")
        if problems:
            raise GenerationError("; ".join(problems))


def tag_profile(num_tags: int, ratio: float) -> np.ndarray:
    """Power-law tag weights, most frequent first, max/min equal to ``ratio``."""
    if num_tags == 1:
        return np.ones(1)
    return ratio ** (-np.arange(num_tags) / (num_tags - 1))


def apportion(total: int, weights: np.ndarray) -> np.ndarray:
    """Integer counts summing to ``total`` in proportion to ``weights`` (largest remainder)."""
    quota = total * np.asarray(weights, dtype=np.float64) / np.sum(weights)
    counts = np.floor(quota).astype(int)
    remainder = quota - counts
    order = sorted(range(len(counts)), key=lambda i: (-remainder[i], i))
    for i in order[: total - counts.sum()]:
        counts[i] += 1
    return counts


def planted_vocabulary(num_tags: int, kind: str) -> TagVocabulary:
    if kind == "combined":
        n_int = (num_tags + 1) // 2
        kinds = ["intrinsic"] * n_int + ["situational"] * (num_tags - n_int)
    else:
        kinds = [kind] * num_tags
    tags, used = [], {"intrinsic": 0, "situational": 0}
    for k in kinds:
        words = INTRINSIC_WORDS if k == "intrinsic" else SITUATIONAL_WORDS
        i = used[k]
        used[k] += 1
        tags.append(Tag(words[i] if i < len(words) else f"{k[:3]}style{i}", k))
    return TagVocabulary(tags)


def _choose_combinations(spec: PlantedSpec, rng: np.random.Generator) -> list[tuple[int, ...]]:
    combos = [(k,) for k in range(spec.num_tags)]
    extra = spec.combinations - spec.num_tags
    if extra == 0:
        return combos
    pool = [
        c
        for size in range(2, spec.max_tags_per_example + 1)
        for c in itertools.combinations(range(spec.num_tags), size)
    ]
    if extra > len(pool):
        raise GenerationError(
            f"only {spec.num_tags + len(pool)} tag combinations exist with up to "
            f"{spec.max_tags_per_example} tags; {spec.combinations} requested"
        )
    picked = np.sort(rng.choice(len(pool), size=extra, replace=False))
    return combos + [pool[i] for i in picked]


def _make_clip(combo, signatures, spec: PlantedSpec, rng) -> np.ndarray:
    n = spec.frames
    if spec.frame_jitter:
        n += int(rng.integers(-spec.frame_jitter, spec.frame_jitter + 1))
    center = spec.signature_scale * signatures[list(combo)].mean(axis=0)
    return center + spec.noise_sigma * rng.standard_normal((n, spec.feature_dim))


def build_planted_corpus(spec: PlantedSpec) -> tuple[Corpus, ParaphraseBank]:
    spec.validate()
    rng = derive_rng(spec.seed, "corpus")
    vocab = planted_vocabulary(spec.num_tags, spec.kind)
    signatures = rng.standard_normal((spec.num_tags, spec.feature_dim))
    signatures /= np.linalg.norm(signatures, axis=1, keepdims=True)
    combos = _choose_combinations(spec, rng)
    kinds = [t.kind for t in vocab.tags]

    def source_of(combo):
        found = {kinds[k] for k in combo}
        return found.pop() if len(found) == 1 else "mixed"

    # train allocation
    if spec.kind == "combined":
        train_counts = np.zeros(len(combos), dtype=int)
        n_sit = int(round(spec.train_examples * spec.situational_share))
        for source, n in (("intrinsic", spec.train_examples - n_sit), ("situational", n_sit)):
            idx = [i for i, c in enumerate(combos) if source_of(c) == source]
            train_counts[idx] = apportion(n, np.ones(len(idx)))
    else:
        # a combination is drawn in proportion to the mean profile weight of its tags;
        # for single-tag corpora this reproduces the tag profile exactly
        profile = tag_profile(spec.num_tags, spec.imbalance_ratio)
        train_counts = apportion(spec.train_examples, np.array([profile[list(c)].mean() for c in combos]))
    if spec.eval_single_tag:
        eval_counts = np.zeros(len(combos), dtype=int)
        eval_counts[: spec.num_tags] = apportion(spec.eval_examples, np.ones(spec.num_tags))
    else:
        eval_counts = apportion(spec.eval_examples, np.ones(len(combos)))

    train_support = np.zeros(spec.num_tags, dtype=int)
    for combo, n in zip(combos, train_counts):
        train_support[list(combo)] += n
    if np.any(train_support == 0):
        raise GenerationError("train_examples too small: some tags would have no training clip")

    def make_split(split: str, counts) -> list[TrainingExample]:
        plan = [i for i, n in enumerate(counts) for _ in range(n)]
        plan = [plan[j] for j in rng.permutation(len(plan))]
        out = []
        for j, ci in enumerate(plan):
            combo = combos[ci]
            names = [vocab.names[k] for k in combo]
            out.append(
                TrainingExample(
                    example_id=f"{split}-{j:05d}",
                    features=_make_clip(combo, signatures, spec, rng),
                    caption=render_caption(PLANTED_CAPTION_TEMPLATE, names),
                    tags=vocab.multi_hot(names),
                    source=source_of(combo) if spec.kind == "combined" else spec.kind,
                )
            )
        return out

    train = make_split("train", train_counts)
    evaluation = make_split("eval", eval_counts)
    prompts = [
        Prompt(render_caption(PLANTED_CAPTION_TEMPLATE, [vocab.names[k] for k in c]), [vocab.names[k] for k in c])
        for c, n in zip(combos, eval_counts)
        if n > 0
    ]
    bank = ParaphraseBank.from_templates(DEFAULT_PARAPHRASE_TEMPLATES, vocab.names)
    texts = [ex.caption for ex in train + evaluation] + [p.caption for p in prompts] + bank.texts()
    texts += [ZERO_SHOT_TEMPLATE.format(label=n) for n in vocab.names]
    tokenizer = Tokenizer.build(texts)
    for ex in train + evaluation:
        ex.caption_tokens = tokenizer.encode(ex.caption)

    corpus = Corpus(
        kind=spec.kind,
        vocab=vocab,
        tokenizer=tokenizer,
        feature_dim=spec.feature_dim,
        fixed_length=spec.fixed_length or spec.frames,
        train=train,
        eval=evaluation,
        prompts=prompts,
        caption_template=PLANTED_CAPTION_TEMPLATE,
        planted={"spec": spec.to_dict(), "signatures": signatures.tolist()},
    )
    return corpus, bank


def generate_planted_corpus(spec: PlantedSpec, out_dir: str | Path) -> Corpus:
    """Build a planted corpus and write it (plus its paraphrase bank) to ``out_dir``."""
    corpus, bank = build_planted_corpus(spec)
    out = write_corpus(corpus, out_dir)
    bank.save(out / "paraphrases.json")
    return corpus
