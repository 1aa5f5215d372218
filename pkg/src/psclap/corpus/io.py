"""On-disk corpus layout.

A corpus directory holds::

    manifest.jsonl       header record, then one record per example
    train.features.bin   feature matrices of the train split
    eval.features.bin    feature matrices of the eval split
    prompts.jsonl        eval prompt list (caption + tag set)

Feature files: ``magic(8) version(u32) count(u32) feature_dim(u32)``, then
``count`` frame counts (u32), then all frames concatenated as little-endian
float64, row-major.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import ConfigurationError, CorpusLoadError, VocabularyError
from .model import CORPUS_KINDS, Corpus, Prompt, TagVocabulary, Tokenizer, TrainingExample

FEATURE_MAGIC = b"PSCFEAT\x00"
FEATURE_VERSION = 1
MANIFEST_VERSION = 1
SPLITS = ("train", "eval")


def write_features(path: str | Path, clips: Sequence[np.ndarray], feature_dim: int) -> None:
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<III", FEATURE_VERSION, len(clips), feature_dim))
        f.write(np.array([c.shape[0] for c in clips], dtype="<u4").tobytes())
        for c in clips:
            if c.ndim != 2 or c.shape[1] != feature_dim:
                raise ConfigurationError(f"clip shape {c.shape} does not match feature_dim {feature_dim}")
            f.write(np.ascontiguousarray(c, dtype="<f8").tobytes())


def read_features(path: str | Path) -> tuple[int, list[np.ndarray]]:
    """Return ``(feature_dim, clips)``."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise CorpusLoadError(f"feature file {path} does not exist") from None
    head = len(FEATURE_MAGIC) + 12
    if len(raw) < head or raw[: len(FEATURE_MAGIC)] != FEATURE_MAGIC:
        raise CorpusLoadError(f"{path}: not a feature file (bad magic)")
    version, count, dim = struct.unpack_from("<III", raw, len(FEATURE_MAGIC))
    if version != FEATURE_VERSION:
        raise CorpusLoadError(f"{path}: unsupported feature file version {version}")
    frames = np.frombuffer(raw, dtype="<u4", count=count, offset=head).astype(np.int64)
    offset = head + 4 * count
    expected = offset + 8 * int(frames.sum()) * dim
    if len(raw) != expected:
        raise CorpusLoadError(f"{path}: truncated or oversized ({len(raw)} bytes, expected {expected})")
    data = np.frombuffer(raw, dtype="<f8", offset=offset).astype(np.float64)
    clips, pos = [], 0
    for n in frames:
        size = int(n) * dim
        clips.append(data[pos : pos + size].reshape(int(n), dim))
        pos += size
    return dim, clips


def write_corpus(corpus: Corpus, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = {
        "record": "header",
        "schema_version": MANIFEST_VERSION,
        "kind": corpus.kind,
        "feature_dim": corpus.feature_dim,
        "fixed_length": corpus.fixed_length,
        "vocabulary": corpus.vocab.to_records(),
        "tokenizer": corpus.tokenizer.words,
        "caption_template": corpus.caption_template,
        "planted": corpus.planted,
    }
    lines = [json.dumps(header, sort_keys=True)]
    for split in SPLITS:
        examples = getattr(corpus, split)
        for i, ex in enumerate(examples):
            tags = [corpus.vocab.names[k] for k in np.flatnonzero(ex.tags)]
            rec = {
                "record": "example",
                "id": ex.example_id,
                "split": split,
                "index": i,
                "caption": ex.caption,
                "tags": tags,
                "source": ex.source,
            }
            lines.append(json.dumps(rec, sort_keys=True))
        write_features(out / f"{split}.features.bin", [ex.features for ex in examples], corpus.feature_dim)
    (out / "manifest.jsonl").write_text("\n".join(lines) + "\n")
    prompt_lines = [json.dumps({"caption": p.caption, "tags": p.tags}, sort_keys=True) for p in corpus.prompts]
    (out / "prompts.jsonl").write_text("".join(line + "\n" for line in prompt_lines))
    return out


def _read_jsonl(path: Path) -> list[dict]:
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise CorpusLoadError(f"{path} does not exist") from None
    records = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if line.strip():
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise CorpusLoadError(f"{path}:{lineno}: malformed record ({e.msg})") from None
    return records


def load_corpus(path: str | Path) -> Corpus:
    """Load and validate a corpus directory; captions are tokenized with CLS prepended."""
    root = Path(path)
    if not root.is_dir():
        raise CorpusLoadError(f"corpus directory {root} does not exist")
    records = _read_jsonl(root / "manifest.jsonl")
    if not records or records[0].get("record") != "header":
        raise CorpusLoadError(f"{root}/manifest.jsonl: first record must be the header")
    header = records[0]
    if header.get("schema_version") != MANIFEST_VERSION:
        raise CorpusLoadError(f"unsupported manifest schema_version {header.get('schema_version')}")
    kind = header["kind"]
    if kind not in CORPUS_KINDS:
        raise CorpusLoadError(f"unknown corpus kind {kind!r}")
    try:
        vocab = TagVocabulary.from_records(header["vocabulary"])
    except ConfigurationError as e:
        raise CorpusLoadError(f"bad tag vocabulary: {e}") from None
    tokenizer = Tokenizer(header["tokenizer"])
    feature_dim = int(header["feature_dim"])

    blobs = {}
    for split in SPLITS:
        dim, clips = read_features(root / f"{split}.features.bin")
        if dim != feature_dim:
            raise CorpusLoadError(f"{split}.features.bin has feature_dim {dim}, manifest says {feature_dim}")
        blobs[split] = clips

    splits: dict[str, list[TrainingExample]] = {s: [] for s in SPLITS}
    for rec in records[1:]:
        ex_id = rec.get("id", "<missing id>")
        split = rec.get("split")
        if split not in SPLITS:
            raise CorpusLoadError(f"example {ex_id}: unknown split {split!r}")
        idx = rec.get("index")
        if not isinstance(idx, int) or not 0 <= idx < len(blobs[split]):
            raise CorpusLoadError(f"example {ex_id}: feature blob {split}[{idx}] is missing")
        try:
            tags = vocab.multi_hot(rec["tags"])
        except ConfigurationError as e:
            raise CorpusLoadError(f"example {ex_id}: {e}") from None
        try:
            tokens = tokenizer.encode(rec["caption"])
        except VocabularyError as e:
            raise CorpusLoadError(f"example {ex_id}: {e}") from None
        if len(tokens) < 2:
            raise CorpusLoadError(f"example {ex_id}: empty caption")
        splits[split].append(
            TrainingExample(
                example_id=ex_id,
                features=blobs[split][idx],
                caption=rec["caption"],
                tags=tags,
                caption_tokens=tokens,
                source=rec.get("source", kind),
            )
        )
    for split in SPLITS:
        if not splits[split]:
            raise CorpusLoadError(f"split {split!r} is empty")

    prompts = []
    prompts_path = root / "prompts.jsonl"
    if prompts_path.exists():
        for rec in _read_jsonl(prompts_path):
            try:
                vocab.multi_hot(rec["tags"])
                tokenizer.encode(rec["caption"])
            except (ConfigurationError, VocabularyError) as e:
                raise CorpusLoadError(f"prompt {rec.get('caption')!r}: {e}") from None
            prompts.append(Prompt(rec["caption"], list(rec["tags"])))

    return Corpus(
        kind=kind,
        vocab=vocab,
        tokenizer=tokenizer,
        feature_dim=feature_dim,
        fixed_length=int(header["fixed_length"]),
        train=splits["train"],
        eval=splits["eval"],
        prompts=prompts,
        caption_template=header.get("caption_template", ""),
        planted=header.get("planted"),
    )
