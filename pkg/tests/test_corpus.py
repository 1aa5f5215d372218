import hashlib
import json
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from psclap.corpus import (
    BalancedStream,
    ParaphraseBank,
    PlantedSpec,
    Tag,
    TagVocabulary,
    Tokenizer,
    TrainingExample,
    WeightedSampler,
    build_planted_corpus,
    class_balanced_weights,
    fit_length,
    generate_planted_corpus,
    load_corpus,
    read_features,
    write_corpus,
    write_features,
)
from psclap.corpus.planted import apportion, tag_profile
from psclap.errors import ConfigurationError, CorpusLoadError, GenerationError, VocabularyError


def single_tag_examples(vocab, labels):
    return [
        TrainingExample(f"ex{i}", np.zeros((2, 2)), "x", vocab.multi_hot([vocab.names[k]]))
        for i, k in enumerate(labels)
    ]


# -- vocabulary and tokenizer --------------------------------------------------


def test_vocabulary_rejects_duplicates_and_unknown_tags():
    with pytest.raises(ConfigurationError):
        TagVocabulary([Tag("deep", "intrinsic"), Tag("deep", "intrinsic")])
    vocab = TagVocabulary([Tag("deep", "intrinsic"), Tag("calm", "situational")])
    np.testing.assert_array_equal(vocab.multi_hot(["calm"]), [0, 1])
    with pytest.raises(ConfigurationError):
        vocab.multi_hot(["loud"])


def test_tokenizer_prepends_cls_and_rejects_oov():
    tok = Tokenizer.build(["A deep voice", "a calm voice"])
    ids = tok.encode("a Deep voice")
    assert ids[0] == 0 and len(ids) == 4
    with pytest.raises(VocabularyError):
        tok.encode("a zebra voice")


def test_paraphrase_bank_validation(small_corpus):
    with pytest.raises(ConfigurationError):
        ParaphraseBank({n: [] for n in small_corpus.vocab.names}).validate(small_corpus.vocab)


# -- on-disk format ------------------------------------------------------------


def test_round_trip(tmp_path, small_corpus):
    write_corpus(small_corpus, tmp_path / "c")
    loaded = load_corpus(tmp_path / "c")
    assert loaded.kind == small_corpus.kind
    assert loaded.vocab == small_corpus.vocab
    assert loaded.tokenizer == small_corpus.tokenizer
    assert loaded.train == small_corpus.train
    assert loaded.eval == small_corpus.eval
    assert loaded.prompts == small_corpus.prompts
    np.testing.assert_array_equal(loaded.signatures(), small_corpus.signatures())


def test_feature_file_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    clips = [rng.standard_normal((n, 3)) for n in (1, 5, 2)]
    write_features(tmp_path / "f.bin", clips, 3)
    dim, back = read_features(tmp_path / "f.bin")
    assert dim == 3
    for a, b in zip(clips, back):
        np.testing.assert_array_equal(a, b)


def test_feature_file_corruption(tmp_path):
    write_features(tmp_path / "f.bin", [np.ones((2, 3))], 3)
    raw = (tmp_path / "f.bin").read_bytes()
    (tmp_path / "bad.bin").write_bytes(b"X" + raw[1:])
    with pytest.raises(CorpusLoadError):
        read_features(tmp_path / "bad.bin")
    (tmp_path / "short.bin").write_bytes(raw[:-8])
    with pytest.raises(CorpusLoadError):
        read_features(tmp_path / "short.bin")


def _rewrite_manifest(root: Path, edit):
    lines = (root / "manifest.jsonl").read_text().splitlines()
    recs = [json.loads(line) for line in lines]
    edit(recs)
    (root / "manifest.jsonl").write_text("".join(json.dumps(r) + "\n" for r in recs))


def test_missing_blob_names_example(tmp_path, small_corpus):
    root = write_corpus(small_corpus, tmp_path / "c")

    def edit(recs):
        recs[1]["index"] = 10_000

    _rewrite_manifest(root, edit)
    with pytest.raises(CorpusLoadError, match=small_corpus.train[0].example_id):
        load_corpus(root)


def test_oov_caption_rejected(tmp_path, small_corpus):
    root = write_corpus(small_corpus, tmp_path / "c")

    def edit(recs):
        recs[2]["caption"] = "a zebra voice"

    _rewrite_manifest(root, edit)
    with pytest.raises(CorpusLoadError, match="zebra"):
        load_corpus(root)


def test_missing_directory():
    with pytest.raises(CorpusLoadError):
        load_corpus("/nonexistent/corpus")


# -- length fitting ------------------------------------------------------------


def test_fit_length_identity_and_padding():
    x = np.arange(12.0).reshape(4, 3)
    out, mask = fit_length(x, 4, np.random.default_rng(0))
    np.testing.assert_array_equal(out, x)
    assert mask.all()
    out, mask = fit_length(x, 6, np.random.default_rng(0))
    np.testing.assert_array_equal(out[:4], x)
    np.testing.assert_array_equal(out[4:], 0.0)
    np.testing.assert_array_equal(mask, [True] * 4 + [False] * 2)


def test_crop_offsets_are_uniform():
    length = 5
    x = np.arange(length + 3, dtype=float)[:, None]
    offsets = Counter()
    for seed in range(4000):
        out, _ = fit_length(x, length, np.random.default_rng(seed))
        assert out.shape == (length, 1)
        offsets[int(out[0, 0])] += 1
    assert set(offsets) == {0, 1, 2, 3}
    for k in range(4):
        assert abs(offsets[k] / 4000 - 0.25) < 0.03


# -- sampling ------------------------------------------------------------------


def test_uniform_tags_give_uniform_weights():
    vocab = TagVocabulary([Tag("a", "intrinsic"), Tag("b", "intrinsic")])
    w = class_balanced_weights(single_tag_examples(vocab, [0, 1, 0, 1]), vocab)
    np.testing.assert_allclose(w, 0.25)


def test_rare_tag_weight_ratio():
    # support 75% vs 25%: 1/f ratio is 0.75/0.25 = 3
    vocab = TagVocabulary([Tag("a", "intrinsic"), Tag("b", "intrinsic")])
    w = class_balanced_weights(single_tag_examples(vocab, [0, 0, 0, 1]), vocab)
    assert w[3] / w[0] == pytest.approx(3.0)


def test_weighting_errors():
    vocab = TagVocabulary([Tag("a", "intrinsic"), Tag("b", "intrinsic")])
    with pytest.raises(ConfigurationError, match="zero support"):
        class_balanced_weights(single_tag_examples(vocab, [0, 0]), vocab)
    untagged = [TrainingExample("empty", np.zeros((1, 1)), "x", np.zeros(2))]
    with pytest.raises(ConfigurationError, match="empty"):
        class_balanced_weights(untagged + single_tag_examples(vocab, [0, 1]), vocab)


def test_balanced_draws_flatten_tag_frequencies():
    spec = PlantedSpec(num_tags=8, train_examples=512, eval_examples=16, imbalance_ratio=10, seed=1)
    corpus, _ = build_planted_corpus(spec)
    tags = np.stack([ex.tags for ex in corpus.train])
    w = class_balanced_weights(corpus.train, corpus.vocab)
    idx = WeightedSampler(len(w), w).draw(100_000, np.random.default_rng(0))
    freq = tags[idx].sum(axis=0) / len(idx)
    assert np.all(np.abs(freq / freq.mean() - 1) < 0.10)


def test_balanced_stream_share():
    vocab = TagVocabulary([Tag("a", "intrinsic")])
    first = single_tag_examples(vocab, [0] * 80)
    second = single_tag_examples(vocab, [0] * 10)
    stream = BalancedStream(first, second)
    idx = stream.draw(80_000, np.random.default_rng(3))
    assert abs(np.mean(idx >= 80) - 0.5) < 0.02
    np.testing.assert_array_equal(idx, stream.draw(80_000, np.random.default_rng(3)))
    with pytest.raises(ConfigurationError):
        BalancedStream(first, [])


def test_equal_sources_equal_example_frequency():
    vocab = TagVocabulary([Tag("a", "intrinsic")])
    stream = BalancedStream(single_tag_examples(vocab, [0] * 3), single_tag_examples(vocab, [0] * 3))
    counts = np.bincount(stream.draw(60_000, np.random.default_rng(0)), minlength=6) / 60_000
    np.testing.assert_allclose(counts, 1 / 6, atol=0.01)


# -- planted generator ---------------------------------------------------------


def test_noise_free_clips_decode_to_their_tag():
    spec = PlantedSpec(num_tags=8, noise_sigma=0.0, train_examples=64, eval_examples=16)
    corpus, _ = build_planted_corpus(spec)
    sig = corpus.signatures()
    for ex in corpus.train + corpus.eval:
        mean_frame = ex.features.mean(axis=0)
        nearest = np.argmin(np.linalg.norm(sig * spec.signature_scale - mean_frame, axis=1))
        assert ex.tags[nearest] == 1 and ex.tags.sum() == 1


def test_imbalanced_counts_follow_profile():
    spec = PlantedSpec(num_tags=8, train_examples=512, eval_examples=16, imbalance_ratio=10)
    corpus, _ = build_planted_corpus(spec)
    counts = np.stack([ex.tags for ex in corpus.train]).sum(axis=0)
    np.testing.assert_array_equal(counts, apportion(512, tag_profile(8, 10)))
    assert counts[0] / counts[-1] == pytest.approx(10, rel=0.1)


def test_same_seed_gives_byte_identical_corpus(tmp_path):
    spec = PlantedSpec(num_tags=4, train_examples=32, eval_examples=8, max_tags_per_example=2, num_combinations=6)

    def digest(root):
        return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(root.iterdir())}

    generate_planted_corpus(spec, tmp_path / "a")
    generate_planted_corpus(spec, tmp_path / "b")
    assert digest(tmp_path / "a") == digest(tmp_path / "b")


def test_multi_tag_corpus_structure():
    spec = PlantedSpec(num_tags=8, max_tags_per_example=3, num_combinations=64, eval_examples=128)
    corpus, bank = build_planted_corpus(spec)
    assert len(corpus.prompts) == 64
    assert len({frozenset(p.tags) for p in corpus.prompts}) == 64
    assert max(int(ex.tags.sum()) for ex in corpus.train) == 3
    bank.validate(corpus.vocab)


def test_combined_corpus_sources():
    spec = PlantedSpec(num_tags=8, kind="combined", train_examples=90, eval_examples=16, situational_share=1 / 9)
    corpus, _ = build_planted_corpus(spec)
    sources = Counter(ex.source for ex in corpus.train)
    assert sources == {"intrinsic": 80, "situational": 10}
    kinds = {t.name: t.kind for t in corpus.vocab.tags}
    for ex in corpus.train:
        assert {kinds[corpus.vocab.names[k]] for k in np.flatnonzero(ex.tags)} == {ex.source}


@pytest.mark.parametrize(
    "kwargs",
    [
        {"num_tags": 1},
        {"noise_sigma": -1.0},
        {"imbalance_ratio": 0.5},
        {"kind": "bogus"},
        {"num_combinations": 3},
        {"eval_examples": 2},
        {"max_tags_per_example": 2, "num_combinations": 10_000},
    ],
)
def test_invalid_specs(kwargs):
    with pytest.raises(GenerationError):
        build_planted_corpus(PlantedSpec(**kwargs))
