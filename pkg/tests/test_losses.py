import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from psclap.corpus import fit_length
from psclap.encoders import constants
from psclap.errors import ConfigurationError, ContractError, DegenerateEmbeddingError, ShapeError
from psclap.losses import (
    Batch,
    TagCaptionBank,
    classification_loss,
    contrastive_loss,
    cosine_similarity_matrix,
    sample_tag_captions,
    temperature,
    total_loss,
)
from psclap.numcore import Tape, reverse_accumulate


def test_cosine_examples():
    u = np.array([[0.6, 0.8]])
    assert cosine_similarity_matrix(u, u).data[0, 0] == pytest.approx(1.0, abs=1e-15)
    assert cosine_similarity_matrix(np.array([[1.0, 0.0]]), np.array([[0.0, 2.0]])).data[0, 0] == 0.0


@given(
    arrays(np.float64, (3, 4), elements=st.floats(-3, 3)).filter(lambda a: np.all(np.abs(a).sum(1) > 0.1)),
    st.floats(0.01, 100),
)
def test_cosine_scale_invariant_and_bounded(x, c):
    y = x[::-1] + 0.5
    s = cosine_similarity_matrix(x, y).data
    assert np.all(np.abs(s) <= 1 + 1e-9)
    np.testing.assert_allclose(cosine_similarity_matrix(c * x, y).data, s, atol=1e-12)


def test_cosine_zero_row():
    with pytest.raises(DegenerateEmbeddingError):
        cosine_similarity_matrix(np.zeros((1, 3)), np.ones((1, 3)))


def test_contrastive_singleton_is_zero():
    for s, tau in ((0.3, 0.07), (-1.0, 5.0)):
        assert contrastive_loss(np.array([[s]]), tau).item() == 0.0


def test_contrastive_two_by_two():
    # each row/column: -log(e / (e + 1)) = log(1 + e^-1)
    assert contrastive_loss(np.eye(2), 1.0).item() == pytest.approx(math.log1p(math.exp(-1)), abs=1e-9)
    assert contrastive_loss(np.eye(2), 1.0).item() == pytest.approx(0.313262, abs=1e-6)


@given(arrays(np.float64, (4, 4), elements=st.floats(-1, 1)), st.permutations(range(4)))
def test_contrastive_permutation_invariant(s, perm):
    perm = list(perm)
    a = contrastive_loss(s, 0.5).item()
    b = contrastive_loss(s[np.ix_(perm, perm)], 0.5).item()
    assert a == pytest.approx(b, rel=1e-12)


def test_contrastive_needs_square():
    with pytest.raises(ContractError):
        contrastive_loss(np.ones((2, 3)), 1.0)


def test_temperature_is_clamped():
    assert temperature(np.log(1e-6)).item() == pytest.approx(1e-3)
    assert temperature(np.log(1e6)).item() == pytest.approx(100.0)
    assert temperature(np.log(0.07)).item() == pytest.approx(0.07)


def test_classification_all_zero_logits():
    m = 28
    speech = np.zeros((3, 4))
    tags = np.ones((m, 4))
    y = np.random.default_rng(0).integers(0, 2, size=(3, m))
    assert classification_loss(speech, tags, y).item() == pytest.approx(28 * math.log(2), abs=1e-9)
    assert 28 * math.log(2) == pytest.approx(19.4081, abs=1e-4)


def test_classification_single_positive_logit():
    loss = classification_loss(np.array([[1.0]]), np.array([[1.0]]), np.array([[1]])).item()
    assert loss == pytest.approx(math.log1p(math.exp(-1)), abs=1e-12)


def test_classification_extreme_logits_stay_finite():
    speech = np.array([[20.0], [-20.0]])
    tags = np.array([[1.0]])
    loss = classification_loss(speech, tags, np.array([[1], [0]])).item()
    assert loss == pytest.approx(math.log1p(math.exp(-20)), rel=1e-9)
    wrong = classification_loss(speech, tags, np.array([[0], [1]])).item()
    assert wrong == pytest.approx(20 + math.log1p(math.exp(-20)), rel=1e-12)


def test_classification_shape_and_target_checks():
    with pytest.raises(ShapeError):
        classification_loss(np.ones((2, 3)), np.ones((4, 3)), np.ones((2, 3)))
    with pytest.raises(ContractError):
        classification_loss(np.ones((1, 3)), np.ones((1, 3)), np.array([[0.5]]))


def test_paraphrase_draws_are_uniform():
    captions = {"deep": [f"deep {i}" for i in range(6)]}
    rng = np.random.default_rng(7)
    counts = Counter(sample_tag_captions(captions, ["deep"], rng)[1][0] for _ in range(6000))
    for i in range(6):
        assert abs(counts[i] / 6000 - 1 / 6) < 0.05


def test_paraphrase_sampling_determinism_and_errors():
    captions = {"a": ["x"], "b": ["y", "z"]}
    assert sample_tag_captions(captions, ["a"], np.random.default_rng(1))[0] == ["x"]
    r1 = sample_tag_captions(captions, ["a", "b"], np.random.default_rng(5))
    r2 = sample_tag_captions(captions, ["a", "b"], np.random.default_rng(5))
    assert r1 == r2
    with pytest.raises(ConfigurationError):
        sample_tag_captions({"a": []}, ["a"], np.random.default_rng(0))


def make_batch(corpus, n=4, seed=0):
    rng = np.random.default_rng(seed)
    examples = corpus.train[:n]
    fitted = [fit_length(ex.features, corpus.fixed_length, rng) for ex in examples]
    return Batch(
        features=np.stack([f for f, _ in fitted]),
        mask=np.stack([m for _, m in fitted]),
        tokens=[ex.caption_tokens for ex in examples],
        tags=np.stack([ex.tags for ex in examples]),
    )


def test_mode_semantics(small_corpus, small_bank, small_params):
    batch = make_batch(small_corpus)
    p = constants(small_params)
    bank = TagCaptionBank(small_bank.captions, small_corpus.vocab.names, small_corpus.tokenizer)
    sit = total_loss("situational", batch, p)
    assert sit.total.item() == sit.contrastive.item() and sit.classification is None
    off = total_loss("intrinsic", batch, p, np.random.default_rng(0), bank, multitask=False)
    assert off.total.item() == sit.total.item()
    on = total_loss("intrinsic", batch, p, np.random.default_rng(0), bank)
    assert on.total.item() == on.contrastive.item() + on.classification.item()
    assert on.contrastive.item() == sit.contrastive.item()


def test_intrinsic_needs_bank(small_corpus, small_params):
    with pytest.raises(ConfigurationError):
        total_loss("intrinsic", make_batch(small_corpus), constants(small_params), np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        total_loss("bogus", make_batch(small_corpus), constants(small_params))


def test_bank_rejects_missing_tag(small_corpus):
    with pytest.raises(ConfigurationError):
        TagCaptionBank({}, small_corpus.vocab.names, small_corpus.tokenizer)
    with pytest.raises(ConfigurationError):
        TagCaptionBank({}, [], small_corpus.tokenizer)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_classification_reaches_token_embeddings(small_corpus, small_bank, small_params, seed):
    # the text encoder must receive gradient from the classification term alone
    batch = make_batch(small_corpus, seed=seed)
    bank = TagCaptionBank(small_bank.captions, small_corpus.vocab.names, small_corpus.tokenizer)
    tape = Tape()
    leaves = tape.leaves_from(small_params)
    terms = total_loss("intrinsic", batch, leaves, np.random.default_rng(seed), bank)
    grads = reverse_accumulate(tape, terms.classification)
    assert np.abs(grads["text.token_embedding"]).sum() > 0
    assert np.abs(grads["text.head.W1"]).sum() > 0
