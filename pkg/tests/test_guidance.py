import numpy as np
import pytest

from psclap.corpus import PlantedSpec, build_planted_corpus
from psclap.encoders import DualEncoder, ModelConfig, init_params
from psclap.errors import ConfigurationError, ShapeError
from psclap.guidance import CandidateSet, best_of_n, guidance_experiment, paired_summary, synth_candidates
from psclap.templates import PLANTED_CAPTION_TEMPLATE, render_caption
from psclap.trainer import TrainConfig, train


@pytest.fixture(scope="module")
def untrained(small_corpus):
    cfg = ModelConfig(feature_dim=small_corpus.feature_dim, vocab_size=len(small_corpus.tokenizer), embed_dim=5)
    return DualEncoder(init_params(cfg, np.random.default_rng(0)), small_corpus.tokenizer)


@pytest.fixture(scope="module")
def trained_planted():
    spec = PlantedSpec(num_tags=8, max_tags_per_example=3, num_combinations=64)
    corpus, bank = build_planted_corpus(spec)
    cfg = TrainConfig(steps=1500, batch_size=32, learning_rate=1e-3, embed_dim=32)
    return train(cfg, corpus, bank).checkpoint.model(), corpus


def test_single_candidate_is_chosen(untrained, small_corpus):
    cset = CandidateSet(small_corpus.prompts[0].caption, [small_corpus.eval[0].features])
    assert best_of_n(cset, untrained).index == 0


def test_ties_go_to_first(untrained, small_corpus):
    clip = small_corpus.eval[0].features
    result = best_of_n(CandidateSet(small_corpus.prompts[0].caption, [clip] * 4), untrained)
    assert result.index == 0 and np.ptp(result.scores) == 0


def test_selection_input_errors(untrained, small_corpus):
    with pytest.raises(ConfigurationError):
        best_of_n(CandidateSet("x", []), untrained)
    with pytest.raises(ShapeError):
        best_of_n(CandidateSet(small_corpus.prompts[0].caption, [np.ones((3, 2))]), untrained)


def test_generator_determinism_and_errors(small_corpus):
    sig, names = small_corpus.signatures(), small_corpus.vocab.names
    a = synth_candidates([names[0]], (0, 1), 5, np.random.default_rng(2), sig, names)
    b = synth_candidates([names[0]], (0, 1), 5, np.random.default_rng(2), sig, names)
    np.testing.assert_array_equal(a.hidden_scores, b.hidden_scores)
    for x, y in zip(a.candidates, b.candidates):
        np.testing.assert_array_equal(x, y)
    assert a.prompt == render_caption(PLANTED_CAPTION_TEMPLATE, [names[0]])
    with pytest.raises(ConfigurationError):
        synth_candidates(["nope"], (0, 1), 5, np.random.default_rng(0), sig, names)


def test_full_fidelity_candidates_differ_only_by_noise(small_corpus):
    sig, names = small_corpus.signatures(), small_corpus.vocab.names
    cset = synth_candidates([names[1]], (1, 1), 4, np.random.default_rng(0), sig, names, noise_sigma=0.0)
    assert np.all(cset.hidden_scores == 1)
    for c in cset.candidates[1:]:
        np.testing.assert_array_equal(c, cset.candidates[0])


def test_order_statistics_of_hidden_scores(small_corpus):
    # E[max of 10 iid uniforms] = 10/11, E[any fixed one] = 1/2
    sig, names = small_corpus.signatures(), small_corpus.vocab.names
    rng = np.random.default_rng(0)
    best, first = [], []
    for _ in range(4000):
        h = synth_candidates([names[0]], (0, 1), 10, rng, sig, names, frames=1).hidden_scores
        best.append(h.max())
        first.append(h[0])
    assert np.mean(best) == pytest.approx(10 / 11, abs=0.01)
    assert np.mean(first) == pytest.approx(0.5, abs=0.02)


def test_single_candidate_experiment_matches_baseline(untrained, small_corpus):
    report = guidance_experiment(untrained, small_corpus, trials_per_tag=5, n=1)
    assert report.selected_mean == report.baseline_mean
    assert report.trial_level.mean_difference == 0


def test_paired_summary():
    s = paired_summary(np.array([1.0, 2.0, 3.0, 4.0]))
    assert s.mean_difference == 2.5
    # t(0.975, 3) = 3.182446, sd = 1.290994
    half = 3.182446305284263 * 1.2909944487358056 / 2
    assert s.ci95 == pytest.approx((2.5 - half, 2.5 + half), rel=1e-9)
    assert s.excludes_zero
    assert not paired_summary(np.array([-1.0, 1.0, -0.5, 0.5])).excludes_zero


def test_trained_model_picks_the_signature_carrier(trained_planted):
    model, corpus = trained_planted
    sig, names = corpus.signatures(), corpus.vocab.names
    rng = np.random.default_rng(5)
    for k, name in enumerate(names):
        for _ in range(5):
            order = rng.permutation(len(names))
            clips = [np.tile(sig[j], (20, 1)) for j in order]
            chosen = best_of_n(CandidateSet(render_caption(PLANTED_CAPTION_TEMPLATE, [name]), clips), model).index
            assert order[chosen] == k
