import numpy as np
import pytest

from psclap.corpus import PlantedSpec, build_planted_corpus
from psclap.encoders import ModelConfig, init_params


@pytest.fixture(scope="session")
def small_spec():
    return PlantedSpec(num_tags=4, feature_dim=6, frames=8, train_examples=48, eval_examples=16, seed=3)


@pytest.fixture(scope="session")
def small_planted(small_spec):
    return build_planted_corpus(small_spec)


@pytest.fixture(scope="session")
def small_corpus(small_planted):
    return small_planted[0]


@pytest.fixture(scope="session")
def small_bank(small_planted):
    return small_planted[1]


@pytest.fixture
def small_params(small_corpus):
    cfg = ModelConfig(feature_dim=small_corpus.feature_dim, vocab_size=len(small_corpus.tokenizer), embed_dim=5)
    return init_params(cfg, np.random.default_rng(0))


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
