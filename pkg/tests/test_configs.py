"""Every shipped reference config pairing trains to the end with finite losses."""

from pathlib import Path

import numpy as np
import pytest

from psclap.cli import resolve
from psclap.corpus import PlantedSpec, build_planted_corpus
from psclap.trainer import TrainConfig, train

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

PAIRINGS = [
    ("planted8.cfg", "intrinsic.cfg"),
    ("planted8_situational.cfg", "situational.cfg"),
    ("planted_combined.cfg", "combined.cfg"),
    ("planted_imbalanced.cfg", "imbalanced.cfg"),
]


@pytest.mark.parametrize("spec_file, train_file", PAIRINGS)
def test_reference_config_trains_cleanly(spec_file, train_file):
    spec = resolve(PlantedSpec, CONFIGS / spec_file, "planted", {})
    cfg = resolve(TrainConfig, CONFIGS / train_file, "train", {})
    corpus, bank = build_planted_corpus(spec)
    result = train(cfg, corpus, bank)
    losses = np.array([r.total for r in result.trace])
    assert len(losses) == cfg.steps
    assert np.all(np.isfinite(losses))
    assert losses[-100:].mean() < losses[:100].mean()


def test_all_configs_are_covered():
    shipped = {p.name for p in CONFIGS.glob("*.cfg")}
    assert shipped == {name for pair in PAIRINGS for name in pair}
