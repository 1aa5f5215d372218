"""Finite-difference validation of the full training objectives."""

from __future__ import annotations

import numpy as np

from .corpus import Corpus, ParaphraseBank, fit_length
from .losses import Batch, TagCaptionBank, total_loss
from .numcore import Tape, Tensor, finite_difference_check, reverse_accumulate
from .seeding import derive_rng
from .trainer import TrainConfig, initial_checkpoint


def objective_gradient_errors(
    config: TrainConfig,
    corpus: Corpus,
    bank: ParaphraseBank | None,
    batch_size: int = 4,
    h: float = 1e-5,
) -> dict[str, float]:
    """Max relative gradient error over all parameters, per objective.

    Always checks the contrastive-only objective; adds the
    contrastive+classification objective when a paraphrase bank is given.
    The batch, its length fitting and the caption draw are frozen so the
    objective is a deterministic function of the parameters.
    """
    params = initial_checkpoint(config, corpus).params
    rng = derive_rng(config.seed, "gradcheck")
    pool = corpus.train
    idx = rng.choice(len(pool), size=min(batch_size, len(pool)), replace=False)
    fitted = [fit_length(pool[i].features, corpus.fixed_length, rng) for i in idx]
    batch = Batch(
        features=np.stack([f for f, _ in fitted]),
        mask=np.stack([m for _, m in fitted]),
        tokens=[pool[i].caption_tokens for i in idx],
        tags=np.stack([pool[i].tags for i in idx]),
    )
    objectives = {"contrastive": ("situational", None)}
    if bank is not None:
        objectives["contrastive+classification"] = (
            "intrinsic",
            TagCaptionBank(bank.captions, corpus.vocab.names, corpus.tokenizer),
        )
    caption_seed = int(rng.integers(2**31))

    errors = {}
    for label, (mode, tag_bank) in objectives.items():

        def evaluate(p, mode=mode, tag_bank=tag_bank):
            return total_loss(mode, batch, p, np.random.default_rng(caption_seed), tag_bank).total

        tape = Tape()
        grads = reverse_accumulate(tape, evaluate(tape.leaves_from(params)))
        errors[label] = finite_difference_check(
            lambda p: evaluate({k: Tensor(v) for k, v in p.items()}).item(), params, grads, h
        )
    return errors
