"""Best-of-N reward selection in the joint embedding space.

A candidate generator over planted signatures stands in for a TTS model:
each candidate carries a hidden fidelity ``alpha`` (how strongly its
features express the requested style rather than an off-target style),
which is what a good selector should recover.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .corpus import Corpus
from .encoders import DualEncoder
from .errors import ConfigurationError, DegenerateEmbeddingError, ShapeError
from .seeding import derive_rng
from .templates import PLANTED_CAPTION_TEMPLATE, render_caption


@dataclass
class CandidateSet:
    prompt: str
    candidates: list[np.ndarray]
    hidden_scores: np.ndarray | None = None


@dataclass
class SelectionResult:
    index: int
    scores: np.ndarray
    prompt_norm: float


def best_of_n(cset: CandidateSet, model: DualEncoder) -> SelectionResult:
    """Pick the candidate whose speech embedding is most cosine-similar to the prompt.

    Ties go to the lowest index.
    """
    if not cset.candidates:
        raise ConfigurationError("candidate set is empty")
    for c in cset.candidates:
        if c.ndim != 2 or c.shape[1] != model.feature_dim:
            raise ShapeError(f"candidate of shape {c.shape} does not match feature_dim {model.feature_dim}")
    prompt = model.embed_text([cset.prompt])[0]
    speech = model.embed_speech(cset.candidates)
    p_norm = float(np.linalg.norm(prompt))
    s_norm = np.linalg.norm(speech, axis=1)
    if p_norm == 0.0 or np.any(s_norm == 0.0):
        raise DegenerateEmbeddingError("zero-norm embedding during selection")
    scores = speech @ prompt / (s_norm * p_norm)
    return SelectionResult(index=int(np.argmax(scores)), scores=scores, prompt_norm=p_norm)


def synth_candidates(
    style_tags: Sequence[str],
    quality_spread: tuple[float, float],
    n: int,
    rng: np.random.Generator,
    signatures: np.ndarray,
    tag_names: Sequence[str],
    frames: int = 20,
    noise_sigma: float = 0.1,
    signature_scale: float = 1.0,
    template: str = PLANTED_CAPTION_TEMPLATE,
) -> CandidateSet:
    """Candidates interpolating between the requested style and an off-target one.

    Frames are ``alpha_j * target + (1 - alpha_j) * fallback + noise`` where
    ``target`` is the scaled mean signature of ``style_tags`` and ``fallback``
    is one other tag's signature, drawn once per set and shared by all
    candidates. ``alpha_j ~ uniform(quality_spread)`` is the hidden score.
    Sharing the fallback keeps every candidate equally energetic and equally
    spread, so a scorer with no knowledge of the styles has no preference
    for either end of the fidelity range.
    """
    if not style_tags:
        raise ConfigurationError("style_tags must be nonempty")
    if n < 1:
        raise ConfigurationError("need at least one candidate")
    lookup = {name: i for i, name in enumerate(tag_names)}
    unknown = [t for t in style_tags if t not in lookup]
    if unknown:
        raise ConfigurationError(f"unknown tags: {', '.join(unknown)}")
    lo, hi = quality_spread
    if lo > hi:
        raise ConfigurationError("quality_spread must be (low, high) with low <= high")
    ordered = [t for t in tag_names if t in set(style_tags)]
    target = signature_scale * signatures[[lookup[t] for t in ordered]].mean(axis=0)
    others = [i for i, name in enumerate(tag_names) if name not in set(style_tags)]
    fallback = signature_scale * signatures[others[int(rng.integers(len(others)))]] if others else np.zeros_like(target)
    alphas = rng.uniform(lo, hi, size=n) if hi > lo else np.full(n, float(lo))
    cands = [
        a * target + (1.0 - a) * fallback + noise_sigma * rng.standard_normal((frames, signatures.shape[1]))
        for a in alphas
    ]
    return CandidateSet(prompt=render_caption(template, ordered), candidates=cands, hidden_scores=alphas)


@dataclass
class PairedSummary:
    mean_difference: float
    ci95: tuple[float, float]
    n: int

    @property
    def excludes_zero(self) -> bool:
        return self.ci95[0] > 0 or self.ci95[1] < 0

    def to_dict(self) -> dict:
        return {"mean_difference": self.mean_difference, "ci95": list(self.ci95), "n": self.n}


def paired_summary(diffs: np.ndarray, confidence: float = 0.95) -> PairedSummary:
    """Student-t confidence interval for the mean of paired differences."""
    diffs = np.asarray(diffs, dtype=np.float64)
    mean = float(diffs.mean())
    if diffs.size < 2:
        return PairedSummary(mean, (mean, mean), int(diffs.size))
    sem = float(diffs.std(ddof=1) / np.sqrt(diffs.size))
    if sem == 0.0:
        return PairedSummary(mean, (mean, mean), int(diffs.size))
    half = float(stats.t.ppf(0.5 + confidence / 2, diffs.size - 1)) * sem
    return PairedSummary(mean, (mean - half, mean + half), int(diffs.size))


@dataclass
class GuidanceReport:
    n_candidates: int
    trials_per_tag: int
    seed: int
    per_tag: dict[str, dict[str, float]] = field(default_factory=dict)
    selected_mean: float = 0.0
    baseline_mean: float = 0.0
    trial_level: PairedSummary | None = None
    tag_level: PairedSummary | None = None

    def to_dict(self) -> dict:
        return {
            "n_candidates": self.n_candidates,
            "trials_per_tag": self.trials_per_tag,
            "total_trials": self.trials_per_tag * len(self.per_tag),
            "seed": self.seed,
            "per_tag": self.per_tag,
            "selected_mean": self.selected_mean,
            "baseline_mean": self.baseline_mean,
            "paired_difference_trials": self.trial_level.to_dict() if self.trial_level else None,
            "paired_difference_tags": self.tag_level.to_dict() if self.tag_level else None,
        }


def guidance_experiment(
    model: DualEncoder,
    corpus: Corpus,
    trials_per_tag: int = 100,
    n: int = 10,
    seed: int = 0,
    tags: Sequence[str] | None = None,
    quality_spread: tuple[float, float] = (0.0, 1.0),
) -> GuidanceReport:
    """Compare best-of-N selections with always taking candidate 0.

    Every tag gets ``trials_per_tag`` fresh candidate sets. Two paired
    intervals are reported: one over individual trials, and one over
    per-tag mean differences, which treats the tag as the unit.
    """
    signatures = corpus.signatures()
    if signatures is None:
        raise ConfigurationError("guidance experiment needs a planted corpus (signatures unavailable)")
    planted = corpus.planted["spec"]
    tag_list = list(tags) if tags is not None else corpus.vocab.names
    rng = derive_rng(seed, "guidance")
    report = GuidanceReport(n_candidates=n, trials_per_tag=trials_per_tag, seed=seed)
    all_diffs, tag_diffs, sel_all, base_all = [], [], [], []
    for tag in tag_list:
        selected, baseline = [], []
        for _ in range(trials_per_tag):
            cset = synth_candidates(
                [tag],
                quality_spread,
                n,
                rng,
                signatures,
                corpus.vocab.names,
                frames=planted["frames"],
                noise_sigma=planted["noise_sigma"],
                signature_scale=planted["signature_scale"],
                template=corpus.caption_template or PLANTED_CAPTION_TEMPLATE,
            )
            choice = best_of_n(cset, model).index
            selected.append(cset.hidden_scores[choice])
            baseline.append(cset.hidden_scores[0])
        selected, baseline = np.array(selected), np.array(baseline)
        report.per_tag[tag] = {"selected_mean": float(selected.mean()), "baseline_mean": float(baseline.mean())}
        all_diffs.append(selected - baseline)
        tag_diffs.append(float((selected - baseline).mean()))
        sel_all.append(selected)
        base_all.append(baseline)
    report.selected_mean = float(np.concatenate(sel_all).mean())
    report.baseline_mean = float(np.concatenate(base_all).mean())
    report.trial_level = paired_summary(np.concatenate(all_diffs))
    report.tag_level = paired_summary(np.array(tag_diffs))
    return report
