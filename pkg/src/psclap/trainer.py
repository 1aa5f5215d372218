"""Training loop, run configuration and checkpoints."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from .corpus import Corpus, ParaphraseBank, class_balanced_weights, fit_length, upsample_balance
from .corpus.model import TagVocabulary, Tokenizer
from .corpus.sampling import WeightedSampler
from .encoders import DualEncoder, ModelConfig, init_params, param_shapes
from .errors import CheckpointError, ConfigurationError, TrainingDivergedError
from .losses import MODES, TAU_MAX, TAU_MIN, Batch, TagCaptionBank, total_loss
from .numcore import AdamState, Tape, adam_step, reverse_accumulate
from .seeding import derive_rng

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"PSCLAPCK"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    mode: str = "intrinsic"
    steps: int = 4500
    batch_size: int = 32
    learning_rate: float = 1e-5
    tau_init: float = 0.07
    tau_min: float = TAU_MIN
    tau_max: float = TAU_MAX
    class_balanced: bool = False
    weight_aggregate: str = "mean"
    multitask: bool = True
    classify_weight: float = 1.0
    seed: int = 0
    embed_dim: int = 32
    backbone_dim: int = 0
    hidden_dim: int = 0
    eval_every: int = 0
    corpus: str = ""
    paraphrases: str = ""
    checkpoint_path: str = ""
    trace_path: str = ""

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigurationError(f"mode: must be one of {', '.join(MODES)} (got {self.mode!r})")
        if self.steps < 1:
            raise ConfigurationError("steps: must be >= 1")
        if self.batch_size < 2:
            raise ConfigurationError("batch_size: must be >= 2 (a single pair has zero contrastive loss)")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate: must be positive")
        if not 0 < self.tau_min <= self.tau_init <= self.tau_max:
            raise ConfigurationError("tau_init: must lie within [tau_min, tau_max]")
        if self.embed_dim < 1 or self.backbone_dim < 0 or self.hidden_dim < 0:
            raise ConfigurationError("embed_dim/backbone_dim/hidden_dim: must be positive (0 = embed_dim)")
        if self.class_balanced and self.mode == "combined":
            raise ConfigurationError("class_balanced: not supported in combined mode")

    def model_config(self, corpus: Corpus) -> ModelConfig:
        return ModelConfig(
            feature_dim=corpus.feature_dim,
            vocab_size=len(corpus.tokenizer),
            embed_dim=self.embed_dim,
            backbone_dim=self.backbone_dim or None,
            hidden_dim=self.hidden_dim or None,
            tau_init=self.tau_init,
        )


@dataclass
class TraceRow:
    step: int
    contrastive: float
    classification: float | None
    tau: float
    total: float

    def line(self) -> str:
        cls_term = "-" if self.classification is None else repr(self.classification)
        return f"{self.step}\t{self.contrastive!r}\t{cls_term}\t{self.tau!r}\t{self.total!r}"


TRACE_HEADER = "step\tcontrastive\tclassification\ttau\ttotal"


def write_trace(rows: list[TraceRow], path: str | Path, append: bool = False) -> None:
    path = Path(path)
    fresh = not append or not path.exists()
    with open(path, "w" if fresh else "a") as f:
        if fresh:
            f.write(TRACE_HEADER + "\n")
        for r in rows:
            f.write(r.line() + "\n")


@dataclass
class Checkpoint:
    config: dict
    model_config: dict
    params: dict[str, np.ndarray]
    adam: AdamState
    step: int
    rng_state: dict
    tokenizer: list[str]
    vocabulary: list[dict]
    extra: dict = field(default_factory=dict)

    @property
    def tau(self) -> float:
        return float(np.exp(self.params["log_tau"]))

    def model(self) -> DualEncoder:
        return DualEncoder(self.params, Tokenizer(self.tokenizer))

    def vocab(self) -> TagVocabulary:
        return TagVocabulary.from_records(self.vocabulary)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    """Header JSON plus raw little-endian float64 tensors; bit-exact round trip."""
    groups = [("param", ckpt.params), ("adam_m", ckpt.adam.first_moment), ("adam_v", ckpt.adam.second_moment)]
    index, blobs, offset = [], [], 0
    for group, tensors in groups:
        for name, arr in tensors.items():
            raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            index.append({"group": group, "name": name, "shape": list(np.shape(arr)), "offset": offset})
            blobs.append(raw)
            offset += len(raw)
    meta = {
        "config": ckpt.config,
        "model_config": ckpt.model_config,
        "step": ckpt.step,
        "rng_state": ckpt.rng_state,
        "tau": ckpt.tau,
        "adam": {
            "step_count": ckpt.adam.step_count,
            "learning_rate": ckpt.adam.learning_rate,
            "beta1": ckpt.adam.beta1,
            "beta2": ckpt.adam.beta2,
            "epsilon": ckpt.adam.epsilon,
        },
        "tokenizer": ckpt.tokenizer,
        "vocabulary": ckpt.vocabulary,
        "extra": ckpt.extra,
        "tensors": index,
        "data_bytes": offset,
    }
    head = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(head)))
        f.write(head)
        for b in blobs:
            f.write(b)


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint {path} does not exist") from None
    n = len(CHECKPOINT_MAGIC)
    if raw[:n] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic bytes)")
    if len(raw) < n + 12:
        raise CheckpointError(f"{path}: truncated header")
    version, head_len = struct.unpack_from("<IQ", raw, n)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    start = n + 12
    try:
        meta = json.loads(raw[start : start + head_len])
    except (json.JSONDecodeError, UnicodeDecodeError):
        raise CheckpointError(f"{path}: truncated or corrupt header") from None
    data = raw[start + head_len :]
    if len(data) != meta["data_bytes"]:
        raise CheckpointError(f"{path}: truncated tensor data ({len(data)} of {meta['data_bytes']} bytes)")
    groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "adam_m": {}, "adam_v": {}}
    for entry in meta["tensors"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=entry["offset"])
        groups[entry["group"]][entry["name"]] = arr.astype(np.float64).reshape(entry["shape"])
    a = meta["adam"]
    adam = AdamState(
        first_moment=groups["adam_m"],
        second_moment=groups["adam_v"],
        step_count=a["step_count"],
        learning_rate=a["learning_rate"],
        beta1=a["beta1"],
        beta2=a["beta2"],
        epsilon=a["epsilon"],
    )
    return Checkpoint(
        config=meta["config"],
        model_config=meta["model_config"],
        params=groups["param"],
        adam=adam,
        step=meta["step"],
        rng_state=meta["rng_state"],
        tokenizer=meta["tokenizer"],
        vocabulary=meta["vocabulary"],
        extra=meta.get("extra", {}),
    )


def initial_checkpoint(config: TrainConfig, corpus: Corpus) -> Checkpoint:
    """Step-0 state: freshly initialised parameters (also the random-projection baseline)."""
    config.validate()
    mcfg = config.model_config(corpus)
    params = init_params(mcfg, derive_rng(config.seed, "init"))
    return Checkpoint(
        config=config.to_dict(),
        model_config=mcfg.to_dict(),
        params=params,
        adam=AdamState.fresh(params, learning_rate=config.learning_rate),
        step=0,
        rng_state=derive_rng(config.seed, "train").bit_generator.state,
        tokenizer=corpus.tokenizer.words,
        vocabulary=corpus.vocab.to_records(),
    )


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    trace: list[TraceRow]
    params_with_gradient: set[str]


def _check_compatible(config: TrainConfig, corpus: Corpus) -> None:
    if corpus.kind != config.mode:
        raise ConfigurationError(f"mode {config.mode!r} cannot train on a {corpus.kind!r} corpus")


def train(
    config: TrainConfig,
    corpus: Corpus,
    bank: ParaphraseBank | None = None,
    resume: Checkpoint | None = None,
    on_step: Callable[[TraceRow], None] | None = None,
) -> TrainResult:
    """Run training up to ``config.steps`` total steps, optionally resuming.

    Each step draws a batch with replacement, crops/pads clips to the
    corpus's fixed length, evaluates the mode's objective, backpropagates,
    and applies Adam to every parameter including the log-temperature.
    """
    config.validate()
    _check_compatible(config, corpus)
    ckpt = resume if resume is not None else initial_checkpoint(config, corpus)
    if set(ckpt.params) != set(param_shapes(config.model_config(corpus))):
        raise CheckpointError("checkpoint parameters do not match the configured model")

    uses_classifier = config.mode == "intrinsic" and config.multitask
    tag_bank = None
    if uses_classifier:
        if bank is None:
            raise ConfigurationError("paraphrases: intrinsic mode with multitask needs a paraphrase bank")
        tag_bank = TagCaptionBank(bank.captions, corpus.vocab.names, corpus.tokenizer)

    if config.mode == "combined":
        stream = upsample_balance(
            [e for e in corpus.train if e.source == "intrinsic"],
            [e for e in corpus.train if e.source == "situational"],
        )
        pool, sampler = stream.examples, stream
    else:
        pool = corpus.train
        weights = (
            class_balanced_weights(pool, corpus.vocab, config.weight_aggregate) if config.class_balanced else None
        )
        sampler = WeightedSampler(len(pool), weights)

    rng = np.random.default_rng()
    rng.bit_generator.state = ckpt.rng_state
    params, adam = dict(ckpt.params), ckpt.adam
    log_tau_lo, log_tau_hi = np.log(config.tau_min), np.log(config.tau_max)
    length = corpus.fixed_length
    trace: list[TraceRow] = []
    touched: set[str] = set()

    for step in range(ckpt.step + 1, config.steps + 1):
        idx = sampler.draw(config.batch_size, rng)
        examples = [pool[i] for i in idx]
        fitted = [fit_length(ex.features, length, rng) for ex in examples]
        batch = Batch(
            features=np.stack([f for f, _ in fitted]),
            mask=np.stack([m for _, m in fitted]),
            tokens=[ex.caption_tokens for ex in examples],
            tags=np.stack([ex.tags for ex in examples]),
        )
        tape = Tape()
        leaves = tape.leaves_from(params)
        terms = total_loss(
            config.mode,
            batch,
            leaves,
            rng,
            tag_bank,
            multitask=config.multitask,
            classify_weight=config.classify_weight,
            tau_bounds=(config.tau_min, config.tau_max),
        )
        total = terms.total.item()
        if not np.isfinite(total):
            raise TrainingDivergedError(f"non-finite loss {total} at step {step}")
        grads = reverse_accumulate(tape, terms.total)
        touched.update(k for k, g in grads.items() if np.any(g != 0))
        params, adam = adam_step(params, grads, adam)
        params["log_tau"] = np.clip(params["log_tau"], log_tau_lo, log_tau_hi)

        row = TraceRow(
            step=step,
            contrastive=terms.contrastive.item(),
            classification=None if terms.classification is None else terms.classification.item(),
            tau=terms.tau,
            total=total,
        )
        trace.append(row)
        if on_step is not None:
            on_step(row)
        if config.eval_every and step % config.eval_every == 0 and corpus.prompts:
            from .eval import evaluate_retrieval

            result = evaluate_retrieval(DualEncoder(params, corpus.tokenizer), corpus)
            log.info("step %d loss %.4f tau %.4f eval R@1 %.2f", step, total, terms.tau, result.recall[1])

    final = Checkpoint(
        config=config.to_dict(),
        model_config=ckpt.model_config,
        params=params,
        adam=adam,
        step=max(ckpt.step, config.steps),
        rng_state=rng.bit_generator.state,
        tokenizer=corpus.tokenizer.words,
        vocabulary=corpus.vocab.to_records(),
    )
    return TrainResult(final, trace, touched)
