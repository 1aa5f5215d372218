"""Speech and text encoders mapping into a shared embedding space.

Both towers are a desk-scale trainable backbone followed by the same
projection-head architecture::

    layer_norm(W2 . gelu(W1 . h + b1) + b2)

The speech backbone is a per-frame linear map whose outputs are mean-pooled
over unpadded frames. The text backbone is a token-embedding table; the
sequence summary at the CLS position is the CLS row plus the mean of the
remaining token rows, so with this backbone permuting non-CLS tokens leaves
the embedding unchanged.

Forward functions take a mapping of :class:`~psclap.numcore.Tensor` so the
same code builds a recorded graph during training (tape leaves) and runs as
plain array math at inference (constant tensors).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from . import numcore as nc
from .errors import ConfigurationError, ContractError, ShapeError, VocabularyError
from .numcore import Tensor

CLS_ID = 0
UNK_ID = 1
LN_EPS = 1e-5

Params = dict[str, np.ndarray]


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int
    vocab_size: int
    embed_dim: int = 32
    backbone_dim: int | None = None
    hidden_dim: int | None = None
    tau_init: float = 0.07

    def __post_init__(self):
        for name in ("feature_dim", "vocab_size", "embed_dim"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"model.{name} must be >= 1")
        if self.vocab_size <= CLS_ID:
            raise ConfigurationError("vocabulary must contain the CLS token")
        if self.tau_init <= 0:
            raise ConfigurationError("model.tau_init must be positive")

    @property
    def backbone_width(self) -> int:
        return self.backbone_dim or self.embed_dim

    @property
    def hidden_width(self) -> int:
        return self.hidden_dim or self.embed_dim

    def to_dict(self) -> dict:
        return asdict(self)


def head_shapes(prefix: str, in_dim: int, hidden: int, out: int) -> dict[str, tuple[int, ...]]:
    return {
        f"{prefix}.W1": (in_dim, hidden),
        f"{prefix}.b1": (hidden,),
        f"{prefix}.W2": (hidden, out),
        f"{prefix}.b2": (out,),
        f"{prefix}.ln_gamma": (out,),
        f"{prefix}.ln_beta": (out,),
    }


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d_b, d_h, d_e = cfg.backbone_width, cfg.hidden_width, cfg.embed_dim
    shapes = {"speech.frame_proj": (cfg.feature_dim, d_b)}
    shapes.update(head_shapes("speech.head", d_b, d_h, d_e))
    shapes["text.token_embedding"] = (cfg.vocab_size, d_b)
    shapes.update(head_shapes("text.head", d_b, d_h, d_e))
    shapes["log_tau"] = ()
    return shapes


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> Params:
    """Glorot-uniform matrices, zero biases, unit/zero layer-norm affine, log(tau_init)."""
    params: Params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if name == "log_tau":
            params[name] = np.array(np.log(cfg.tau_init))
        elif leaf == "ln_gamma":
            params[name] = np.ones(shape)
        elif leaf in ("b1", "b2", "ln_beta"):
            params[name] = np.zeros(shape)
        else:
            a = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-a, a, size=shape)
    return params


def project(h, p: Mapping[str, Tensor], prefix: str) -> Tensor:
    """Projection head: two linear maps around a GELU, then layer norm."""
    h = nc.as_tensor(h)
    w1 = p[f"{prefix}.W1"]
    if h.shape[-1] != w1.shape[0]:
        raise ShapeError(f"{prefix}: input width {h.shape[-1]} != {w1.shape[0]}")
    z = nc.gelu(h @ w1 + p[f"{prefix}.b1"])
    z = z @ p[f"{prefix}.W2"] + p[f"{prefix}.b2"]
    return nc.layer_norm(z, p[f"{prefix}.ln_gamma"], p[f"{prefix}.ln_beta"], LN_EPS)


def encode_speech(features, mask, p: Mapping[str, Tensor]) -> Tensor:
    """Embed clips: per-frame backbone, masked mean pool, projection head.

    ``features`` is ``(frames, feature_dim)`` or ``(batch, frames, feature_dim)``.
    """
    features = nc.as_tensor(features)
    proj = p["speech.frame_proj"]
    if features.shape[-1] != proj.shape[0]:
        raise ShapeError(
            f"speech features have dim {features.shape[-1]}, model expects {proj.shape[0]}"
        )
    hidden = features @ proj
    pooled = nc.masked_mean_pool(hidden, mask)
    return project(pooled, p, "speech.head")


def bag_matrix(token_seqs: Sequence[Sequence[int]], vocab_size: int) -> np.ndarray:
    """Row b holds the weights that turn the embedding table into caption b's CLS summary."""
    out = np.zeros((len(token_seqs), vocab_size))
    for b, seq in enumerate(token_seqs):
        if len(seq) == 0 or seq[0] != CLS_ID:
            raise ContractError("token sequence must start with the CLS token")
        for tok in seq:
            if not 0 <= tok < vocab_size:
                raise VocabularyError(f"token id {tok} outside vocabulary of size {vocab_size}")
        out[b, CLS_ID] += 1.0
        rest = seq[1:]
        for tok in rest:
            out[b, tok] += 1.0 / len(rest)
    return out


def encode_text(token_seqs: Sequence[Sequence[int]], p: Mapping[str, Tensor]) -> Tensor:
    """Embed a batch of tokenized captions (each beginning with CLS)."""
    table = p["text.token_embedding"]
    weights = bag_matrix(token_seqs, table.shape[0])
    return project(nc.Tensor(weights) @ table, p, "text.head")


def constants(params: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(v) for k, v in params.items()}


class DualEncoder:
    """Inference wrapper: frozen parameters plus the tokenizer that feeds them."""

    def __init__(self, params: Mapping[str, np.ndarray], tokenizer):
        self.params = dict(params)
        self.tokenizer = tokenizer
        self._p = constants(self.params)

    @property
    def feature_dim(self) -> int:
        return self.params["speech.frame_proj"].shape[0]

    @property
    def tau(self) -> float:
        return float(np.exp(self.params["log_tau"]))

    def embed_speech(self, clips: Sequence[np.ndarray]) -> np.ndarray:
        """Embed variable-length clips by zero-padding to the longest and masking."""
        if len(clips) == 0:
            return np.zeros((0, self.params["speech.head.ln_gamma"].shape[0]))
        longest = max(c.shape[0] for c in clips)
        batch = np.zeros((len(clips), longest, self.feature_dim))
        mask = np.zeros((len(clips), longest), dtype=bool)
        for i, c in enumerate(clips):
            if c.ndim != 2 or c.shape[1] != self.feature_dim:
                raise ShapeError(f"clip {i} has shape {c.shape}, expected (frames, {self.feature_dim})")
            batch[i, : c.shape[0]] = c
            mask[i, : c.shape[0]] = True
        return encode_speech(batch, mask, self._p).data

    def embed_text(self, captions: Sequence[str]) -> np.ndarray:
        return encode_text([self.tokenizer.encode(c) for c in captions], self._p).data
