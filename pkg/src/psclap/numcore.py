"""Small dense-tensor reverse-mode differentiation core.

Values are float64 numpy arrays. Operations on tensors that belong to a
:class:`Tape` are appended to that tape in execution order, so the tape is
topologically sorted by construction and :func:`reverse_accumulate` can
replay adjoints by walking it backwards. Tensors with no tape are plain
constants: the same forward code then runs without recording anything,
which is how inference reuses the training graph code.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.special import expit, ndtr

from .errors import ContractError, DegenerateInputError, ShapeError

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    __slots__ = ("data", "tape", "name")
    # make numpy defer to our reflected operators in mixed expressions
    __array_ufunc__ = None

    def __init__(self, data, tape: Tape | None = None, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


@dataclass
class OpRecord:
    name: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


@dataclass
class Tape:
    """The computation record: leaves plus ops in execution order."""

    ops: list[OpRecord] = field(default_factory=list)
    leaves: list[Tensor] = field(default_factory=list)
    adjoint_calls: int = 0

    def leaf(self, data, name: str) -> Tensor:
        t = Tensor(np.array(data, dtype=np.float64), tape=self, name=name)
        self.leaves.append(t)
        return t

    def leaves_from(self, params: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
        return {k: self.leaf(v, k) for k, v in params.items()}


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _common_tape(inputs: tuple[Tensor, ...]) -> Tape | None:
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ContractError("inputs recorded on different tapes")
            tape = t.tape
    return tape


def _emit(name: str, out: np.ndarray, inputs: tuple[Tensor, ...], backward) -> Tensor:
    tape = _common_tape(inputs)
    result = Tensor(out, tape=tape)
    if tape is not None:
        tape.ops.append(OpRecord(name, inputs, result, backward))
    return result


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise arithmetic -------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit(
        "mul",
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * out / b.data, b.shape),
        )

    return _emit("div", out, (a, b), backward)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _emit("exp", out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    return _emit("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return _emit("sqrt", out, (x,), lambda g: (0.5 * g / out,))


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only where the input is inside."""
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return _emit("clip", np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def softplus(x) -> Tensor:
    """log(1 + e^x), evaluated stably."""
    x = as_tensor(x)
    return _emit("softplus", np.logaddexp(0.0, x.data), (x,), lambda g: (g * expit(x.data),))


def gelu(x) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    x = as_tensor(x)
    cdf = ndtr(x.data)
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
    return _emit("gelu", x.data * cdf, (x,), lambda g: (g * (cdf + x.data * pdf),))


# -- reductions and linear algebra -------------------------------------------


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _emit("sum", out, (x,), backward)


def tmean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def logsumexp(x, axis: int) -> Tensor:
    """log(sum(exp(x))) along ``axis`` with the max-shift trick."""
    x = as_tensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    shifted = np.exp(x.data - m)
    total = shifted.sum(axis=axis, keepdims=True)
    out = (m + np.log(total)).squeeze(axis)
    softmax = shifted / total
    return _emit("logsumexp", out, (x,), lambda g: (np.expand_dims(g, axis) * softmax,))


def matmul(a, b) -> Tensor:
    """``a @ b`` where ``b`` is 2-D and ``a`` is a vector, a matrix or a stack of matrices."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _emit("matmul", a.data @ b.data, (a, b), backward)


def transpose(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {x.shape}")
    return _emit("transpose", x.data.T, (x,), lambda g: (g.T,))


# -- network building blocks --------------------------------------------------


def layer_norm(v, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis with population variance, then scale and shift."""
    v, gamma, beta = as_tensor(v), as_tensor(gamma), as_tensor(beta)
    n = v.shape[-1]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeError(f"layer_norm: input width {n}, gamma {gamma.shape}, beta {beta.shape}")
    if eps <= 0:
        raise ContractError("layer_norm eps must be positive")
    centered = v.data - v.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        dxhat = g * gamma.data
        gv = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return gv, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _emit("layer_norm", gamma.data * xhat + beta.data, (v, gamma, beta), backward)


def masked_mean_pool(h, mask) -> Tensor:
    """Mean over the frame axis (second to last) counting only frames where ``mask`` is true.

    ``h`` is ``(frames, dim)`` or ``(batch, frames, dim)``; ``mask`` drops the
    trailing ``dim`` axis.
    """
    h = as_tensor(h)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != h.shape[:-1]:
        raise ShapeError(f"mask shape {mask.shape} does not match frames {h.shape[:-1]}")
    counts = mask.sum(axis=-1, keepdims=True)
    if np.any(counts == 0):
        raise DegenerateInputError("masked_mean_pool: every frame is masked")
    weights = mask / counts
    out = (h.data * weights[..., None]).sum(axis=-2)
    return _emit("masked_mean_pool", out, (h,), lambda g: (g[..., None, :] * weights[..., None],))


# -- reverse accumulation -----------------------------------------------------


def reverse_accumulate(tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to every leaf on ``tape``.

    Each recorded op that contributes to the loss has its adjoint run exactly
    once. Leaves that the loss does not depend on get zero gradients.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward seed must be a scalar, got shape {loss.shape}")
    if loss.tape is not tape:
        raise ContractError("loss was not recorded on this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for op in reversed(tape.ops):
        g = grads.pop(id(op.output), None)
        if g is None:
            continue
        tape.adjoint_calls += 1
        for inp, gi in zip(op.inputs, op.backward(g)):
            if gi is None or inp.tape is None:
                continue
            key = id(inp)
            grads[key] = grads[key] + gi if key in grads else gi
    return {
        leaf.name: grads.get(id(leaf), np.zeros_like(leaf.data)).reshape(leaf.shape)
        for leaf in tape.leaves
    }


def finite_difference_check(
    objective: Callable[[dict[str, np.ndarray]], float],
    params: Mapping[str, np.ndarray],
    analytic: Mapping[str, np.ndarray],
    h: float = 1e-6,
) -> float:
    """Max relative error between ``analytic`` gradients and central differences.

    Every coordinate of every parameter is perturbed. The relative error uses
    ``max(|analytic|, |numeric|, 1e-12)`` as denominator.
    """
    if h <= 0:
        raise ContractError("finite-difference step must be positive")
    work = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    worst = 0.0
    for name, value in work.items():
        flat = value.reshape(-1)
        grad = np.asarray(analytic[name], dtype=np.float64).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = objective(work)
            flat[i] = orig - h
            f_minus = objective(work)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            denom = max(abs(grad[i]), abs(numeric), 1e-12)
            worst = max(worst, abs(grad[i] - numeric) / denom)
    return worst


# -- optimisation -------------------------------------------------------------


@dataclass
class AdamState:
    first_moment: dict[str, np.ndarray]
    second_moment: dict[str, np.ndarray]
    step_count: int = 0
    learning_rate: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, params: Mapping[str, np.ndarray], learning_rate: float = 1e-5, **kw) -> AdamState:
        return cls(
            first_moment={k: np.zeros_like(v) for k, v in params.items()},
            second_moment={k: np.zeros_like(v) for k, v in params.items()},
            learning_rate=learning_rate,
            **kw,
        )


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update. Inputs are left untouched."""
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    new_params, m_new, v_new = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape or state.first_moment[name].shape != p.shape:
            raise ShapeError(f"adam_step: shape mismatch for {name!r}: param {p.shape}, grad {g.shape}")
        m = b1 * state.first_moment[name] + (1.0 - b1) * g
        v = b2 * state.second_moment[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_params[name] = p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
        m_new[name], v_new[name] = m, v
    new_state = AdamState(
        first_moment=m_new,
        second_moment=v_new,
        step_count=t,
        learning_rate=state.learning_rate,
        beta1=b1,
        beta2=b2,
        epsilon=state.epsilon,
    )
    return new_params, new_state
