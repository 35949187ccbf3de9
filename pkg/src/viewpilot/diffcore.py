"""Minimal differentiable plumbing: parameters, tanh RNN cell, affine heads,
softmax, SGD with a step-decay schedule, finite-difference gradient checks,
and checkpoint files.

Everything is float64 numpy. Backward passes are hand-derived; there is no
general autodiff. Forward functions accept either a single vector or a
batch-first 2-D array; backward helpers expect 2-D batches.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, InvalidInput, NumericsError, StateError, VersionError

CHECKPOINT_FORMAT_VERSION = 1


class ParamTensor:
    """A named trainable array with a same-shape gradient accumulator."""

    __slots__ = ("name", "values", "grad")

    def __init__(self, name: str, values: np.ndarray):
        self.name = name
        self.values = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(self.values)):
            raise NumericsError(f"parameter {name} has non-finite entries")
        self.grad = np.zeros_like(self.values)

    @property
    def shape(self):
        return self.values.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"ParamTensor({self.name!r}, shape={self.values.shape})"


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Uniform in [-s, s] with s = 1/sqrt(fan_in)."""
    s = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-s, s, size=shape)


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax (max-subtracted); works on 1-D or 2-D input."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


class TanhRnnCell:
    """Single-layer Elman cell: h = tanh(W_xh x + W_hh h_prev + b)."""

    def __init__(self, name: str, input_dim: int, hidden_dim: int, rng: np.random.Generator):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.w_xh = ParamTensor(f"{name}.w_xh", uniform_init(rng, (hidden_dim, input_dim), input_dim))
        self.w_hh = ParamTensor(f"{name}.w_hh", uniform_init(rng, (hidden_dim, hidden_dim), hidden_dim))
        self.b = ParamTensor(f"{name}.b", np.zeros(hidden_dim))

    def params(self) -> list[ParamTensor]:
        return [self.w_xh, self.w_hh, self.b]

    def step(self, x: np.ndarray, h_prev: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.input_dim or h_prev.shape[-1] != self.hidden_dim:
            raise InvalidInput(
                f"cell expects input {self.input_dim} / hidden {self.hidden_dim}, "
                f"got {x.shape[-1]} / {h_prev.shape[-1]}"
            )
        return np.tanh(x @ self.w_xh.values.T + h_prev @ self.w_hh.values.T + self.b.values)

    def backward_step(self, dh: np.ndarray, x: np.ndarray, h_prev: np.ndarray, h: np.ndarray):
        """Accumulate parameter grads for one recorded step; returns (dx, dh_prev).

        All arguments are (B, dim) batches saved from the forward pass.
        """
        dpre = dh * (1.0 - h * h)
        self.w_xh.grad += dpre.T @ x
        self.w_hh.grad += dpre.T @ h_prev
        self.b.grad += dpre.sum(axis=0)
        return dpre @ self.w_xh.values, dpre @ self.w_hh.values


def rnn_cell_forward(x: np.ndarray, h_prev: np.ndarray, cell: TanhRnnCell) -> np.ndarray:
    """Functional alias for :meth:`TanhRnnCell.step`."""
    return cell.step(x, h_prev)


class Linear:
    """Bias-free affine head: y = W x.

    ``gain`` scales the init range; heads whose outputs live on a larger
    scale than the (-1, 1) hidden units (e.g. steering in degrees) need it
    to express useful magnitudes from the start.
    """

    def __init__(
        self, name: str, input_dim: int, output_dim: int, rng: np.random.Generator,
        gain: float = 1.0,
    ):
        self.input_dim = input_dim
        self.output_dim = output_dim
        self.w = ParamTensor(
            f"{name}.w", gain * uniform_init(rng, (output_dim, input_dim), input_dim)
        )

    def params(self) -> list[ParamTensor]:
        return [self.w]

    def apply(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.input_dim:
            raise InvalidInput(f"linear expects input {self.input_dim}, got {x.shape[-1]}")
        return x @ self.w.values.T

    def backward(self, dy: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Accumulate the weight grad for one recorded apply; returns dx."""
        self.w.grad += dy.T @ x
        return dy @ self.w.values


class RnnSequenceRecord:
    """The unrolled forward record of a cell over one window: inputs and
    hidden states per step, consumed exactly once by :func:`bptt_backward`."""

    def __init__(self, cell: TanhRnnCell, h0: np.ndarray):
        self.cell = cell
        self.xs: list[np.ndarray] = []
        self.hs: list[np.ndarray] = [h0]
        self.consumed = False

    def step(self, x: np.ndarray) -> np.ndarray:
        h = self.cell.step(x, self.hs[-1])
        self.xs.append(x)
        self.hs.append(h)
        return h

    def __len__(self):
        return len(self.xs)


def bptt_backward(record: RnnSequenceRecord, upstream: Sequence[np.ndarray]) -> np.ndarray:
    """Backpropagate per-step hidden-state gradients through a recorded
    unroll, accumulating into the cell's parameter grads.

    ``upstream[t]`` is dLoss/dh_t from outside the recurrence. Returns
    dLoss/dh0. Raises StateError if there is nothing recorded or the
    record was already consumed.
    """
    if record.consumed or len(record) == 0:
        raise StateError("bptt_backward requires a fresh forward record")
    record.consumed = True
    if len(upstream) != len(record):
        raise InvalidInput(f"expected {len(record)} upstream grads, got {len(upstream)}")
    carry = np.zeros_like(record.hs[0])
    for t in reversed(range(len(record))):
        dh = upstream[t] + carry
        _, carry = record.cell.backward_step(dh, record.xs[t], record.hs[t], record.hs[t + 1])
    return carry


@dataclass(frozen=True)
class LrSchedule:
    """Step-decay learning rate: initial * decay^(epoch // period)."""

    initial: float = 1e-5
    decay: float = 0.9
    period: int = 50

    def __post_init__(self):
        if self.initial <= 0 or self.decay <= 0 or self.period <= 0:
            raise InvalidInput("learning-rate schedule fields must be positive")

    def lr(self, epoch: int) -> float:
        return self.initial * self.decay ** (epoch // self.period)


def global_grad_norm(params: Iterable[ParamTensor]) -> float:
    return float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params)))


def clip_gradients(params: Sequence[ParamTensor], max_norm: float) -> float:
    """Scale all gradients down to a global norm of ``max_norm`` if exceeded."""
    norm = global_grad_norm(params)
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            p.grad *= scale
    return norm


def sgd_step(params: Sequence[ParamTensor], lr: float, clip_norm: float | None = None) -> None:
    """p <- p - lr * grad for every parameter, then reset grads to zero.

    Raises NumericsError (before touching any values) if any gradient is
    non-finite.
    """
    if lr <= 0:
        raise InvalidInput(f"learning rate must be positive, got {lr}")
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NumericsError(f"non-finite gradient in {p.name}")
    if clip_norm is not None:
        clip_gradients(params, clip_norm)
    for p in params:
        p.values -= lr * p.grad
        p.zero_grad()


@dataclass
class GradCheckResult:
    """Per-parameter maximum relative error between analytic and numeric grads."""

    max_rel_error: dict[str, float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(v < self.tolerance for v in self.max_rel_error.values())

    @property
    def worst(self) -> tuple[str, float]:
        if not self.max_rel_error:
            return ("", 0.0)
        name = max(self.max_rel_error, key=self.max_rel_error.get)
        return name, self.max_rel_error[name]


def gradient_check(
    loss_fn,
    params: Sequence[ParamTensor],
    tolerance: float = 1e-4,
    step: float = 1e-5,
    denom_floor: float = 1e-3,
) -> GradCheckResult:
    """Compare the analytic grads already stored in ``params`` against
    central finite differences of ``loss_fn``.

    ``loss_fn()`` must be a deterministic scalar function of the current
    parameter values with no gradient side effects. The relative error
    denominator is floored at ``denom_floor`` so that entries whose true
    gradient is far below the finite-difference noise floor compare in
    absolute terms.
    """
    analytic = {p.name: p.grad.copy() for p in params}
    errors: dict[str, float] = {}
    for p in params:
        worst = 0.0
        flat = p.values.reshape(-1)
        ref = analytic[p.name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = loss_fn()
            flat[i] = orig - step
            f_minus = loss_fn()
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericsError(f"non-finite loss while probing {p.name}[{i}]")
            numeric = (f_plus - f_minus) / (2.0 * step)
            denom = max(abs(ref[i]), abs(numeric), denom_floor)
            worst = max(worst, abs(ref[i] - numeric) / denom)
        errors[p.name] = worst
    return GradCheckResult(errors, tolerance)


# ---------------------------------------------------------------------------
# Checkpoints: one JSON document per file. Floats serialize via repr and
# therefore round-trip bit-exactly.
# ---------------------------------------------------------------------------


def params_digest(params: Sequence[ParamTensor]) -> str:
    h = hashlib.sha256()
    for p in sorted(params, key=lambda p: p.name):
        h.update(p.name.encode())
        h.update(np.ascontiguousarray(p.values).tobytes())
    return h.hexdigest()[:12]


def save_checkpoint(
    path,
    arch: dict,
    epoch: int,
    schedule: LrSchedule,
    rng_record: dict,
    params: Sequence[ParamTensor],
) -> None:
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "arch": arch,
        "epoch": epoch,
        "lr_schedule": {"initial": schedule.initial, "decay": schedule.decay, "period": schedule.period},
        "rng": rng_record,
        "digest": params_digest(params),
        "params": {p.name: {"shape": list(p.shape), "values": p.values.reshape(-1).tolist()} for p in params},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


@dataclass
class Checkpoint:
    arch: dict
    epoch: int
    schedule: LrSchedule
    rng_record: dict
    params: dict[str, np.ndarray]
    digest: str


def load_checkpoint(path, expect_arch: dict | None = None) -> Checkpoint:
    """Load a checkpoint; rejects unknown format versions and, when
    ``expect_arch`` is given, any architecture mismatch."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise VersionError(f"unsupported checkpoint format version {doc.get('format_version')}")
    arch = doc["arch"]
    if expect_arch is not None and arch != expect_arch:
        raise ConfigError(f"checkpoint architecture {arch} does not match expected {expect_arch}")
    sched = LrSchedule(**doc["lr_schedule"])
    params = {}
    for name, rec in doc["params"].items():
        values = np.array(rec["values"], dtype=np.float64).reshape(rec["shape"])
        if not np.all(np.isfinite(values)):
            raise NumericsError(f"checkpoint parameter {name} has non-finite entries")
        params[name] = values
    return Checkpoint(arch, doc["epoch"], sched, doc["rng"], params, doc.get("digest", ""))
