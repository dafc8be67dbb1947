"""Models, local SGD, and the two aggregation rules.

Two small classifiers with hand-written gradients: softmax regression and a
one-hidden-layer tanh network.  Loss is the summed (not averaged) cross
entropy of a batch; a local step scales the gradient by lr / batch_size, so
the update equals plain mean-loss SGD while keeping the summed form the
aggregation algebra is written in.

Group-level aggregation weights each member by its data size; top-level
aggregation is the plain mean of the group models.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    EmptySetError,
    InvalidConfigError,
    LengthMismatchError,
    MalformedCheckpointError,
    NonFiniteLossError,
    ShapeMismatchError,
    ZeroTotalError,
)

_KINDS = ("softmax", "mlp")
_CHECKPOINT_FORMAT = "fedgs-checkpoint-v1"


@dataclass(eq=False)
class ModelSpec:
    """Architecture record: family, input width, class count, hidden width."""

    kind: str
    in_dim: int
    classes: int
    hidden: int = 0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise InvalidConfigError(f"kind must be one of {_KINDS}, got {self.kind!r}")
        if self.in_dim < 1 or self.classes < 2:
            raise InvalidConfigError("need in_dim >= 1 and classes >= 2")
        if self.kind == "mlp" and self.hidden < 1:
            raise InvalidConfigError("mlp needs hidden >= 1")
        if self.kind == "softmax":
            self.hidden = 0

    def shapes(self) -> list:
        if self.kind == "softmax":
            return [(self.in_dim, self.classes), (self.classes,)]
        return [
            (self.in_dim, self.hidden),
            (self.hidden,),
            (self.hidden, self.classes),
            (self.classes,),
        ]


@dataclass(eq=False)
class ModelParams:
    spec: ModelSpec
    arrays: list

    def __post_init__(self):
        expected = self.spec.shapes()
        if len(self.arrays) != len(expected):
            raise ShapeMismatchError(f"expected {len(expected)} arrays, got {len(self.arrays)}")
        fixed = []
        for arr, shape in zip(self.arrays, expected):
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != shape:
                raise ShapeMismatchError(f"array shape {arr.shape} does not match spec shape {shape}")
            fixed.append(arr)
        self.arrays = fixed

    def copy(self) -> "ModelParams":
        return ModelParams(self.spec, [a.copy() for a in self.arrays])


@dataclass(eq=False)
class Batch:
    """One training batch: features (n, d) and integer labels (n,)."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ShapeMismatchError(f"features must be (n, d) with n >= 1, got {x.shape}")
        if y.shape != (x.shape[0],):
            raise ShapeMismatchError(f"labels shape {y.shape} does not match {x.shape[0]} rows")
        if not np.issubdtype(y.dtype, np.integer):
            raise ShapeMismatchError("labels must be integers")
        if np.any(y < 0):
            raise ShapeMismatchError("labels must be non-negative")
        self.x, self.y = x, y.astype(np.int64)

    def __len__(self) -> int:
        return int(self.x.shape[0])

    def label_histogram(self, classes: int) -> np.ndarray:
        return np.bincount(self.y, minlength=classes).astype(np.int64)


def init_params(spec: ModelSpec, rng: np.random.Generator) -> ModelParams:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases."""
    arrays = []
    for shape in spec.shapes():
        if len(shape) == 2:
            bound = 1.0 / np.sqrt(shape[0])
            arrays.append(rng.uniform(-bound, bound, size=shape))
        else:
            arrays.append(np.zeros(shape))
    return ModelParams(spec, arrays)


def _forward(params: ModelParams, x: np.ndarray):
    """Returns (logits, hidden activation or None)."""
    if params.spec.kind == "softmax":
        W, b = params.arrays
        return x @ W + b, None
    W1, b1, W2, b2 = params.arrays
    h = np.tanh(x @ W1 + b1)
    return h @ W2 + b2, h


def _log_softmax(logits: np.ndarray):
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return shifted - log_norm


def loss_and_grad(params: ModelParams, batch: Batch):
    """Summed cross-entropy loss and its gradient for every parameter array."""
    if batch.x.shape[1] != params.spec.in_dim:
        raise ShapeMismatchError(
            f"batch has {batch.x.shape[1]} features, model expects {params.spec.in_dim}"
        )
    if int(batch.y.max()) >= params.spec.classes:
        raise ShapeMismatchError("batch contains a label outside the model's classes")
    n = len(batch)
    with np.errstate(invalid="ignore", over="ignore"):  # finiteness checked below
        logits, h = _forward(params, batch.x)
        logp = _log_softmax(logits)
        loss = -float(logp[np.arange(n), batch.y].sum())
        dlogits = np.exp(logp)
        dlogits[np.arange(n), batch.y] -= 1.0
        if params.spec.kind == "softmax":
            grads = [batch.x.T @ dlogits, dlogits.sum(axis=0)]
        else:
            W2 = params.arrays[2]
            dh = (dlogits @ W2.T) * (1.0 - h * h)
            grads = [batch.x.T @ dh, dh.sum(axis=0), h.T @ dlogits, dlogits.sum(axis=0)]
    if not np.isfinite(loss) or any(not np.all(np.isfinite(g)) for g in grads):
        raise NonFiniteLossError("loss or gradient is not finite")
    return loss, grads


def local_step(params: ModelParams, batch: Batch, lr: float) -> ModelParams:
    """One SGD step: w - (lr / n) * grad of the summed batch loss."""
    _, grads = loss_and_grad(params, batch)
    scale = lr / len(batch)
    return ModelParams(params.spec, [a - scale * g for a, g in zip(params.arrays, grads)])


def _combine(models: Sequence[ModelParams], weights: np.ndarray) -> ModelParams:
    spec = models[0].spec
    arrays = []
    for j in range(len(models[0].arrays)):
        arrays.append(sum(w * m.arrays[j] for w, m in zip(weights, models)))
    return ModelParams(spec, arrays)


def internal_sync(models: Sequence[ModelParams], data_sizes: Sequence[float]) -> ModelParams:
    """Group aggregation: average weighted by each member's data size."""
    if len(models) == 0:
        raise EmptySetError("cannot aggregate zero models")
    if len(data_sizes) != len(models):
        raise LengthMismatchError(f"{len(data_sizes)} weights for {len(models)} models")
    w = np.asarray(data_sizes, dtype=np.float64)
    if np.any(w < 0):
        raise ValueError("data sizes must be non-negative")
    total = float(w.sum())
    if total <= 0:
        raise ZeroTotalError("data sizes sum to zero")
    return _combine(models, w / total)


def external_sync(models: Sequence[ModelParams]) -> ModelParams:
    """Top-level aggregation: unweighted mean of the group models."""
    if len(models) == 0:
        raise EmptySetError("cannot aggregate zero models")
    return _combine(models, np.full(len(models), 1.0 / len(models)))


def evaluate(params: ModelParams, x, y):
    """Accuracy and mean loss on a labelled set."""
    batch = Batch(np.asarray(x), np.asarray(y))
    logits, _ = _forward(params, batch.x)
    logp = _log_softmax(logits)
    acc = float((logits.argmax(axis=1) == batch.y).mean())
    mean_loss = -float(logp[np.arange(len(batch)), batch.y].mean())
    return acc, mean_loss


def fedavg_round(
    params: ModelParams,
    device_batches: Sequence[Sequence[Batch]],
    lr: float,
    weights: Optional[Sequence[float]] = None,
) -> ModelParams:
    """Flat-aggregation round: each device walks its batches from the shared
    start, then models merge in one data-size-weighted average.

    ``weights`` defaults to each device's total sample count.
    """
    if len(device_batches) == 0:
        raise EmptySetError("need at least one device")
    locals_ = []
    totals = []
    for batches in device_batches:
        if len(batches) == 0:
            raise EmptySetError("every device needs at least one batch")
        local = params
        seen = 0
        for batch in batches:
            local = local_step(local, batch, lr)
            seen += len(batch)
        locals_.append(local)
        totals.append(seen)
    return internal_sync(locals_, totals if weights is None else weights)


# ---------------------------------------------------------------------------
# Checkpoints: one JSON header line, then raw little-endian float64 payload.


def save_params(params: ModelParams, path) -> None:
    header = {
        "format": _CHECKPOINT_FORMAT,
        "kind": params.spec.kind,
        "in_dim": params.spec.in_dim,
        "classes": params.spec.classes,
        "hidden": params.spec.hidden,
        "shapes": [list(a.shape) for a in params.arrays],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        for arr in params.arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_params(path) -> ModelParams:
    with open(path, "rb") as fh:
        raw = fh.readline()
        try:
            header = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise MalformedCheckpointError(f"unreadable checkpoint header: {exc}") from exc
        if not isinstance(header, dict) or header.get("format") != _CHECKPOINT_FORMAT:
            raise MalformedCheckpointError(f"unknown checkpoint format {header!r:.80}")
        try:
            spec = ModelSpec(
                kind=header["kind"],
                in_dim=header["in_dim"],
                classes=header["classes"],
                hidden=header.get("hidden", 0),
            )
        except (KeyError, InvalidConfigError, TypeError) as exc:
            raise MalformedCheckpointError(f"bad checkpoint spec: {exc}") from exc
        shapes = [tuple(s) for s in header.get("shapes", [])]
        if shapes != [tuple(s) for s in spec.shapes()]:
            raise MalformedCheckpointError(f"shapes {shapes} do not match spec {spec.shapes()}")
        payload = fh.read()
    count = sum(int(np.prod(s)) for s in shapes)
    if len(payload) != 8 * count:
        raise MalformedCheckpointError(
            f"payload holds {len(payload)} bytes, header implies {8 * count}"
        )
    flat = np.frombuffer(payload, dtype="<f8")
    arrays, at = [], 0
    for shape in shapes:
        size = int(np.prod(shape))
        arrays.append(flat[at : at + size].reshape(shape).copy())
        at += size
    return ModelParams(spec, arrays)
