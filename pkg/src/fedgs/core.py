"""Label distributions, divergence, and the federation topology record.

The quantity the whole package optimizes is the L2 distance between a
selection's aggregate label distribution and the estimated global one, so the
primitives here are deliberately small: count vectors, probability vectors,
one normalization rule, one distance.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    EmptySetError,
    InvalidConfigError,
    LengthMismatchError,
    ZeroTotalError,
)

_SUM_TOL = 1e-9


def normalize(counts) -> np.ndarray:
    """Scale a non-negative vector to sum to one.

    Raises ZeroTotalError when the vector has no mass, LengthMismatchError
    when it is empty, and ValueError on negative or non-finite entries.
    """
    arr = np.asarray(counts, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise LengthMismatchError(f"expected a non-empty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("counts must be finite")
    if np.any(arr < 0):
        raise ValueError("counts must be non-negative")
    total = float(arr.sum())
    if total <= 0.0:
        raise ZeroTotalError("cannot normalize a zero-mass vector")
    return arr / total


@dataclass(eq=False)
class ClassCounts:
    """Integer label histogram over a fixed class alphabet."""

    counts: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.counts)
        if arr.ndim != 1 or arr.size == 0:
            raise LengthMismatchError(f"counts must be a non-empty 1-D vector, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            rounded = np.rint(np.asarray(arr, dtype=np.float64))
            if not np.array_equal(rounded, np.asarray(arr, dtype=np.float64)):
                raise ValueError("counts must be integral")
            arr = rounded.astype(np.int64)
        if np.any(arr < 0):
            raise ValueError("counts must be non-negative")
        self.counts = arr.astype(np.int64)

    @property
    def classes(self) -> int:
        return int(self.counts.size)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def distribution(self) -> "ClassDistribution":
        return ClassDistribution(normalize(self.counts))

    def __add__(self, other: "ClassCounts") -> "ClassCounts":
        if self.classes != other.classes:
            raise LengthMismatchError(f"class counts differ: {self.classes} vs {other.classes}")
        return ClassCounts(self.counts + other.counts)


@dataclass(eq=False)
class ClassDistribution:
    """Probability vector over classes; must sum to one within 1e-9."""

    probs: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.probs, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise LengthMismatchError(f"probs must be a non-empty 1-D vector, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("probs must be finite")
        if np.any(arr < 0):
            raise ValueError("probs must be non-negative")
        if abs(float(arr.sum()) - 1.0) > _SUM_TOL:
            raise ValueError(f"probs must sum to 1 within {_SUM_TOL}, got {arr.sum()!r}")
        self.probs = arr

    @property
    def classes(self) -> int:
        return int(self.probs.size)

    @classmethod
    def from_counts(cls, counts) -> "ClassDistribution":
        return cls(normalize(np.asarray(counts)))


def estimate_global_distribution(device_counts: Sequence) -> ClassDistribution:
    """Estimate the population label distribution from per-device histograms.

    Each entry is one device's initial label-count vector (ClassCounts or
    array).  Summing raw counts weights every device by its data size, then
    one normalization yields the estimate.  Computed once, at federation
    startup, from the first full pass over every stream.
    """
    rows = []
    for item in device_counts:
        vec = item.counts if isinstance(item, ClassCounts) else np.asarray(item)
        rows.append(np.asarray(vec, dtype=np.float64))
    if not rows:
        raise EmptySetError("need at least one device to estimate the global distribution")
    width = rows[0].size
    for vec in rows:
        if vec.ndim != 1 or vec.size != width:
            raise LengthMismatchError("all device count vectors must share one class alphabet")
    return ClassDistribution(normalize(np.sum(rows, axis=0)))


def divergence(p, q) -> float:
    """L2 distance between two distributions over the same classes."""
    a = p.probs if isinstance(p, ClassDistribution) else np.asarray(p, dtype=np.float64)
    b = q.probs if isinstance(q, ClassDistribution) else np.asarray(q, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatchError(f"distributions differ in shape: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


@dataclass(eq=False)
class FederationTopology:
    """Static shape of a cloud / edge / device federation.

    ``selected_per_group`` (L) devices participate per group per iteration:
    ``presampled_per_group`` (L_rnd) chosen uniformly, ``optimized_per_group``
    (L_sel) chosen by the selection solver.  A round is
    ``iterations_per_round`` (T) iterations ending in one external sync.
    """

    groups: int
    group_sizes: Sequence[int]
    selected_per_group: int
    presampled_per_group: int
    optimized_per_group: int
    classes: int
    iterations_per_round: int = 1
    rounds: int = 1
    batch_size: int = 32
    learning_rate: float = 0.01

    def __post_init__(self):
        self.group_sizes = [int(k) for k in self.group_sizes]
        if self.groups < 1:
            raise InvalidConfigError("need at least one group")
        if len(self.group_sizes) != self.groups:
            raise InvalidConfigError(
                f"group_sizes has {len(self.group_sizes)} entries for {self.groups} groups"
            )
        if self.classes < 2:
            raise InvalidConfigError("need at least two classes")
        L, Lr, Ls = self.selected_per_group, self.presampled_per_group, self.optimized_per_group
        if L < 1 or Lr < 0 or Ls < 0:
            raise InvalidConfigError("selection counts must be non-negative with L >= 1")
        if Lr + Ls != L:
            raise InvalidConfigError(f"L_rnd + L_sel must equal L: {Lr} + {Ls} != {L}")
        if any(k < L for k in self.group_sizes):
            raise InvalidConfigError("every group must hold at least L devices")
        if self.iterations_per_round < 1:
            raise InvalidConfigError("iterations_per_round must be >= 1")
        if self.rounds < 0:
            raise InvalidConfigError("rounds must be >= 0")
        if self.batch_size < 1:
            raise InvalidConfigError("batch_size must be >= 1")
        if not (self.learning_rate > 0 and np.isfinite(self.learning_rate)):
            raise InvalidConfigError("learning_rate must be positive and finite")

    @property
    def total_devices(self) -> int:
        return int(sum(self.group_sizes))

    @property
    def total_iterations(self) -> int:
        return self.iterations_per_round * self.rounds
