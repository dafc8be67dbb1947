"""Synthetic non-i.i.d. federations.

Every device draws a label distribution from a symmetric Dirichlet; low
concentration means devices see only a few classes, which is the heterogeneity
the selection machinery exists to counter.  Batches are one-shot FIFO: a
device's next batch is visible (its label histogram can be peeked) before it
is consumed, which is what lets a selector reason about the batch a device
would train on.

Features are Gaussian blobs: class f lives at sep * mu_f with isotropic noise,
so class geometry is controlled by two knobs and nothing is learned from disk.
All draws flow through named substreams of one seed; in particular each device
owns the substream (seed, "device", group, device), so generation order and
worker count cannot change the data.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import ClassCounts, ClassDistribution, normalize
from .errors import (
    InvalidConfigError,
    MalformedManifestError,
    StreamExhaustedError,
)
from .learn import Batch
from .rng import substream


@dataclass(eq=False)
class SynthConfig:
    groups: int
    devices_per_group: int
    classes: int
    feature_dim: int
    batch_size: int = 32
    batches_per_device: int = 50
    concentration: float = 0.5
    sep: float = 3.0
    noise: float = 1.0
    test_samples: int = 5000
    regenerate: bool = False

    def __post_init__(self):
        if self.groups < 1 or self.devices_per_group < 1:
            raise InvalidConfigError("need at least one group and one device per group")
        if self.classes < 2 or self.feature_dim < 1:
            raise InvalidConfigError("need classes >= 2 and feature_dim >= 1")
        if self.batch_size < 1 or self.batches_per_device < 1:
            raise InvalidConfigError("need batch_size >= 1 and batches_per_device >= 1")
        if not (self.concentration > 0):
            raise InvalidConfigError("concentration must be positive")
        if self.noise < 0 or self.sep < 0:
            raise InvalidConfigError("sep and noise must be non-negative")
        if self.test_samples < 1:
            raise InvalidConfigError("test_samples must be >= 1")


@dataclass(eq=False)
class DeviceStream:
    """One device's batch queue.  ``dist``/``gen`` support regeneration."""

    group: int
    device: int
    classes: int
    batch_size: int
    batches: list
    initial_counts: ClassCounts
    cursor: int = 0
    dist: Optional[np.ndarray] = None
    gen: Optional[np.random.Generator] = None
    means: Optional[np.ndarray] = None
    noise: float = 0.0
    regenerate: bool = False


def remaining_batches(stream: DeviceStream) -> float:
    """Batches left to fetch; infinite when the stream regenerates."""
    if stream.regenerate:
        return math.inf
    return len(stream.batches) - stream.cursor


def _synth_batch(dist, gen, means, noise, batch_size, classes) -> Batch:
    counts = gen.multinomial(batch_size, dist)
    labels = gen.permutation(np.repeat(np.arange(classes), counts))
    x = means[labels] + noise * gen.standard_normal((batch_size, means.shape[1]))
    return Batch(x, labels)


def _ensure_next(stream: DeviceStream) -> None:
    if stream.cursor < len(stream.batches):
        return
    if not stream.regenerate:
        raise StreamExhaustedError(
            f"device ({stream.group},{stream.device}) has no batches left"
        )
    stream.batches.append(
        _synth_batch(
            stream.dist, stream.gen, stream.means, stream.noise,
            stream.batch_size, stream.classes,
        )
    )


def peek_next_histogram(stream: DeviceStream) -> np.ndarray:
    """Label histogram of the batch the device would train on next."""
    _ensure_next(stream)
    return stream.batches[stream.cursor].label_histogram(stream.classes)


def fetch_batch(stream: DeviceStream) -> Batch:
    """Consume and return the next batch (FIFO, each batch trains once)."""
    _ensure_next(stream)
    batch = stream.batches[stream.cursor]
    stream.cursor += 1
    return batch


@dataclass(eq=False)
class SynthFederation:
    classes: int
    feature_dim: int
    batch_size: int
    streams: list
    test: Batch
    class_means: Optional[np.ndarray] = None
    config: Optional[SynthConfig] = None
    seed: Optional[int] = None

    def initial_device_counts(self) -> list:
        return [s.initial_counts for s in self.streams]

    def pool_distribution(self) -> ClassDistribution:
        total = np.sum([s.initial_counts.counts for s in self.streams], axis=0)
        return ClassDistribution(normalize(total))


def generate_federation(config: SynthConfig, seed: int) -> SynthFederation:
    """Materialize every device stream and the held-out test set."""
    means = config.sep * substream(seed, "means").standard_normal(
        (config.classes, config.feature_dim)
    )
    streams = []
    for m in range(config.groups):
        for k in range(config.devices_per_group):
            gen = substream(seed, "device", m, k)
            dist = gen.dirichlet(np.full(config.classes, config.concentration))
            batches = [
                _synth_batch(dist, gen, means, config.noise, config.batch_size, config.classes)
                for _ in range(config.batches_per_device)
            ]
            totals = np.sum([b.label_histogram(config.classes) for b in batches], axis=0)
            streams.append(
                DeviceStream(
                    group=m, device=k, classes=config.classes,
                    batch_size=config.batch_size, batches=batches,
                    initial_counts=ClassCounts(totals),
                    dist=dist, gen=gen, means=means, noise=config.noise,
                    regenerate=config.regenerate,
                )
            )
    # Test labels follow the realized population distribution, so held-out
    # accuracy measures fit to the same population the devices sample.
    pool = normalize(np.sum([s.initial_counts.counts for s in streams], axis=0))
    tgen = substream(seed, "test")
    test = _synth_batch(pool, tgen, means, config.noise, config.test_samples, config.classes)
    return SynthFederation(
        classes=config.classes, feature_dim=config.feature_dim,
        batch_size=config.batch_size, streams=streams, test=test,
        class_means=means, config=config, seed=seed,
    )


# ---------------------------------------------------------------------------
# Manifest IO.  Samples are stored flat per device and re-chunked on load;
# a trailing group smaller than the batch size is dropped, never padded.


def _samples_to_json(x: np.ndarray, y: np.ndarray) -> list:
    return [{"x": row.tolist(), "y": int(label)} for row, label in zip(x, y)]


def save_manifest(fed: SynthFederation, path) -> None:
    devices = []
    for s in fed.streams:
        xs = np.concatenate([b.x for b in s.batches], axis=0)
        ys = np.concatenate([b.y for b in s.batches])
        devices.append(
            {"group": s.group, "device": s.device, "samples": _samples_to_json(xs, ys)}
        )
    payload = {
        "F": fed.classes,
        "d": fed.feature_dim,
        "n": fed.batch_size,
        "devices": devices,
        "test": _samples_to_json(fed.test.x, fed.test.y),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def _parse_samples(entries, d: int, classes: int, where: str):
    if not isinstance(entries, list) or not entries:
        raise MalformedManifestError(f"{where}: samples must be a non-empty list")
    xs, ys = [], []
    for i, item in enumerate(entries):
        if not isinstance(item, dict) or "x" not in item or "y" not in item:
            raise MalformedManifestError(f"{where}[{i}]: sample needs 'x' and 'y'")
        row = np.asarray(item["x"], dtype=np.float64)
        if row.shape != (d,):
            raise MalformedManifestError(f"{where}[{i}]: feature length {row.size} != d={d}")
        if not np.all(np.isfinite(row)):
            raise MalformedManifestError(f"{where}[{i}]: non-finite feature")
        label = item["y"]
        if not isinstance(label, int) or not 0 <= label < classes:
            raise MalformedManifestError(f"{where}[{i}]: label {label!r} outside [0,{classes})")
        xs.append(row)
        ys.append(label)
    return np.stack(xs), np.asarray(ys, dtype=np.int64)


def load_manifest(path) -> SynthFederation:
    """Rebuild a federation from a manifest.  Loaded streams never regenerate."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MalformedManifestError(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise MalformedManifestError("manifest must be a JSON object")
    for key in ("F", "d", "n", "devices", "test"):
        if key not in payload:
            raise MalformedManifestError(f"manifest is missing key {key!r}")
    F, d, n = payload["F"], payload["d"], payload["n"]
    if not all(isinstance(v, int) and v > 0 for v in (F, d, n)) or F < 2:
        raise MalformedManifestError(f"bad header values F={F!r} d={d!r} n={n!r}")
    if not isinstance(payload["devices"], list) or not payload["devices"]:
        raise MalformedManifestError("manifest holds no devices")

    streams = []
    for entry in payload["devices"]:
        if not isinstance(entry, dict) or "group" not in entry or "device" not in entry:
            raise MalformedManifestError("device entry needs 'group' and 'device'")
        g, dev = entry["group"], entry["device"]
        if not (isinstance(g, int) and isinstance(dev, int) and g >= 0 and dev >= 0):
            raise MalformedManifestError(f"bad device ids group={g!r} device={dev!r}")
        xs, ys = _parse_samples(entry.get("samples"), d, F, f"device ({g},{dev})")
        batches = [
            Batch(xs[at : at + n], ys[at : at + n])
            for at in range(0, len(ys) - n + 1, n)
        ]
        if not batches:
            raise MalformedManifestError(f"device ({g},{dev}) has fewer than n={n} samples")
        totals = np.sum([b.label_histogram(F) for b in batches], axis=0)
        streams.append(
            DeviceStream(
                group=g, device=dev, classes=F, batch_size=n,
                batches=batches, initial_counts=ClassCounts(totals),
            )
        )
    streams.sort(key=lambda s: (s.group, s.device))
    if len({(s.group, s.device) for s in streams}) != len(streams):
        raise MalformedManifestError("duplicate (group, device) pair in manifest")
    tx, ty = _parse_samples(payload["test"], d, F, "test")
    return SynthFederation(
        classes=F, feature_dim=d, batch_size=n, streams=streams, test=Batch(tx, ty)
    )
