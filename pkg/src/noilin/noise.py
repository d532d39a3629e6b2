"""Symmetric and pair label flipping with exact flip counts."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset

KINDS = ("symmetric", "pair")


@dataclass(frozen=True)
class NoiseSpec:
    """Flip ``round(rate * n)`` labels.

    A ``seed`` of None means 0 unless an owner (such as a training config)
    fills it in. ``pair_map`` overrides the default pair adjacency ``c -> (c + 1) mod C``;
    it must map every class to a different class.
    """

    kind: str = "symmetric"
    rate: float = 0.0
    seed: int | None = None
    pair_map: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {KINDS}")
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"noise rate must lie in [0, 1], got {self.rate}")

    def with_rate(self, rate: float) -> "NoiseSpec":
        return NoiseSpec(self.kind, rate, self.seed, self.pair_map)


@dataclass(frozen=True, eq=False)
class NoisyView:
    base: LabeledDataset
    noisy_labels: np.ndarray
    flipped_mask: np.ndarray
    epoch: int

    @property
    def features(self) -> np.ndarray:
        return self.base.features

    @property
    def clean_labels(self) -> np.ndarray:
        return self.base.labels

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["index", "base_label", "noisy_label", "flipped"])
            for i, (b, y, m) in enumerate(zip(self.base.labels, self.noisy_labels, self.flipped_mask)):
                w.writerow([int(self.base.index[i]), int(b), int(y), int(bool(m))])


def flip_count(rate: float, n: int) -> int:
    # round half to even, same as Python's round()
    return int(round(rate * n))


def _pair_targets(num_classes: int, pair_map) -> np.ndarray:
    if pair_map is None:
        return (np.arange(num_classes) + 1) % num_classes
    targets = np.asarray(pair_map, dtype=np.int64)
    if targets.shape != (num_classes,) or np.any(targets < 0) or np.any(targets >= num_classes):
        raise ValueError(f"pair_map must list a target class for each of {num_classes} classes")
    if np.any(targets == np.arange(num_classes)):
        raise ValueError("pair_map must send every class to a different class")
    return targets


def flip_labels(labels, num_classes: int, spec: NoiseSpec, rng: np.random.Generator):
    """Return ``(noisy_labels, flipped_mask)`` for one array of labels."""
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.shape[0]
    noisy = labels.copy()
    mask = np.zeros(n, dtype=bool)
    m = flip_count(spec.rate, n)
    if m == 0:
        return noisy, mask
    if num_classes < 2:
        raise ValueError("label flipping needs at least two classes")
    chosen = rng.choice(n, size=m, replace=False)
    if spec.kind == "symmetric":
        offset = rng.integers(1, num_classes, size=m)
        noisy[chosen] = (labels[chosen] + offset) % num_classes
    else:
        noisy[chosen] = _pair_targets(num_classes, spec.pair_map)[labels[chosen]]
    mask[chosen] = True
    return noisy, mask


def flip(ds: LabeledDataset, spec: NoiseSpec, epoch: int) -> NoisyView:
    """Flip a fresh ``spec.rate`` portion of the whole dataset for ``epoch``."""
    rng = np.random.default_rng([spec.seed or 0, epoch])
    noisy, mask = flip_labels(ds.labels, ds.num_classes, spec, rng)
    return NoisyView(ds, noisy, mask, epoch)


def flip_minibatch(labels, spec: NoiseSpec, seed, num_classes: int):
    """Per-minibatch flipping; ``seed`` may be an int or a sequence of ints."""
    rng = np.random.default_rng(seed)
    return flip_labels(labels, num_classes, spec, rng)
