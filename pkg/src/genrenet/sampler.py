"""Batch construction: shuffled minibatches, pair/triplet mining, noise.

Pair and triplet sampling is uniform-random within the batch (no hard
mining). Pairs target a 50/50 similar/dissimilar mix and label them
y=0 similar, y=1 dissimilar. Samplers return both the gathered batch
object and the row indices used, so a caller can scatter loss gradients
back onto full-batch output matrices.

Noise augmentation adds per-row Gaussian noise calibrated to a target
signal-to-noise ratio: noise power = signal power / 10^(snr_db/10) with
the signal power taken as the row's mean squared value. It is active only
during the first ``active_fraction`` of the training schedule and never
mutates its input.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DataError
from .losses import PairBatch, TripletBatch
from .tensor import Matrix, Rng


@dataclass(frozen=True)
class NoiseConfig:
    snr_db: float = 20.0
    active_fraction: float = 0.3   # leading fraction of epochs with noise on

    def __post_init__(self):
        if not np.isfinite(self.snr_db):
            raise ArgumentError(f"snr_db must be finite, got {self.snr_db}")
        if not 0.0 <= self.active_fraction <= 1.0:
            raise ArgumentError(
                f"active_fraction must lie in [0, 1], got {self.active_fraction}")


@dataclass(frozen=True)
class EpochPlan:
    batch_size: int = 64
    seed: int | None = None     # fixed per-plan shuffle; None defers to the caller's rng
    drop_last: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ArgumentError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass(frozen=True)
class PairIndices:
    first: np.ndarray
    second: np.ndarray
    y: np.ndarray


@dataclass(frozen=True)
class TripletIndices:
    anchor: np.ndarray
    positive: np.ndarray
    negative: np.ndarray


def iterate_batches(embeddings: Matrix, labels, plan: EpochPlan, rng: Rng):
    """Yield (matrix, labels) minibatches over a seeded permutation.

    Every sample appears exactly once per epoch, except an optional
    dropped tail shorter than the batch size.
    """
    labels = np.asarray(labels)
    n = len(labels)
    if n == 0:
        raise DataError("cannot iterate over an empty dataset")
    if embeddings.shape[0] != n:
        raise DataError(f"{embeddings.shape[0]} rows vs {n} labels")
    order = Rng(plan.seed).permutation(n) if plan.seed is not None else rng.permutation(n)
    for start in range(0, n, plan.batch_size):
        idx = order[start:start + plan.batch_size]
        if plan.drop_last and len(idx) < plan.batch_size:
            break
        yield embeddings[idx], labels[idx]


def _indices_by_class(labels: np.ndarray) -> dict[int, np.ndarray]:
    return {int(c): np.flatnonzero(labels == c) for c in np.unique(labels)}


def sample_pairs(z: Matrix, labels, rng: Rng, count: int | None = None
                 ) -> tuple[PairBatch, PairIndices]:
    """Draw row pairs from z, targeting half similar / half dissimilar.

    Similar pairs take both rows from one class (distinct rows); dissimilar
    pairs take rows from two different classes. A single-class batch falls
    back to all-similar pairs with a warning.
    """
    labels = np.asarray(labels, dtype=np.int64).ravel()
    n = len(labels)
    if z.shape[0] != n:
        raise DataError(f"{z.shape[0]} rows vs {n} labels")
    count = n if count is None else int(count)
    if count < 1:
        raise ArgumentError(f"pair count must be >= 1, got {count}")

    by_class = _indices_by_class(labels)
    pairable = [c for c, idx in by_class.items() if len(idx) >= 2]
    if not pairable:
        raise DataError("no class in the batch has two samples; cannot form pairs")
    single_class = len(by_class) == 1
    if single_class:
        warnings.warn("single-class batch: emitting all-similar pairs", stacklevel=2)
    pool_similar = np.concatenate([by_class[c] for c in pairable])

    first = np.empty(count, dtype=np.int64)
    second = np.empty(count, dtype=np.int64)
    y = np.empty(count, dtype=np.int64)
    coins = rng.uniform(1, count).ravel()
    for k in range(count):
        similar = single_class or coins[k] < 0.5
        if similar:
            i = int(rng.choice(pool_similar))
            same = by_class[int(labels[i])]
            j = int(rng.choice(same[same != i]))
            y[k] = 0
        else:
            i = int(rng.integers(0, n))
            other = np.flatnonzero(labels != labels[i])
            j = int(rng.choice(other))
            y[k] = 1
        first[k], second[k] = i, j
    return PairBatch(z[first], z[second], y), PairIndices(first, second, y)


def sample_triplets(z: Matrix, labels, rng: Rng, count: int | None = None
                    ) -> tuple[TripletBatch, TripletIndices]:
    """Draw (anchor, positive, negative) rows: positive shares the anchor's
    class, negative comes from any other class."""
    labels = np.asarray(labels, dtype=np.int64).ravel()
    n = len(labels)
    if z.shape[0] != n:
        raise DataError(f"{z.shape[0]} rows vs {n} labels")
    count = n if count is None else int(count)
    if count < 1:
        raise ArgumentError(f"triplet count must be >= 1, got {count}")

    by_class = _indices_by_class(labels)
    if len(by_class) < 2:
        raise DataError("triplets need at least two classes in the batch")
    eligible = [idx for idx in by_class.values() if len(idx) >= 2]
    if not eligible:
        raise DataError("no anchor has a same-class positive in the batch")
    anchors_pool = np.concatenate(eligible)

    anchor = np.empty(count, dtype=np.int64)
    positive = np.empty(count, dtype=np.int64)
    negative = np.empty(count, dtype=np.int64)
    for k in range(count):
        a = int(rng.choice(anchors_pool))
        same = by_class[int(labels[a])]
        p = int(rng.choice(same[same != a]))
        other = np.flatnonzero(labels != labels[a])
        ng = int(rng.choice(other))
        anchor[k], positive[k], negative[k] = a, p, ng
    return (TripletBatch(z[anchor], z[positive], z[negative]),
            TripletIndices(anchor, positive, negative))


def noise_active(config: NoiseConfig, epoch: int, total_epochs: int) -> bool:
    return epoch < config.active_fraction * total_epochs


def add_noise(batch: Matrix, config: NoiseConfig, epoch: int, total_epochs: int,
              rng: Rng) -> Matrix:
    """Return the batch with SNR-calibrated Gaussian noise, or unchanged.

    Outside the active window the input matrix is returned as-is. Rows with
    zero signal power pass through unchanged (their SNR is undefined).
    """
    if total_epochs < 1:
        raise ArgumentError(f"total_epochs must be >= 1, got {total_epochs}")
    if not noise_active(config, epoch, total_epochs):
        return batch
    power = np.mean(batch ** 2, axis=1)
    std = np.sqrt(power / 10.0 ** (config.snr_db / 10.0))
    noise = rng.normal(*batch.shape)
    return batch + noise * std[:, None]
