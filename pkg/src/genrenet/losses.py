"""Loss functions and the weighted multitask objective.

Three losses, each returning its value together with analytic gradients
with respect to every input matrix:

* ``cross_entropy``  — mean negative log-likelihood over softmax logits.
* ``contrastive``    — pairwise margin loss on projection vectors. Under
  the ``Standard`` convention similar pairs (y=0) contribute D^2 and
  dissimilar pairs (y=1) contribute max(m - D, 0)^2. The ``Swapped``
  convention exchanges the two terms (hinge on similar, quadratic on
  dissimilar) and exists so runs trained under that sign convention can
  be audited.
* ``triplet``        — mean of max(0, D(a,p) - D(a,n) + margin); with
  ``hinge=False`` the raw unhinged value is used instead.

Distances are D(u, v) = sqrt(sum_k (u_k - v_k)^2 + eps): the stabilizer
sits under the root on the summed squares, so D(x, x) = sqrt(eps) and the
gradient stays finite at zero separation.

``combine`` forms the convex combination sum_i w_i * loss_i over any
number of cross-entropy heads plus at most one metric head, scaling each
gradient by its weight. Weight vectors are normalized to sum to one at
construction time (with a warning when the input did not).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ArgumentError, ConfigError, LabelError, ShapeError
from .tensor import Matrix

CE_TAG = "ce"
CONTRASTIVE_TAG = "contrastive"
TRIPLET_TAG = "triplet"
METRIC_TAGS = (CONTRASTIVE_TAG, TRIPLET_TAG)


# --------------------------------------------------------------------------
# distances
# --------------------------------------------------------------------------

def euclidean_distance(a, b, eps: float = 1e-6) -> float:
    """Stabilized Euclidean distance between two vectors."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"distance operands differ in length: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2) + eps))


def row_distances(z1: Matrix, z2: Matrix, eps: float) -> np.ndarray:
    """Per-row stabilized Euclidean distances between two (n x d) matrices."""
    if z1.shape != z2.shape:
        raise ShapeError(f"pair matrices differ in shape: {z1.shape} vs {z2.shape}")
    return np.sqrt(np.sum((z1 - z2) ** 2, axis=1) + eps)


# --------------------------------------------------------------------------
# batch containers
# --------------------------------------------------------------------------

@dataclass
class PairBatch:
    """Row-aligned projection pairs with binary labels (0 similar, 1 dissimilar)."""

    z1: Matrix
    z2: Matrix
    y: np.ndarray

    def __post_init__(self):
        self.z1 = np.asarray(self.z1, dtype=np.float64)
        self.z2 = np.asarray(self.z2, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64).ravel()
        if self.z1.shape != self.z2.shape:
            raise ShapeError(f"z1/z2 shapes differ: {self.z1.shape} vs {self.z2.shape}")
        if len(self.y) != self.z1.shape[0]:
            raise ShapeError("pair labels do not match pair count")
        if not np.all((self.y == 0) | (self.y == 1)):
            raise LabelError("pair labels must be 0 (similar) or 1 (dissimilar)")

    def __len__(self):
        return self.z1.shape[0]


@dataclass
class TripletBatch:
    """Row-aligned anchor/positive/negative projection matrices."""

    anchor: Matrix
    positive: Matrix
    negative: Matrix

    def __post_init__(self):
        self.anchor = np.asarray(self.anchor, dtype=np.float64)
        self.positive = np.asarray(self.positive, dtype=np.float64)
        self.negative = np.asarray(self.negative, dtype=np.float64)
        if not (self.anchor.shape == self.positive.shape == self.negative.shape):
            raise ShapeError("anchor/positive/negative shapes differ")

    def __len__(self):
        return self.anchor.shape[0]


# --------------------------------------------------------------------------
# cross-entropy
# --------------------------------------------------------------------------

def log_softmax(logits: Matrix) -> Matrix:
    """Row-wise log softmax via the log-sum-exp trick."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))


def cross_entropy(logits: Matrix, labels) -> tuple[float, Matrix]:
    """Mean NLL loss and its gradient (softmax - onehot) / N w.r.t. logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).ravel()
    n, k = logits.shape
    if len(labels) != n:
        raise ShapeError(f"{len(labels)} labels for {n} logit rows")
    if n == 0:
        raise ShapeError("cross_entropy on an empty batch")
    if labels.min() < 0 or labels.max() >= k:
        raise LabelError(f"labels must lie in [0, {k}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    logp = log_softmax(logits)
    loss = float(-logp[np.arange(n), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, grad


# --------------------------------------------------------------------------
# contrastive
# --------------------------------------------------------------------------

class PairConvention(str, Enum):
    STANDARD = "standard"
    SWAPPED = "swapped"


@dataclass(frozen=True)
class ContrastiveParams:
    margin: float = 1.0
    epsilon: float = 1e-6
    convention: PairConvention = PairConvention.STANDARD

    def __post_init__(self):
        if self.margin <= 0:
            raise ArgumentError(f"margin must be > 0, got {self.margin}")
        if self.epsilon <= 0:
            raise ArgumentError(f"epsilon must be > 0, got {self.epsilon}")


def contrastive(batch: PairBatch, params: ContrastiveParams) -> tuple[float, Matrix, Matrix]:
    """Pairwise margin loss; returns (loss, grad_z1, grad_z2)."""
    n = len(batch)
    if n == 0:
        raise ShapeError("contrastive on an empty pair batch")
    diff = batch.z1 - batch.z2
    sq = np.sum(diff ** 2, axis=1) + params.epsilon
    dist = np.sqrt(sq)
    hinge = np.maximum(params.margin - dist, 0.0)

    # pull rows toward each other (quadratic), push rows beyond the margin
    pull = sq                      # == D^2 without a sqrt/square round trip
    push = hinge ** 2
    if params.convention is PairConvention.STANDARD:
        pull_mask = batch.y == 0
    else:
        pull_mask = batch.y == 1
    per_row = np.where(pull_mask, pull, push)
    loss = float(per_row.mean())

    # d(pull)/dz1 = 2*diff; d(push)/dz1 = -2*hinge/dist * diff (0 past margin)
    coef = np.where(pull_mask, 2.0, -2.0 * hinge / dist) / n
    grad_z1 = coef[:, None] * diff
    return loss, grad_z1, -grad_z1


# --------------------------------------------------------------------------
# triplet
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TripletParams:
    margin: float = 0.2
    hinge: bool = True
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.margin < 0:
            raise ArgumentError(f"margin must be >= 0, got {self.margin}")
        if self.epsilon <= 0:
            raise ArgumentError(f"epsilon must be > 0, got {self.epsilon}")


def triplet(batch: TripletBatch, params: TripletParams):
    """Margin ranking loss; returns (loss, grad_anchor, grad_positive, grad_negative)."""
    n = len(batch)
    if n == 0:
        raise ShapeError("triplet on an empty batch")
    dap_diff = batch.anchor - batch.positive
    dan_diff = batch.anchor - batch.negative
    dap = np.sqrt(np.sum(dap_diff ** 2, axis=1) + params.epsilon)
    dan = np.sqrt(np.sum(dan_diff ** 2, axis=1) + params.epsilon)
    raw = dap - dan + params.margin

    if params.hinge:
        active = raw > 0
        loss = float(np.where(active, raw, 0.0).mean())
        scale = active.astype(np.float64) / n
    else:
        loss = float(raw.mean())
        scale = np.full(n, 1.0 / n)

    gp_dir = dap_diff / dap[:, None]   # d(dap)/d(anchor)
    gn_dir = dan_diff / dan[:, None]   # d(dan)/d(anchor)
    grad_anchor = scale[:, None] * (gp_dir - gn_dir)
    grad_positive = -scale[:, None] * gp_dir
    grad_negative = scale[:, None] * gn_dir
    return loss, grad_anchor, grad_positive, grad_negative


# --------------------------------------------------------------------------
# multitask combination
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MultitaskConfig:
    """Ordered (tag, weight) head roles; weights are convex (sum to 1).

    Tags are ``"ce"`` (repeatable) plus at most one of ``"contrastive"`` /
    ``"triplet"``. Construct via :meth:`from_weights` to get normalization
    of slightly-off weight vectors with a warning.
    """

    head_weights: tuple[tuple[str, float], ...] = ((CE_TAG, 1.0),)
    contrastive_params: ContrastiveParams = field(default_factory=ContrastiveParams)
    triplet_params: TripletParams = field(default_factory=TripletParams)

    def __post_init__(self):
        if not self.head_weights:
            raise ConfigError("at least one head weight required")
        object.__setattr__(
            self,
            "head_weights",
            tuple((str(tag), float(w)) for tag, w in self.head_weights),
        )
        tags = self.tags
        for tag, w in self.head_weights:
            if tag not in (CE_TAG,) + METRIC_TAGS:
                raise ConfigError(f"unknown head tag {tag!r}")
            if w < 0:
                raise ConfigError(f"head weight for {tag!r} is negative: {w}")
        n_metric = sum(tags.count(t) for t in METRIC_TAGS)
        if n_metric > 1:
            raise ConfigError("at most one contrastive/triplet head may be active")
        total = sum(w for _, w in self.head_weights)
        if abs(total - 1.0) > 1e-12:
            raise ConfigError(f"head weights must sum to 1, got {total!r} "
                              "(use MultitaskConfig.from_weights to normalize)")

    @classmethod
    def from_weights(cls, pairs, **kwargs) -> "MultitaskConfig":
        """Build a config, normalizing the weight vector to sum 1 if needed."""
        pairs = [(str(t), float(w)) for t, w in pairs]
        total = sum(w for _, w in pairs)
        if total <= 0:
            raise ConfigError("head weights must have a positive sum")
        if abs(total - 1.0) > 1e-12:
            warnings.warn(f"head weights sum to {total:g}; normalizing to 1",
                          stacklevel=2)
            pairs = [(t, w / total) for t, w in pairs]
        return cls(head_weights=tuple(pairs), **kwargs)

    @classmethod
    def single_ce(cls) -> "MultitaskConfig":
        return cls(head_weights=((CE_TAG, 1.0),))

    @classmethod
    def parse(cls, spec: str, **kwargs) -> "MultitaskConfig":
        """Parse ``"ce:0.35,ce:0.35,contrastive:0.3"`` into a config."""
        pairs = []
        for item in spec.split(","):
            tag, _, w = item.partition(":")
            if not w:
                raise ConfigError(f"weight spec item {item!r} is not tag:weight")
            try:
                pairs.append((tag.strip(), float(w)))
            except ValueError as exc:
                raise ConfigError(f"bad weight in {item!r}") from exc
        return cls.from_weights(pairs, **kwargs)

    @property
    def tags(self) -> tuple[str, ...]:
        return tuple(tag for tag, _ in self.head_weights)

    @property
    def weights(self) -> tuple[float, ...]:
        return tuple(w for _, w in self.head_weights)

    @property
    def n_ce_heads(self) -> int:
        return self.tags.count(CE_TAG)

    @property
    def metric_tag(self) -> str | None:
        for tag in self.tags:
            if tag in METRIC_TAGS:
                return tag
        return None

    @property
    def metric_weight(self) -> float:
        for tag, w in self.head_weights:
            if tag in METRIC_TAGS:
                return w
        return 0.0

    def describe(self) -> str:
        return ",".join(f"{t}:{w!r}" for t, w in self.head_weights)


def combine(parts, config: MultitaskConfig):
    """Weighted sum of per-head losses; gradients scaled by their weights.

    ``parts`` is an ordered list of (tag, loss, grads) where grads is a
    tuple of gradient matrices as returned by the loss function for that
    tag. Tag order must match ``config.head_weights`` exactly.

    Returns (total_loss, scaled_grads) with scaled_grads a list of tuples
    aligned with ``parts``.
    """
    tags = tuple(tag for tag, _, _ in parts)
    if tags != config.tags:
        raise ConfigError(f"loss tags {tags} do not match config tags {config.tags}")
    total = 0.0
    scaled = []
    for (tag, loss, grads), (_, w) in zip(parts, config.head_weights):
        total += w * loss
        scaled.append(tuple(w * g for g in grads))
    return total, scaled
