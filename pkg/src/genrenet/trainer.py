"""Training loop, optimizers, and the finite-difference gradient checker.

One step: optional noise augmentation, a single train-mode forward over
all heads, per-head losses (pairs/triplets drawn from within the batch
when a metric head is active), weighted combination, backprop through the
shared trunk summing head contributions, then an optimizer step.

Cross-entropy heads bind to sample roles in a fixed order: the first CE
head sees pair-first/anchor rows, the second sees pair-second/positive
rows, the third (triplet setups only) sees negative rows. Without a
metric head a single CE head sees every row.

The gradient checker reuses the exact same loss wiring
(:func:`multitask_step`) and compares analytic gradients against central
finite differences, parameter block by parameter block.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import report as report_mod
from .data import EmbeddingDataset
from .errors import ConfigError, DataError, NumericalError, ShapeError
from .losses import (CE_TAG, CONTRASTIVE_TAG, TRIPLET_TAG, MultitaskConfig,
                     PairBatch, TripletBatch, combine, contrastive,
                     cross_entropy, triplet)
from .network import HeadConfig, HeadRole, Mode, Network, NetworkConfig
from .sampler import (EpochPlan, NoiseConfig, PairIndices, TripletIndices,
                      add_noise, iterate_batches, sample_pairs, sample_triplets)
from .tensor import Rng

PROJECTION_DIM = 64


class Optimizer(str, Enum):
    ADAM = "adam"
    SGD = "sgd"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    batch_size: int = 64
    epochs: int = 50
    optimizer: Optimizer = Optimizer.ADAM
    seed: int = 0
    multitask: MultitaskConfig = field(default_factory=MultitaskConfig.single_ce)
    noise: NoiseConfig | None = None
    eval_every: int = 1

    def __post_init__(self):
        object.__setattr__(self, "optimizer", Optimizer(self.optimizer))
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "optimizer": self.optimizer.value,
            "seed": self.seed,
            "multitask": {
                "head_weights": [list(hw) for hw in self.multitask.head_weights],
                "contrastive": {
                    "margin": self.multitask.contrastive_params.margin,
                    "epsilon": self.multitask.contrastive_params.epsilon,
                    "convention": self.multitask.contrastive_params.convention.value,
                },
                "triplet": {
                    "margin": self.multitask.triplet_params.margin,
                    "hinge": self.multitask.triplet_params.hinge,
                    "epsilon": self.multitask.triplet_params.epsilon,
                },
            },
            "noise": None if self.noise is None else {
                "snr_db": self.noise.snr_db,
                "active_fraction": self.noise.active_fraction,
            },
            "eval_every": self.eval_every,
        }


@dataclass
class EpochStats:
    epoch: int
    head_losses: tuple[float, ...]   # aligned with multitask head order
    total_loss: float
    train_acc: float
    val_acc: float | None


@dataclass
class TrainState:
    network: Network
    moments: "AdamMoments"
    step: int = 0
    epoch: int = 0
    history: list[EpochStats] = field(default_factory=list)
    best_val_acc: float | None = None
    best_epoch: int | None = None
    plateau_epoch: int | None = None   # first epoch within 0.5 pts of the best


@dataclass
class DataSplits:
    train: EmbeddingDataset
    val: EmbeddingDataset | None
    test: EmbeddingDataset


# --------------------------------------------------------------------------
# optimizers
# --------------------------------------------------------------------------

@dataclass
class AdamMoments:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_network(cls, net: Network) -> "AdamMoments":
        return cls(m={k: np.zeros_like(p) for k, p in net.named_parameters()},
                   v={k: np.zeros_like(p) for k, p in net.named_parameters()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              moments: AdamMoments, lr: float, t: int,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """In-place Adam update with bias correction; t counts from 1."""
    if t < 1:
        raise ConfigError(f"adam step count must be >= 1, got {t}")
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != param shape "
                             f"{p.shape} for {name}")
        m = moments.m[name]
        v = moments.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float):
    for name, g in grads.items():
        params[name] -= lr * g
    return params


# --------------------------------------------------------------------------
# multitask wiring
# --------------------------------------------------------------------------

def heads_for_multitask(mt: MultitaskConfig, num_classes: int,
                        projection_dim: int = PROJECTION_DIM) -> tuple[HeadConfig, ...]:
    """One head per configured loss, in config order."""
    heads = []
    for tag, _ in mt.head_weights:
        if tag == CE_TAG:
            heads.append(HeadConfig(HeadRole.CLASSIFICATION, num_classes))
        else:
            heads.append(HeadConfig(HeadRole.PROJECTION, projection_dim))
    return tuple(heads)


def check_heads_match(config: NetworkConfig, mt: MultitaskConfig,
                      num_classes: int) -> None:
    expected = heads_for_multitask(
        mt, num_classes,
        projection_dim=next((h.output_dim for h in config.heads
                             if h.role is HeadRole.PROJECTION), PROJECTION_DIM))
    if config.heads != expected:
        raise ConfigError(f"network heads {config.heads} do not match the "
                          f"multitask layout {expected}")


def _ce_role_indices(mt: MultitaskConfig, n: int,
                     pairs: PairIndices | None,
                     triplets: TripletIndices | None) -> list[np.ndarray]:
    metric = mt.metric_tag
    if metric is None:
        roles = [np.arange(n)]
    elif metric == CONTRASTIVE_TAG:
        roles = [pairs.first, pairs.second]
    else:
        roles = [triplets.anchor, triplets.positive, triplets.negative]
    if mt.n_ce_heads > len(roles):
        raise ConfigError(f"{mt.n_ce_heads} CE heads but only {len(roles)} "
                          f"sample roles available for {metric or 'plain CE'}")
    return roles[:mt.n_ce_heads]


def multitask_step(outputs: list[np.ndarray], labels: np.ndarray,
                   mt: MultitaskConfig,
                   pairs: PairIndices | None = None,
                   triplets: TripletIndices | None = None):
    """Compute every configured loss on its head and combine.

    Returns (total, per_head_losses, head_grads) where head_grads are
    full-batch gradient matrices aligned with the heads, already scaled
    by the multitask weights and scattered back from role subsets.
    """
    n = len(labels)
    roles = iter(_ce_role_indices(mt, n, pairs, triplets))
    parts = []
    for pos, (tag, _) in enumerate(mt.head_weights):
        if tag == CE_TAG:
            ridx = next(roles)
            loss, grad = cross_entropy(outputs[pos][ridx], labels[ridx])
            parts.append((tag, loss, (grad,)))
        elif tag == CONTRASTIVE_TAG:
            z = outputs[pos]
            batch = PairBatch(z[pairs.first], z[pairs.second], pairs.y)
            loss, g1, g2 = contrastive(batch, mt.contrastive_params)
            parts.append((tag, loss, (g1, g2)))
        else:
            z = outputs[pos]
            batch = TripletBatch(z[triplets.anchor], z[triplets.positive],
                                 z[triplets.negative])
            loss, ga, gp, gn = triplet(batch, mt.triplet_params)
            parts.append((tag, loss, (ga, gp, gn)))

    total, scaled = combine(parts, mt)

    head_grads = [np.zeros((n, out.shape[1])) for out in outputs]
    roles = iter(_ce_role_indices(mt, n, pairs, triplets))
    for pos, ((tag, _, _), grads) in enumerate(zip(parts, scaled)):
        if tag == CE_TAG:
            np.add.at(head_grads[pos], next(roles), grads[0])
        elif tag == CONTRASTIVE_TAG:
            np.add.at(head_grads[pos], pairs.first, grads[0])
            np.add.at(head_grads[pos], pairs.second, grads[1])
        else:
            np.add.at(head_grads[pos], triplets.anchor, grads[0])
            np.add.at(head_grads[pos], triplets.positive, grads[1])
            np.add.at(head_grads[pos], triplets.negative, grads[2])
    per_head = tuple(loss for _, loss, _ in parts)
    return total, per_head, head_grads


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

def accuracy(net: Network, dataset: EmbeddingDataset) -> float:
    if dataset.n == 0:
        raise DataError("accuracy over an empty split")
    return float(np.mean(net.predict(dataset.embeddings) == dataset.labels))


def _check_splits(splits: DataSplits, config: NetworkConfig) -> None:
    named = [("train", splits.train), ("test", splits.test)]
    if splits.val is not None and splits.val.n:
        named.append(("val", splits.val))
    for name, ds in named:
        if ds.n == 0:
            raise DataError(f"{name} split is empty")
        if ds.dim != config.input_dim:
            raise DataError(f"{name} split dimension {ds.dim} != network "
                            f"input_dim {config.input_dim}")
    ref = tuple((e.name, e.source) for e in splits.train.label_map)
    for name, ds in named[1:]:
        if tuple((e.name, e.source) for e in ds.label_map) != ref:
            raise DataError(f"{name} split label map differs from train")


def train(splits: DataSplits, net_config: NetworkConfig, cfg: TrainConfig,
          log_path=None, on_step=None):
    """Full training run; returns (network, state, test-split report).

    The returned network carries the best-validation-accuracy parameters
    when a validation split is present, else the final-epoch parameters.
    If ``log_path`` is given, one tab-separated line per epoch is written:
    epoch, each head loss, total loss, train accuracy, val accuracy.
    """
    mt = cfg.multitask
    if mt.n_ce_heads < 1:
        raise ConfigError("training requires at least one cross-entropy head")
    _check_splits(splits, net_config)
    check_heads_match(net_config, mt, splits.train.num_classes)
    if net_config.batch_norm and cfg.batch_size < 2:
        raise ConfigError("batch_size must be >= 2 when batch norm is on")

    started = time.perf_counter()
    rng = Rng(cfg.seed)
    net = Network.init(net_config, rng)
    net.mode = Mode.TRAIN
    moments = AdamMoments.for_network(net)
    state = TrainState(network=net, moments=moments)
    use_metric = mt.metric_tag is not None
    has_val = splits.val is not None and splits.val.n > 0
    best_net = None
    warned_small = False

    log = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        if log:
            head_cols = "\t".join(f"loss_{tag}{i}" for i, (tag, _) in
                                  enumerate(mt.head_weights))
            log.write(f"#epoch\t{head_cols}\ttotal_loss\ttrain_acc\tval_acc\n")
        plan = EpochPlan(batch_size=cfg.batch_size)
        for epoch in range(cfg.epochs):
            sums = np.zeros(len(mt.head_weights))
            total_sum = 0.0
            steps = 0
            for X, y in iterate_batches(splits.train.embeddings,
                                        splits.train.labels, plan, rng):
                if net_config.batch_norm and len(y) < 2:
                    if not warned_small:
                        warnings.warn("dropping a trailing batch of 1 "
                                      "(too small for batch norm)")
                        warned_small = True
                    continue
                if cfg.noise is not None:
                    X = add_noise(X, cfg.noise, epoch, cfg.epochs, rng)
                outputs, cache = net.forward(X, Mode.TRAIN, rng)
                pairs = triplets = None
                if use_metric:
                    if mt.metric_tag == CONTRASTIVE_TAG:
                        _, pairs = sample_pairs(outputs[0], y, rng)
                    else:
                        _, triplets = sample_triplets(outputs[0], y, rng)
                total, per_head, head_grads = multitask_step(
                    outputs, y, mt, pairs, triplets)
                if not np.isfinite(total):
                    raise NumericalError(
                        f"non-finite loss at epoch {epoch} step {steps}: "
                        f"per-head losses {per_head}")
                grads = net.backward(cache, head_grads)
                state.step += 1
                if cfg.optimizer is Optimizer.ADAM:
                    adam_step(net.params, grads.params, moments,
                              cfg.learning_rate, state.step)
                else:
                    sgd_step(net.params, grads.params, cfg.learning_rate)
                sums += per_head
                total_sum += total
                steps += 1
                if on_step is not None:
                    on_step(epoch, steps - 1, per_head, total)

            if steps == 0:
                raise DataError("no usable batches in an epoch; "
                                "check batch_size vs dataset size")
            train_acc = accuracy(net, splits.train)
            val_acc = None
            if has_val and ((epoch + 1) % cfg.eval_every == 0
                            or epoch == cfg.epochs - 1):
                val_acc = accuracy(net, splits.val)
                if state.best_val_acc is None or val_acc > state.best_val_acc:
                    state.best_val_acc = val_acc
                    state.best_epoch = epoch
                    best_net = net.copy()

            state.epoch = epoch + 1
            stats = EpochStats(epoch, tuple(float(s) / steps for s in sums),
                               float(total_sum) / steps, train_acc, val_acc)
            state.history.append(stats)
            if log:
                head_part = "\t".join(repr(l) for l in stats.head_losses)
                val_part = "" if val_acc is None else repr(val_acc)
                log.write(f"{epoch}\t{head_part}\t{stats.total_loss!r}"
                          f"\t{train_acc!r}\t{val_part}\n")
    finally:
        if log:
            log.close()

    if state.best_val_acc is not None:
        # convergence marker: first epoch within 0.5 points of the run's best
        state.plateau_epoch = next(
            s.epoch for s in state.history
            if s.val_acc is not None and s.val_acc >= state.best_val_acc - 0.005)

    final = best_net if best_net is not None else net
    final.mode = Mode.EVAL
    state.network = final
    fingerprint = report_mod.config_fingerprint(net_config, cfg)
    rep = report_mod.evaluate(final, splits.test, fingerprint=fingerprint,
                              runtime_seconds=time.perf_counter() - started)
    return final, state, rep


# --------------------------------------------------------------------------
# gradient checking
# --------------------------------------------------------------------------

@dataclass
class GradCheckEntry:
    block: str
    max_rel_err: float


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    tolerance: float

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance

    def worst(self) -> GradCheckEntry:
        return max(self.entries, key=lambda e: e.max_rel_err)


def _locally_smooth(net: Network, X: np.ndarray, mt: MultitaskConfig,
                    pairs: PairIndices | None, triplets: TripletIndices | None,
                    margin: float) -> bool:
    """True when no piecewise seam lies within ``margin`` of the probe point."""
    from .network import Activation
    outputs, cache = net.forward(X, Mode.TRAIN)
    if net.config.activation in (Activation.RELU, Activation.LEAKY_RELU):
        for lc in cache.layers:
            if np.min(np.abs(lc.z_act)) < margin:
                return False
    if mt.metric_tag == CONTRASTIVE_TAG:
        pos = mt.tags.index(CONTRASTIVE_TAG)
        z = outputs[pos]
        cp = mt.contrastive_params
        dist = np.sqrt(np.sum((z[pairs.first] - z[pairs.second]) ** 2, axis=1)
                       + cp.epsilon)
        dissimilar = pairs.y == 1
        if np.any(np.abs(dist[dissimilar] - cp.margin) < margin):
            return False
    elif mt.metric_tag == TRIPLET_TAG:
        pos = mt.tags.index(TRIPLET_TAG)
        z = outputs[pos]
        tp = mt.triplet_params
        dap = np.sqrt(np.sum((z[triplets.anchor] - z[triplets.positive]) ** 2,
                             axis=1) + tp.epsilon)
        dan = np.sqrt(np.sum((z[triplets.anchor] - z[triplets.negative]) ** 2,
                             axis=1) + tp.epsilon)
        if tp.hinge and np.any(np.abs(dap - dan + tp.margin) < margin):
            return False
    return True


def grad_check(net_config: NetworkConfig, mt: MultitaskConfig, rng: Rng,
               tolerance: float = 1e-4, h: float = 1e-5,
               batch: int = 8) -> GradCheckReport:
    """Compare analytic gradients to central finite differences.

    Relative error per element is |a - n| / max(|a|, |n|, 1e-6), counted
    as zero when both magnitudes sit below 1e-8 (below what central
    differences can resolve; e.g. linear biases under batch norm have an
    exactly-zero gradient). Dropout must be disabled (its sampling is not
    differentiable); batch norm runs in train mode with batch statistics,
    which is exactly the path the optimizer sees.
    """
    if net_config.dropout_rate != 0:
        raise ConfigError("grad_check requires dropout_rate == 0")
    num_classes = next((hd.output_dim for hd in net_config.heads
                        if hd.role is HeadRole.CLASSIFICATION), 3)
    labels = np.arange(batch) % min(num_classes, 3)

    # Central differences need a locally smooth loss: redraw the probe
    # point while any ReLU kink or hinge boundary sits inside the +-h
    # neighborhood (the loss is piecewise-defined there and the two-sided
    # difference would straddle the seam).
    for _ in range(64):
        X = rng.normal(batch, net_config.input_dim)
        pairs = triplets = None
        if mt.metric_tag == CONTRASTIVE_TAG:
            _, pairs = sample_pairs(X, labels, rng)
        elif mt.metric_tag == TRIPLET_TAG:
            _, triplets = sample_triplets(X, labels, rng)
        net = Network.init(net_config, rng)
        if _locally_smooth(net, X, mt, pairs, triplets, margin=1e3 * h):
            break
    else:
        warnings.warn("grad_check could not find a kink-free probe point; "
                      "results may straddle a non-differentiable seam")

    def loss_value() -> float:
        outputs, _ = net.forward(X, Mode.TRAIN)
        total, _, _ = multitask_step(outputs, labels, mt, pairs, triplets)
        return total

    outputs, cache = net.forward(X, Mode.TRAIN)
    _, _, head_grads = multitask_step(outputs, labels, mt, pairs, triplets)
    analytic = net.backward(cache, head_grads).params

    entries = []
    for name, param in net.named_parameters():
        a_block = analytic[name]
        worst = 0.0
        flat = param.reshape(-1)
        a_flat = a_block.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_value()
            flat[i] = orig - h
            down = loss_value()
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            if max(abs(a_flat[i]), abs(numeric)) <= 1e-8:
                continue
            err = abs(a_flat[i] - numeric) / max(abs(a_flat[i]), abs(numeric), 1e-6)
            worst = max(worst, err)
        entries.append(GradCheckEntry(name, worst))
    return GradCheckReport(entries, tolerance)


# --------------------------------------------------------------------------
# gradient-check battery
# --------------------------------------------------------------------------

GRADCHECK_LOSSES = {
    "ce": MultitaskConfig.single_ce(),
    "contrastive": MultitaskConfig(head_weights=((CONTRASTIVE_TAG, 1.0),)),
    "triplet": MultitaskConfig(head_weights=((TRIPLET_TAG, 1.0),)),
    "multitask": MultitaskConfig(head_weights=(
        (CE_TAG, 0.35), (CE_TAG, 0.35), (CONTRASTIVE_TAG, 0.3))),
}

_CHECK_WIDTHS = (7, 6, 5, 4)


def gradcheck_cases(quick: bool = False):
    """(label, NetworkConfig, MultitaskConfig) triples covering every
    activation x batch-norm x depth 1-4 x loss combination; ``quick``
    trims to a representative corner set."""
    from .network import Activation
    activations = [Activation.RELU, Activation.SWISH] if quick else list(Activation)
    depths = [1, 3] if quick else [1, 2, 3, 4]
    bn_options = [False, True]
    losses = (["ce", "multitask"] if quick else list(GRADCHECK_LOSSES))
    cases = []
    for act in activations:
        for bn in bn_options:
            for depth in depths:
                for loss_name in losses:
                    mt = GRADCHECK_LOSSES[loss_name]
                    cfg = NetworkConfig(
                        input_dim=6,
                        hidden_sizes=_CHECK_WIDTHS[:depth],
                        activation=act,
                        dropout_rate=0.0,
                        batch_norm=bn,
                        heads=heads_for_multitask(mt, 3, projection_dim=4),
                    )
                    label = (f"{act.value},bn={'on' if bn else 'off'},"
                             f"depth={depth},loss={loss_name}")
                    cases.append((label, cfg, mt))
    return cases


def run_gradcheck_battery(tolerance: float = 1e-4, h: float = 1e-5,
                          quick: bool = False, seed: int = 1000):
    """Run grad_check on every case; returns (all_passed, results list)."""
    results = []
    all_passed = True
    for i, (label, cfg, mt) in enumerate(gradcheck_cases(quick)):
        rep = grad_check(cfg, mt, Rng(seed + i), tolerance=tolerance, h=h)
        results.append((label, rep))
        all_passed = all_passed and rep.passed
    return all_passed, results
