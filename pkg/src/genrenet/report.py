"""Evaluation metrics, sweep orchestration, and table emission.

Sweeps enumerate a cartesian grid of axis values over a base
configuration. Every grid point trains with a seed derived from the
master seed and the point's canonical encoding, so reordering or
resuming a sweep cannot change any result.
"""

from __future__ import annotations

import hashlib
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from itertools import product

import numpy as np

from .data import EmbeddingDataset
from .errors import ConfigError, DataError
from .losses import MultitaskConfig
from .network import Activation, HeadRole, Network, NetworkConfig

# width ladder for the depth axis; the stated 3-layer base is the prefix
DEPTH_WIDTHS = (128, 64, 32, 16)

SWEEP_AXES = ("depth", "width_mult", "hidden", "dropout", "activation",
              "batch_norm", "snr_db", "noise_fraction", "weights",
              "learning_rate", "batch_size", "epochs")

PER_CLASS_LIMIT = 50   # omit per-class/confusion sections beyond this many classes


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------

@dataclass
class EvalReport:
    accuracy: float
    per_class_accuracy: tuple[float, ...]
    confusion: np.ndarray                  # true x predicted counts
    class_names: tuple[str, ...]
    fingerprint: str = ""
    runtime_seconds: float = 0.0

    @property
    def total(self) -> int:
        return int(self.confusion.sum())


def evaluate(net: Network, dataset: EmbeddingDataset, fingerprint: str = "",
             runtime_seconds: float = 0.0) -> EvalReport:
    """Accuracy, per-class accuracy, and confusion matrix on a split."""
    if dataset.n == 0:
        raise DataError("evaluate on an empty split")
    preds = net.predict(dataset.embeddings)
    k = dataset.num_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (dataset.labels, preds), 1)
    accuracy = float(np.trace(confusion) / dataset.n)
    row_sums = confusion.sum(axis=1)
    per_class = tuple(
        float(confusion[c, c] / row_sums[c]) if row_sums[c] else 0.0
        for c in range(k))
    return EvalReport(accuracy, per_class, confusion,
                      tuple(e.name for e in dataset.label_map),
                      fingerprint, runtime_seconds)


def config_fingerprint(net_config: NetworkConfig, train_config=None) -> str:
    """Stable short hash over the full configuration (seed included)."""
    payload = {"net": net_config.to_dict()}
    if train_config is not None:
        payload["train"] = train_config.to_dict()
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def format_percent(fraction: float) -> str:
    return f"{fraction * 100:.1f}"


def render_report(report: EvalReport, include_runtime: bool = False) -> str:
    """Aligned plain-text rendering; deterministic unless runtime is included."""
    out = io.StringIO()
    out.write(f"accuracy\t{format_percent(report.accuracy)}\n")
    out.write(f"samples\t{report.total}\n")
    if report.fingerprint:
        out.write(f"fingerprint\t{report.fingerprint}\n")
    if include_runtime:
        out.write(f"runtime_seconds\t{report.runtime_seconds:.2f}\n")
    if len(report.class_names) <= PER_CLASS_LIMIT:
        width = max(len(n) for n in report.class_names)
        out.write("\nper-class accuracy\n")
        for name, acc in zip(report.class_names, report.per_class_accuracy):
            out.write(f"  {name:<{width}}  {format_percent(acc)}\n")
        out.write("\nconfusion (rows true, cols predicted)\n")
        cell = max(5, max(len(str(int(v))) for v in report.confusion.ravel()))
        for c, name in enumerate(report.class_names):
            row = " ".join(f"{int(v):>{cell}}" for v in report.confusion[c])
            out.write(f"  {name:<{width}}  {row}\n")
    return out.getvalue()


def report_csv(report: EvalReport) -> str:
    """Machine-readable CSV; float cells use repr so parsing round-trips."""
    lines = [f"accuracy,{report.accuracy!r}"]
    lines.append(f"samples,{report.total}")
    if report.fingerprint:
        lines.append(f"fingerprint,{report.fingerprint}")
    if len(report.class_names) <= PER_CLASS_LIMIT:
        for name, acc in zip(report.class_names, report.per_class_accuracy):
            lines.append(f"class,{name},{acc!r}")
        for c, name in enumerate(report.class_names):
            cells = ",".join(str(int(v)) for v in report.confusion[c])
            lines.append(f"confusion,{name},{cells}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# sweep spec and grid
# --------------------------------------------------------------------------

def _canonical_value(v):
    if isinstance(v, Activation):
        return v.value
    if isinstance(v, MultitaskConfig):
        return v.describe()
    if isinstance(v, (tuple, list)):
        return tuple(int(x) for x in v)
    if isinstance(v, (bool, int, float, str)):
        return v
    raise ConfigError(f"unsupported sweep value {v!r}")


@dataclass(frozen=True)
class SweepSpec:
    axes: dict[str, tuple]
    cap: int = 512

    def __post_init__(self):
        if not self.axes:
            raise ConfigError("sweep needs at least one axis")
        norm = {}
        for name, values in self.axes.items():
            if name not in SWEEP_AXES:
                raise ConfigError(f"unknown sweep axis {name!r}; known: {SWEEP_AXES}")
            values = tuple(_canonical_value(v) for v in values)
            if not values:
                raise ConfigError(f"axis {name!r} has no values")
            norm[name] = values
        object.__setattr__(self, "axes", norm)
        size = 1
        for values in norm.values():
            size *= len(values)
        if size > self.cap:
            raise ConfigError(f"grid of {size} points exceeds cap {self.cap}")

    def grid(self) -> list[dict]:
        names = sorted(self.axes)
        return [dict(zip(names, combo))
                for combo in product(*(self.axes[n] for n in names))]


def point_label(point: dict) -> str:
    return ",".join(f"{k}={point[k]}" for k in sorted(point))


def point_seed(master_seed: int, point: dict) -> int:
    """Seed derived from the point itself, not its position in the grid."""
    blob = json.dumps({"master": int(master_seed), "point": point_label(point)},
                      sort_keys=True).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(blob, digest_size=8).digest(), "little")


def _scaled_widths(depth: int, mult: float) -> tuple[int, ...]:
    if not 1 <= depth <= len(DEPTH_WIDTHS):
        raise ConfigError(f"depth must lie in 1..{len(DEPTH_WIDTHS)}, got {depth}")
    return tuple(max(1, int(round(w * mult))) for w in DEPTH_WIDTHS[:depth])


def apply_point(base_net: NetworkConfig, base_train, point: dict, num_classes: int):
    """Instantiate the configs one grid point describes."""
    from .sampler import NoiseConfig
    from .trainer import heads_for_multitask

    net_kw: dict = {}
    train_kw: dict = {}
    depth = point.get("depth")
    mult = point.get("width_mult")
    if depth is not None or mult is not None:
        d = int(depth) if depth is not None else len(base_net.hidden_sizes)
        net_kw["hidden_sizes"] = _scaled_widths(d, float(mult) if mult else 1.0)
    if "hidden" in point:
        net_kw["hidden_sizes"] = tuple(point["hidden"])
    if "dropout" in point:
        net_kw["dropout_rate"] = float(point["dropout"])
    if "activation" in point:
        net_kw["activation"] = Activation(point["activation"])
    if "batch_norm" in point:
        net_kw["batch_norm"] = bool(point["batch_norm"])
    if "weights" in point:
        mt = MultitaskConfig.parse(point["weights"])
        train_kw["multitask"] = mt
        proj = next((h.output_dim for h in base_net.heads
                     if h.role is HeadRole.PROJECTION), 64)
        net_kw["heads"] = heads_for_multitask(mt, num_classes, projection_dim=proj)
    if "snr_db" in point or "noise_fraction" in point:
        base_noise = base_train.noise or NoiseConfig()
        train_kw["noise"] = NoiseConfig(
            snr_db=float(point.get("snr_db", base_noise.snr_db)),
            active_fraction=float(point.get("noise_fraction",
                                            base_noise.active_fraction)))
    for key, attr in (("learning_rate", "learning_rate"),
                      ("batch_size", "batch_size"), ("epochs", "epochs")):
        if key in point:
            train_kw[attr] = type(getattr(base_train, attr))(point[key])
    return replace(base_net, **net_kw), replace(base_train, **train_kw)


@dataclass
class SweepResult:
    point: dict
    seed: int
    report: EvalReport | None
    error: str | None = None

    @property
    def label(self) -> str:
        return point_label(self.point)


def run_sweep(splits, base_net: NetworkConfig, base_train, spec: SweepSpec,
              jobs: int = 1) -> list[SweepResult]:
    """One independent training run per grid point; failures are recorded
    per point and do not stop the sweep."""
    from .trainer import train   # local import: trainer builds reports from here

    num_classes = splits.train.num_classes

    def run_one(point: dict) -> SweepResult:
        seed = point_seed(base_train.seed, point)
        try:
            net_cfg, train_cfg = apply_point(base_net, base_train, point, num_classes)
            train_cfg = replace(train_cfg, seed=seed)
            _, _, rep = train(splits, net_cfg, train_cfg)
            return SweepResult(point, seed, rep)
        except Exception as exc:   # isolate per-point failures
            return SweepResult(point, seed, None, error=f"{type(exc).__name__}: {exc}")

    points = spec.grid()
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_one, points))
    else:
        results = [run_one(p) for p in points]
    return sorted(results, key=lambda r: r.label)


# --------------------------------------------------------------------------
# the multitask weight grid
# --------------------------------------------------------------------------

def multitask_weight_grid() -> list[MultitaskConfig]:
    """The 17 studied head/weight combinations: 2 two-head rows (one CE head
    plus contrastive or triplet at 0.5/0.5), 14 three-head rows (two CE heads
    plus one metric head), and 1 four-head row (three CE heads plus triplet;
    printed weights sum to 0.99 and are normalized with a warning)."""
    rows: list[MultitaskConfig] = [
        MultitaskConfig.from_weights([("ce", 0.5), ("contrastive", 0.5)]),
        MultitaskConfig.from_weights([("ce", 0.5), ("triplet", 0.5)]),
    ]
    three_head_contrastive = [
        (0.45, 0.45, 0.1), (0.40, 0.40, 0.2), (0.35, 0.35, 0.3),
        (0.30, 0.30, 0.4), (0.25, 0.25, 0.5), (0.20, 0.20, 0.6),
        (0.15, 0.15, 0.7), (0.10, 0.10, 0.8), (0.05, 0.05, 0.9),
        (0.07, 0.63, 0.3), (0.21, 0.49, 0.3), (0.49, 0.21, 0.3),
        (0.63, 0.07, 0.3),
    ]
    for a1, a2, b in three_head_contrastive:
        rows.append(MultitaskConfig.from_weights(
            [("ce", a1), ("ce", a2), ("contrastive", b)]))
    rows.append(MultitaskConfig.from_weights(
        [("ce", 0.35), ("ce", 0.35), ("triplet", 0.3)]))
    rows.append(MultitaskConfig.from_weights(
        [("ce", 0.23), ("ce", 0.23), ("ce", 0.23), ("triplet", 0.3)]))
    return rows


def multitask_sweep_spec(cap: int = 64) -> SweepSpec:
    return SweepSpec(axes={"weights": tuple(multitask_weight_grid())}, cap=cap)


# --------------------------------------------------------------------------
# table emission
# --------------------------------------------------------------------------

def emit_table(results: list[SweepResult], fmt: str = "text",
               include_runtime: bool = False) -> str:
    """Render sweep results as an aligned table or CSV.

    CSV accuracy cells use repr floats so they parse back exactly; the
    text table shows percentages with one decimal.
    """
    if not results:
        raise DataError("no results to tabulate")
    if fmt == "csv":
        lines = ["config,accuracy,samples,fingerprint,error"
                 + (",runtime_seconds" if include_runtime else "")]
        for r in results:
            if r.report is None:
                row = f"\"{r.label}\",,,,{r.error}"
                lines.append(row + ("," if include_runtime else ""))
            else:
                row = (f"\"{r.label}\",{r.report.accuracy!r},{r.report.total},"
                       f"{r.report.fingerprint},")
                if include_runtime:
                    row += f",{r.report.runtime_seconds!r}"
                lines.append(row)
        return "\n".join(lines) + "\n"
    if fmt != "text":
        raise ConfigError(f"unknown table format {fmt!r}")
    label_w = max(len(r.label) for r in results)
    lines = [f"{'config':<{label_w}}  {'acc%':>6}  {'n':>6}  fingerprint"]
    for r in results:
        if r.report is None:
            lines.append(f"{r.label:<{label_w}}  {'FAIL':>6}  {'-':>6}  {r.error}")
        else:
            lines.append(f"{r.label:<{label_w}}  "
                         f"{format_percent(r.report.accuracy):>6}  "
                         f"{r.report.total:>6}  {r.report.fingerprint}")
    return "\n".join(lines) + "\n"


def plot_series(results: list[SweepResult], axis: str) -> str:
    """x,y CSV for one sweep axis (accuracy vs axis value)."""
    rows = []
    for r in results:
        if r.report is not None and axis in r.point:
            rows.append((r.point[axis], r.report.accuracy))
    rows.sort(key=lambda t: str(t[0]))
    lines = [f"{axis},accuracy"] + [f"{x},{y!r}" for x, y in rows]
    return "\n".join(lines) + "\n"
