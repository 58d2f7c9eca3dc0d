"""Embedding dataset ingestion, on-disk formats, splits, and label unions.

On-disk contract (any producer in any language can emit these three files):

* Embeddings ("EMB1"): magic ``EMB1``, u32 little-endian version (1),
  u32 LE row count, u32 LE dimension, then rows x dim float32 LE values,
  row-major. Loaded matrices are widened to float64 in memory.
* Labels: UTF-8 text, one line per sample, ``index<TAB>class_id<TAB>name``.
  Class order in the label map is first-appearance order in the file;
  internal label values are indices into that map.
* Manifest: UTF-8 ``key=value`` lines (``#`` comments allowed). Keys:
  ``name``, ``embeddings``, ``labels``, ``extractor``, optional ``splits``
  (path to a TSV of ``index<TAB>train|val|test``), optional free-form
  extras such as ``checkpoint``. Relative paths resolve against the
  manifest's directory.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError
from .tensor import Matrix, Rng

EMB_MAGIC = b"EMB1"
EMB_VERSION = 1
KNOWN_DIMS = (3072, 2048, 128)   # byol-a / panns cnn14 / vggish embedding widths
SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class LabelEntry:
    class_id: int    # index into the label map
    name: str
    source: str      # dataset the class came from


@dataclass
class EmbeddingDataset:
    """Embedding rows, integer labels, and the class map.

    Treated as immutable after construction; nothing in this package
    writes into a loaded dataset, so instances are freely shared.
    """

    embeddings: Matrix
    labels: np.ndarray
    label_map: tuple[LabelEntry, ...]
    source: str = ""

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        self.label_map = tuple(self.label_map)
        if self.embeddings.ndim != 2:
            raise DataError(f"embeddings must be 2-D, got ndim={self.embeddings.ndim}")
        if len(self.labels) != self.embeddings.shape[0]:
            raise DataError(f"{len(self.labels)} labels for "
                            f"{self.embeddings.shape[0]} embedding rows")
        for i, entry in enumerate(self.label_map):
            if entry.class_id != i:
                raise DataError(f"label map entry {i} carries class_id {entry.class_id}")
        if len(self.labels) and (
                self.labels.min() < 0 or self.labels.max() >= len(self.label_map)):
            raise DataError(f"labels outside [0, {len(self.label_map)})")
        if not np.all(np.isfinite(self.embeddings)):
            raise DataError("embeddings contain non-finite values")

    @property
    def n(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    @property
    def num_classes(self) -> int:
        return len(self.label_map)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, indices) -> "EmbeddingDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return EmbeddingDataset(self.embeddings[indices], self.labels[indices],
                                self.label_map, self.source)


# --------------------------------------------------------------------------
# EMB1 binary format
# --------------------------------------------------------------------------

def write_embeddings(path, matrix: Matrix) -> None:
    """Write a matrix as EMB1 (float32 on disk)."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise DataError(f"embeddings must be 2-D, got ndim={m.ndim}")
    with open(path, "wb") as f:
        f.write(EMB_MAGIC)
        f.write(struct.pack("<III", EMB_VERSION, m.shape[0], m.shape[1]))
        f.write(np.ascontiguousarray(m, dtype="<f4").tobytes())


def read_embeddings(path) -> Matrix:
    """Read an EMB1 file, widening to float64."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16:
        raise FormatError(f"{path}: header needs 16 bytes, file has {len(blob)}")
    if blob[:4] != EMB_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r} at offset 0")
    version, rows, dim = struct.unpack_from("<III", blob, 4)
    if version != EMB_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at offset 4")
    if dim == 0:
        raise FormatError(f"{path}: zero dimension at offset 12")
    expected = 16 + rows * dim * 4
    if len(blob) != expected:
        raise FormatError(f"{path}: payload for {rows}x{dim} needs {expected} bytes, "
                          f"file has {len(blob)} (data ends at offset {len(blob)})")
    data = np.frombuffer(blob, dtype="<f4", count=rows * dim, offset=16)
    return data.reshape(rows, dim).astype(np.float64)


# --------------------------------------------------------------------------
# labels TSV
# --------------------------------------------------------------------------

def write_labels(path, labels, label_map) -> None:
    labels = np.asarray(labels, dtype=np.int64).ravel()
    with open(path, "w", encoding="utf-8") as f:
        for i, lab in enumerate(labels):
            f.write(f"{i}\t{int(lab)}\t{label_map[int(lab)].name}\n")


def read_labels(path, source: str = "") -> tuple[np.ndarray, tuple[LabelEntry, ...]]:
    """Parse a labels TSV; the label map follows first-appearance order.

    File class ids may be arbitrary integers; they are reindexed to map
    positions. The same id must always carry the same name.
    """
    rows: dict[int, int] = {}
    order: list[int] = []
    names: dict[int, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 tab-separated "
                                  f"fields, got {len(parts)}")
            try:
                idx, cid = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: non-integer index/class id") from exc
            name = parts[2]
            if idx in rows:
                raise FormatError(f"{path}:{lineno}: duplicate sample index {idx}")
            if cid in names:
                if names[cid] != name:
                    raise FormatError(f"{path}:{lineno}: class id {cid} renamed "
                                      f"{names[cid]!r} -> {name!r}")
            else:
                names[cid] = name
                order.append(cid)
            rows[idx] = cid
    if not rows:
        raise FormatError(f"{path}: empty labels file")
    n = len(rows)
    if sorted(rows) != list(range(n)):
        raise FormatError(f"{path}: sample indices are not exactly 0..{n - 1}")
    remap = {cid: pos for pos, cid in enumerate(order)}
    labels = np.array([remap[rows[i]] for i in range(n)], dtype=np.int64)
    label_map = tuple(LabelEntry(pos, names[cid], source)
                      for pos, cid in enumerate(order))
    return labels, label_map


# --------------------------------------------------------------------------
# manifest
# --------------------------------------------------------------------------

@dataclass
class Manifest:
    name: str
    embeddings_path: Path
    labels_path: Path
    extractor: str = "unknown"
    splits_path: Path | None = None
    extras: dict[str, str] = field(default_factory=dict)


def read_manifest(path) -> Manifest:
    path = Path(path)
    pairs: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key in pairs:
                raise FormatError(f"{path}:{lineno}: duplicate key {key!r}")
            pairs[key] = value
    for required in ("name", "embeddings", "labels"):
        if required not in pairs:
            raise FormatError(f"{path}: missing required key {required!r}")
    base = path.parent
    extras = {k: v for k, v in pairs.items()
              if k not in ("name", "embeddings", "labels", "extractor", "splits")}
    return Manifest(
        name=pairs["name"],
        embeddings_path=base / pairs["embeddings"],
        labels_path=base / pairs["labels"],
        extractor=pairs.get("extractor", "unknown"),
        splits_path=(base / pairs["splits"]) if "splits" in pairs else None,
        extras=extras,
    )


def write_manifest(path, name: str, embeddings_file: str, labels_file: str,
                   extractor: str = "unknown", splits_file: str | None = None,
                   extras: dict[str, str] | None = None) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"name={name}\n")
        f.write(f"embeddings={embeddings_file}\n")
        f.write(f"labels={labels_file}\n")
        f.write(f"extractor={extractor}\n")
        if splits_file:
            f.write(f"splits={splits_file}\n")
        for k, v in (extras or {}).items():
            f.write(f"{k}={v}\n")


def read_split_assignments(path, n: int) -> np.ndarray:
    """Read a per-sample split TSV into an array of 'train'/'val'/'test'."""
    out = np.array([""] * n, dtype=object)
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or parts[1] not in SPLIT_NAMES:
                raise FormatError(f"{path}:{lineno}: expected index<TAB>"
                                  f"{'|'.join(SPLIT_NAMES)}")
            idx = int(parts[0])
            if not 0 <= idx < n:
                raise FormatError(f"{path}:{lineno}: index {idx} out of range 0..{n - 1}")
            out[idx] = parts[1]
    missing = int(np.sum(out == ""))
    if missing:
        raise FormatError(f"{path}: {missing} samples have no split assignment")
    return out


def encode_class_sources(label_map) -> str | None:
    """Run-length ``source:count`` encoding of per-class source tags, used
    as a manifest extra so merged datasets survive a disk round-trip."""
    runs: list[tuple[str, int]] = []
    for entry in label_map:
        if any(c in entry.source for c in ":,"):
            return None
        if runs and runs[-1][0] == entry.source:
            runs[-1] = (entry.source, runs[-1][1] + 1)
        else:
            runs.append((entry.source, 1))
    return ",".join(f"{src}:{n}" for src, n in runs)


def decode_class_sources(text: str, num_classes: int) -> list[str]:
    out: list[str] = []
    for item in text.split(","):
        src, _, n = item.rpartition(":")
        try:
            out.extend([src] * int(n))
        except ValueError as exc:
            raise FormatError(f"bad class_sources entry {item!r}") from exc
    if len(out) != num_classes:
        raise FormatError(f"class_sources covers {len(out)} classes, "
                          f"dataset has {num_classes}")
    return out


def load_dataset(manifest_path) -> tuple[EmbeddingDataset, np.ndarray | None]:
    """Load the EMB1 + labels pair a manifest points to.

    Returns the dataset and, if the manifest names a splits file, the
    per-sample assignment array.
    """
    mf = read_manifest(manifest_path)
    embeddings = read_embeddings(mf.embeddings_path)
    labels, label_map = read_labels(mf.labels_path, source=mf.name)
    if "class_sources" in mf.extras:
        sources = decode_class_sources(mf.extras["class_sources"], len(label_map))
        label_map = tuple(replace(e, source=s) for e, s in zip(label_map, sources))
    if len(labels) != embeddings.shape[0]:
        raise DataError(f"{manifest_path}: embeddings have {embeddings.shape[0]} rows "
                        f"but labels file has {len(labels)}")
    if embeddings.shape[1] not in KNOWN_DIMS and mf.extractor in (
            "byola", "panns", "vggish"):
        raise DataError(f"{manifest_path}: extractor {mf.extractor!r} with "
                        f"unexpected dimension {embeddings.shape[1]}")
    ds = EmbeddingDataset(embeddings, labels, label_map, source=mf.name)
    assignments = None
    if mf.splits_path is not None:
        assignments = read_split_assignments(mf.splits_path, ds.n)
    return ds, assignments


# --------------------------------------------------------------------------
# splitting
# --------------------------------------------------------------------------

def stratified_split(dataset: EmbeddingDataset, fractions=(0.8, 0.1, 0.1),
                     seed: int = 12345):
    """Per-class proportional train/val/test split (largest-remainder).

    Classes with fewer samples than there are non-empty split parts go
    wholly to train, with a warning.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3:
        raise DataError(f"expected 3 split fractions, got {len(fractions)}")
    if any(f < 0 for f in fractions):
        raise DataError(f"split fractions must be non-negative: {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"split fractions must sum to 1, got {sum(fractions)!r}")
    n_parts = sum(1 for f in fractions if f > 0)
    rng = Rng(seed)
    parts: list[list[int]] = [[], [], []]
    for c in range(dataset.num_classes):
        idx = np.flatnonzero(dataset.labels == c)
        if idx.size == 0:
            continue
        idx = idx[rng.permutation(idx.size)]
        if idx.size < n_parts:
            warnings.warn(f"class {c} has {idx.size} samples; placing all in train",
                          stacklevel=2)
            parts[0].extend(idx.tolist())
            continue
        quota = [f * idx.size for f in fractions]
        alloc = [int(q) for q in quota]
        leftovers = idx.size - sum(alloc)
        remainders = sorted(range(3), key=lambda p: (-(quota[p] - alloc[p]), p))
        for p in remainders[:leftovers]:
            alloc[p] += 1
        start = 0
        for p in range(3):
            parts[p].extend(idx[start:start + alloc[p]].tolist())
            start += alloc[p]
    return tuple(dataset.subset(sorted(p)) for p in parts)


def split_by_assignments(dataset: EmbeddingDataset, assignments):
    """Materialize train/val/test subsets from a per-sample assignment array."""
    assignments = np.asarray(assignments, dtype=object)
    if len(assignments) != dataset.n:
        raise DataError(f"{len(assignments)} assignments for {dataset.n} samples")
    return tuple(dataset.subset(np.flatnonzero(assignments == part))
                 for part in SPLIT_NAMES)


# --------------------------------------------------------------------------
# label-space union
# --------------------------------------------------------------------------

def merge_label_spaces(a: EmbeddingDataset, b: EmbeddingDataset) -> EmbeddingDataset:
    """Concatenate two datasets into one label space: a's classes then b's.

    Classes are never merged by name; each keeps its source tag, so two
    genres spelled identically in different corpora stay distinct.
    """
    if a.n and b.n and a.dim != b.dim:
        raise DataError(f"embedding dimensions differ: {a.dim} vs {b.dim}")
    label_map = tuple(
        [replace(e, class_id=i, source=e.source or a.source)
         for i, e in enumerate(a.label_map)]
        + [replace(e, class_id=len(a.label_map) + i, source=e.source or b.source)
           for i, e in enumerate(b.label_map)]
    )
    if b.n:
        b_labels = b.labels + len(a.label_map)
        embeddings = np.vstack([a.embeddings, b.embeddings]) if a.n else b.embeddings
        labels = np.concatenate([a.labels, b_labels]) if a.n else b_labels
    else:
        embeddings, labels = a.embeddings, a.labels
    source = "+".join(s for s in (a.source, b.source) if s) or "merged"
    return EmbeddingDataset(embeddings, labels, label_map, source=source)


def merged_origin(dataset: EmbeddingDataset, label: int) -> tuple[str, int]:
    """Map a merged label back to (source dataset, original class index)."""
    entry = dataset.label_map[label]
    original = sum(1 for e in dataset.label_map[:label] if e.source == entry.source)
    return entry.source, original


# --------------------------------------------------------------------------
# synthetic data
# --------------------------------------------------------------------------

def make_cluster_dataset(num_classes: int = 10, dim: int = 64, per_class: int = 200,
                         std: float = 1.0, center_sep: float = 6.0,
                         seed: int = 0, source: str = "synth") -> EmbeddingDataset:
    """Gaussian clusters whose closest pair of centers is center_sep*std apart.

    Centers are drawn from an isotropic Gaussian and rescaled so the
    minimum pairwise distance equals ``center_sep * std`` exactly.
    """
    if num_classes < 2:
        raise DataError(f"need at least 2 classes, got {num_classes}")
    if dim < 1 or per_class < 1:
        raise DataError("dim and per_class must be positive")
    rng = Rng(seed)
    centers = rng.normal(num_classes, dim)
    dists = np.sqrt(((centers[:, None, :] - centers[None, :, :]) ** 2).sum(-1))
    min_dist = dists[np.triu_indices(num_classes, k=1)].min()
    centers *= center_sep * std / min_dist

    embeddings = np.vstack([
        centers[c] + rng.normal(per_class, dim, 0.0, std)
        for c in range(num_classes)
    ])
    labels = np.repeat(np.arange(num_classes), per_class)
    label_map = tuple(LabelEntry(c, f"cluster{c:02d}", source)
                      for c in range(num_classes))
    return EmbeddingDataset(embeddings, labels, label_map, source=source)


def write_dataset(out_dir, dataset: EmbeddingDataset, stem: str = "data",
                  extractor: str = "synthetic") -> Path:
    """Write the EMB1 + labels + manifest trio; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_embeddings(out_dir / f"{stem}.emb", dataset.embeddings)
    write_labels(out_dir / f"{stem}.labels.tsv", dataset.labels, dataset.label_map)
    manifest_path = out_dir / f"{stem}.mf"
    write_manifest(manifest_path, dataset.source or stem,
                   f"{stem}.emb", f"{stem}.labels.tsv", extractor=extractor)
    return manifest_path
