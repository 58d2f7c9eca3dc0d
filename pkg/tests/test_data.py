import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from genrenet.data import (EmbeddingDataset, LabelEntry, load_dataset,
                           make_cluster_dataset, merge_label_spaces,
                           merged_origin, read_embeddings, read_labels,
                           read_manifest, split_by_assignments,
                           stratified_split, write_dataset, write_embeddings,
                           write_labels, write_manifest)
from genrenet.errors import DataError, FormatError
from genrenet.tensor import Rng


def simple_dataset(n_per_class=10, num_classes=3, dim=4, seed=0, source="ds"):
    rng = Rng(seed)
    emb = rng.normal(n_per_class * num_classes, dim)
    labels = np.repeat(np.arange(num_classes), n_per_class)
    label_map = tuple(LabelEntry(c, f"genre{c}", source) for c in range(num_classes))
    return EmbeddingDataset(emb, labels, label_map, source=source)


# --------------------------------------------------------------------------
# EMB1
# --------------------------------------------------------------------------

def test_emb1_byte_layout(tmp_path):
    path = tmp_path / "t.emb"
    write_embeddings(path, np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]))
    expected = (b"EMB1" + struct.pack("<III", 1, 2, 3)
                + struct.pack("<6f", 1, 2, 3, 4, 5, 6))
    assert path.read_bytes() == expected
    assert np.array_equal(read_embeddings(path),
                          np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]))


def test_emb1_round_trip_is_exact_in_float32(tmp_path):
    m = Rng(1).normal(17, 9)
    path = tmp_path / "r.emb"
    write_embeddings(path, m)
    back = read_embeddings(path)
    assert back.dtype == np.float64
    assert np.array_equal(back, m.astype(np.float32).astype(np.float64))


def test_emb1_truncated_payload(tmp_path):
    path = tmp_path / "bad.emb"
    blob = b"EMB1" + struct.pack("<III", 1, 10, 3) + b"\x00" * (9 * 3 * 4)
    path.write_bytes(blob)
    with pytest.raises(FormatError, match="offset"):
        read_embeddings(path)


def test_emb1_bad_magic_and_zero_dim(tmp_path):
    path = tmp_path / "bad.emb"
    path.write_bytes(b"XXXX" + struct.pack("<III", 1, 1, 1) + b"\x00" * 4)
    with pytest.raises(FormatError, match="magic"):
        read_embeddings(path)
    path.write_bytes(b"EMB1" + struct.pack("<III", 1, 1, 0))
    with pytest.raises(FormatError, match="dimension"):
        read_embeddings(path)


# --------------------------------------------------------------------------
# labels TSV
# --------------------------------------------------------------------------

def test_labels_round_trip(tmp_path):
    ds = simple_dataset()
    path = tmp_path / "l.tsv"
    write_labels(path, ds.labels, ds.label_map)
    labels, label_map = read_labels(path, source="ds")
    assert np.array_equal(labels, ds.labels)
    assert label_map == ds.label_map


def test_labels_first_appearance_order(tmp_path):
    path = tmp_path / "l.tsv"
    path.write_text("0\t7\tjazz\n1\t2\trock\n2\t7\tjazz\n3\t5\tpop\n",
                    encoding="utf-8")
    labels, label_map = read_labels(path)
    assert [e.name for e in label_map] == ["jazz", "rock", "pop"]
    assert labels.tolist() == [0, 1, 0, 2]
    assert [e.class_id for e in label_map] == [0, 1, 2]


def test_labels_reject_inconsistencies(tmp_path):
    path = tmp_path / "l.tsv"
    path.write_text("0\t1\tjazz\n1\t1\trock\n", encoding="utf-8")
    with pytest.raises(FormatError, match="renamed"):
        read_labels(path)
    path.write_text("0\t1\tjazz\n0\t1\tjazz\n", encoding="utf-8")
    with pytest.raises(FormatError, match="duplicate"):
        read_labels(path)
    path.write_text("0\t1\tjazz\n2\t1\tjazz\n", encoding="utf-8")
    with pytest.raises(FormatError, match="indices"):
        read_labels(path)


# --------------------------------------------------------------------------
# manifest
# --------------------------------------------------------------------------

def test_manifest_round_trip(tmp_path):
    ds = simple_dataset()
    manifest = write_dataset(tmp_path, ds, stem="toy")
    loaded, assignments = load_dataset(manifest)
    assert assignments is None
    assert loaded.source == "ds"
    assert loaded.num_classes == 3
    assert np.array_equal(loaded.labels, ds.labels)
    assert np.array_equal(loaded.embeddings,
                          ds.embeddings.astype(np.float32).astype(np.float64))


def test_manifest_missing_key(tmp_path):
    path = tmp_path / "m.mf"
    path.write_text("name=x\nembeddings=x.emb\n", encoding="utf-8")
    with pytest.raises(FormatError, match="labels"):
        read_manifest(path)


def test_manifest_split_assignments(tmp_path):
    ds = simple_dataset(n_per_class=4)
    write_dataset(tmp_path, ds, stem="toy")
    splits = ["train"] * 8 + ["val"] * 2 + ["test"] * 2
    (tmp_path / "toy.splits.tsv").write_text(
        "".join(f"{i}\t{s}\n" for i, s in enumerate(splits)), encoding="utf-8")
    write_manifest(tmp_path / "toy.mf", "ds", "toy.emb", "toy.labels.tsv",
                   splits_file="toy.splits.tsv")
    loaded, assignments = load_dataset(tmp_path / "toy.mf")
    tr, va, te = split_by_assignments(loaded, assignments)
    assert (tr.n, va.n, te.n) == (8, 2, 2)


def test_manifest_extras_and_comments(tmp_path):
    path = tmp_path / "m.mf"
    path.write_text("# comment\nname=x\nembeddings=a.emb\nlabels=a.tsv\n"
                    "extractor=byola\ncheckpoint=v2\n", encoding="utf-8")
    mf = read_manifest(path)
    assert mf.extractor == "byola"
    assert mf.extras == {"checkpoint": "v2"}


# --------------------------------------------------------------------------
# stratified split
# --------------------------------------------------------------------------

def test_split_balanced_dataset():
    ds = simple_dataset(n_per_class=100, num_classes=10)
    tr, va, te = stratified_split(ds, (0.8, 0.1, 0.1), seed=7)
    assert (tr.n, va.n, te.n) == (800, 100, 100)
    for part, expected in ((tr, 80), (va, 10), (te, 10)):
        assert np.all(part.class_counts() == expected)


def test_split_everything_to_train():
    ds = simple_dataset()
    tr, va, te = stratified_split(ds, (1.0, 0.0, 0.0), seed=1)
    assert (tr.n, va.n, te.n) == (ds.n, 0, 0)


def test_split_deterministic():
    ds = simple_dataset(n_per_class=30)
    a = stratified_split(ds, (0.8, 0.1, 0.1), seed=5)
    b = stratified_split(ds, (0.8, 0.1, 0.1), seed=5)
    for x, y in zip(a, b):
        assert np.array_equal(x.embeddings, y.embeddings)


@given(st.lists(st.integers(3, 40), min_size=1, max_size=6),
       st.integers(0, 2 ** 32))
def test_split_is_disjoint_and_exhaustive(class_sizes, seed):
    rng = Rng(seed)
    labels = np.concatenate([np.full(s, c) for c, s in enumerate(class_sizes)])
    emb = rng.normal(len(labels), 2)
    emb[:, 0] = np.arange(len(labels))   # unique marker per row
    label_map = tuple(LabelEntry(c, f"c{c}", "t") for c in range(len(class_sizes)))
    ds = EmbeddingDataset(emb, labels, label_map)
    tr, va, te = stratified_split(ds, (0.6, 0.2, 0.2), seed=seed)
    markers = np.concatenate([p.embeddings[:, 0] for p in (tr, va, te)])
    assert len(markers) == ds.n
    assert len(np.unique(markers)) == ds.n


def test_split_small_class_goes_to_train():
    labels = np.array([0, 0, 0, 0, 1, 1])
    emb = Rng(0).normal(6, 2)
    label_map = (LabelEntry(0, "big", "t"), LabelEntry(1, "small", "t"))
    ds = EmbeddingDataset(emb, labels, label_map)
    with pytest.warns(UserWarning, match="all in train"):
        tr, va, te = stratified_split(ds, (0.5, 0.25, 0.25), seed=2)
    assert np.sum(tr.labels == 1) == 2


def test_split_fraction_validation():
    ds = simple_dataset()
    with pytest.raises(DataError):
        stratified_split(ds, (0.5, 0.5, 0.5), seed=0)
    with pytest.raises(DataError):
        stratified_split(ds, (0.8, 0.3, -0.1), seed=0)


# --------------------------------------------------------------------------
# label-space union
# --------------------------------------------------------------------------

def test_merge_counts_classes():
    a = simple_dataset(num_classes=10, source="corpusA", seed=1)
    b = simple_dataset(num_classes=8, source="corpusB", seed=2)
    merged = merge_label_spaces(a, b)
    assert merged.num_classes == 18
    assert merged.n == a.n + b.n
    counts = merged.class_counts()
    assert np.array_equal(counts[:10], a.class_counts())
    assert np.array_equal(counts[10:], b.class_counts())


def test_merge_keeps_same_named_classes_distinct():
    a = simple_dataset(num_classes=2, source="A")
    b = simple_dataset(num_classes=2, source="B")
    merged = merge_label_spaces(a, b)   # both have genre0/genre1
    names = [(e.name, e.source) for e in merged.label_map]
    assert len(names) == len(set(names)) == 4


def test_merge_bijection_back_to_source():
    a = simple_dataset(num_classes=3, source="A")
    b = simple_dataset(num_classes=2, source="B")
    merged = merge_label_spaces(a, b)
    origins = [merged_origin(merged, lab) for lab in range(merged.num_classes)]
    assert origins == [("A", 0), ("A", 1), ("A", 2), ("B", 0), ("B", 1)]
    assert len(set(origins)) == merged.num_classes


def test_merge_with_empty_dataset():
    a = simple_dataset(source="A")
    empty = EmbeddingDataset(np.zeros((0, 4)), np.zeros(0, dtype=int), (),
                             source="B")
    merged = merge_label_spaces(a, empty)
    assert merged.num_classes == a.num_classes
    assert np.array_equal(merged.embeddings, a.embeddings)
    assert all(e.source == "A" for e in merged.label_map)


def test_merge_rejects_dimension_mismatch():
    a = simple_dataset(dim=4)
    b = simple_dataset(dim=5)
    with pytest.raises(DataError):
        merge_label_spaces(a, b)


# --------------------------------------------------------------------------
# synthetic clusters
# --------------------------------------------------------------------------

def test_cluster_dataset_separation():
    ds = make_cluster_dataset(num_classes=10, dim=64, per_class=5,
                              center_sep=6.0, seed=3)
    centers = np.vstack([ds.embeddings[ds.labels == c].mean(0)
                         for c in range(10)])
    d = np.sqrt(((centers[:, None] - centers[None, :]) ** 2).sum(-1))
    min_sep = d[np.triu_indices(10, k=1)].min()
    assert min_sep > 4.0   # sample means sit near the true 6-sigma centers


def test_cluster_dataset_deterministic():
    a = make_cluster_dataset(seed=4, per_class=3)
    b = make_cluster_dataset(seed=4, per_class=3)
    assert np.array_equal(a.embeddings, b.embeddings)


def test_dataset_invariant_validation():
    with pytest.raises(DataError):
        EmbeddingDataset(np.zeros((2, 3)), [0, 5],
                         (LabelEntry(0, "a", "s"),))
    with pytest.raises(DataError):
        EmbeddingDataset(np.array([[np.nan, 0.0]]), [0],
                         (LabelEntry(0, "a", "s"),))
