import os
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from augcl.graphs import (
    Graph,
    GraphCollection,
    GraphError,
    SyntheticSpec,
    TUParseError,
    batch_graphs,
    canonical_edges,
    gen_synthetic,
    merge_graphs,
    parse_tu_dataset,
    read_cache,
    stratified_folds,
    write_cache,
    write_tu_dataset,
)


def write_fixture(d: Path, name="TOY", newline="\n", node_labels=True, labels="1\n2\n"):
    d.mkdir(parents=True, exist_ok=True)
    # graph 1: triangle on nodes 1-3 (listed in both directions); graph 2: edge 4-5
    a = ["1, 2", "2, 1", "2, 3", "3, 2", "1, 3", "3, 1", "4, 5", "5, 4"]
    (d / f"{name}_A.txt").write_bytes(newline.join(a).encode() + newline.encode())
    (d / f"{name}_graph_indicator.txt").write_text("1\n1\n1\n2\n2\n")
    (d / f"{name}_graph_labels.txt").write_text(labels)
    if node_labels:
        (d / f"{name}_node_labels.txt").write_text("0\n3\n0\n3\n0\n")
    return d


def test_hand_fixture(tmp_path):
    coll = parse_tu_dataset(write_fixture(tmp_path), "TOY", use_cache=False)
    assert [g.node_count for g in coll] == [3, 2]
    assert [g.num_edges for g in coll] == [3, 1]
    assert coll.feature_dim == 2 and coll.class_count == 2
    assert coll.labels.tolist() == [0, 1]
    assert coll[0].features.tolist() == [[1, 0], [0, 1], [1, 0]]


def test_crlf_accepted(tmp_path):
    a = parse_tu_dataset(write_fixture(tmp_path / "a"), "TOY", use_cache=False)
    b = parse_tu_dataset(write_fixture(tmp_path / "b", newline="\r\n"), "TOY", use_cache=False)
    assert a.same_as(b)


def test_degree_fallback(tmp_path):
    coll = parse_tu_dataset(write_fixture(tmp_path, node_labels=False), "TOY", use_cache=False)
    # max degree 2 -> 3 one-hot columns
    assert coll.feature_dim == 3
    assert coll[0].features.argmax(axis=1).tolist() == [2, 2, 2]
    assert coll[1].features.argmax(axis=1).tolist() == [1, 1]


def test_labels_remapped_in_sorted_order(tmp_path):
    coll = parse_tu_dataset(write_fixture(tmp_path, labels="1\n-1\n"), "TOY", use_cache=False)
    assert coll.labels.tolist() == [1, 0]


def test_empty_label_file(tmp_path):
    with pytest.raises(TUParseError):
        parse_tu_dataset(write_fixture(tmp_path, labels=""), "TOY", use_cache=False)


def test_missing_file(tmp_path):
    d = write_fixture(tmp_path)
    (d / "TOY_graph_indicator.txt").unlink()
    with pytest.raises(TUParseError, match="missing"):
        parse_tu_dataset(d, "TOY", use_cache=False)


def test_non_integer_token_reports_line(tmp_path):
    d = write_fixture(tmp_path)
    (d / "TOY_A.txt").write_text("1, 2\n2, x\n")
    with pytest.raises(TUParseError) as exc:
        parse_tu_dataset(d, "TOY", use_cache=False)
    assert exc.value.line == 2


def test_edge_crossing_graphs_reports_line(tmp_path):
    d = write_fixture(tmp_path)
    (d / "TOY_A.txt").write_text("1, 2\n3, 4\n")
    with pytest.raises(TUParseError) as exc:
        parse_tu_dataset(d, "TOY", use_cache=False)
    assert exc.value.line == 2


def test_mutag(mutag_dir, tmp_path):
    coll = parse_tu_dataset(mutag_dir, "MUTAG", use_cache=False)
    assert len(coll) == 188
    assert np.mean([g.node_count for g in coll]) == pytest.approx(17.93, abs=0.005)
    assert coll.feature_dim == 7 and coll.class_count == 2
    assert np.bincount(coll.labels).tolist() == [63, 125]
    sizes = sorted(len(f) for f in stratified_folds(coll.labels, 10, 0))
    assert set(sizes) <= {18, 19} and sum(sizes) == 188


def test_cache_round_trip(tmp_path, rng):
    coll = gen_synthetic(SyntheticSpec(graphs_per_class=5), 3)
    write_cache(tmp_path / "x.augg", coll)
    assert read_cache(tmp_path / "x.augg").same_as(coll)


def test_sidecar_cache_used_and_invalidated(tmp_path):
    d = write_fixture(tmp_path)
    first = parse_tu_dataset(d, "TOY")
    assert (d / "TOY.augg").is_file()
    assert parse_tu_dataset(d, "TOY").same_as(first)
    # change a source file -> stale cache ignored
    (d / "TOY_graph_labels.txt").write_text("2\n1\n")
    st = os.stat(d / "TOY_graph_labels.txt")
    os.utime(d / "TOY_graph_labels.txt", ns=(st.st_atime_ns, st.st_mtime_ns + 10**9))
    assert parse_tu_dataset(d, "TOY").labels.tolist() == [1, 0]


def test_cache_rejects_garbage(tmp_path):
    (tmp_path / "bad.augg").write_bytes(b"NOPE" + b"\0" * 20)
    with pytest.raises(GraphError):
        read_cache(tmp_path / "bad.augg")


def test_tu_write_read_round_trip(tmp_path):
    coll = gen_synthetic(SyntheticSpec(graphs_per_class=4), 0)
    write_tu_dataset(coll, tmp_path, "SYN")
    back = parse_tu_dataset(tmp_path, "SYN", use_cache=False)
    assert len(back) == len(coll)
    for a, b in zip(coll, back):
        assert np.array_equal(a.edges, b.edges) and a.label == b.label


def test_graph_invariants():
    x = np.ones((3, 1))
    with pytest.raises(GraphError):
        Graph(3, np.array([[1, 1]]), x)
    with pytest.raises(GraphError):
        Graph(3, np.array([[0, 1], [0, 1]]), x)
    with pytest.raises(GraphError):
        Graph(3, np.array([[0, 3]]), x)
    with pytest.raises(GraphError):
        Graph(2, np.zeros((0, 2)), x)
    assert canonical_edges([(2, 0), (0, 2), (1, 1), (1, 0)]).tolist() == [[0, 1], [0, 2]]


def _fixture_collection():
    tri = Graph(3, np.array([[0, 1], [1, 2], [0, 2]]), np.eye(3)[:, :2] + 0.5)
    edge = Graph(2, np.array([[0, 1]]), np.array([[1.0, 2.0], [3.0, 4.0]]))
    return GraphCollection((tri, edge), 2, 1)


def test_batching_fixture():
    b = batch_graphs(_fixture_collection(), [0, 1])
    assert b.total_nodes == 5 and b.batch_size == 2
    assert b.pooling_index.tolist() == [0, 0, 0, 1, 1]
    assert b.edges.tolist() == [[0, 1], [1, 2], [0, 2], [3, 4]]
    again = batch_graphs(_fixture_collection(), [0, 1])
    assert np.array_equal(b.features, again.features) and np.array_equal(b.edges, again.edges)


def test_singleton_batch():
    g = Graph(1, np.zeros((0, 2)), np.ones((1, 3)))
    b = merge_graphs([g])
    assert b.pooling_index.tolist() == [0]


def test_batch_out_of_range():
    with pytest.raises(IndexError):
        batch_graphs(_fixture_collection(), [0, 2])


@given(st.lists(st.integers(0, 29), min_size=1, max_size=12), st.integers(0, 1000))
def test_unmerge_recovers_members(indices, seed):
    coll = gen_synthetic(SyntheticSpec(graphs_per_class=15, nodes=7), seed)
    b = batch_graphs(coll, indices)
    assert np.all(np.diff(b.pooling_index) >= 0) and b.pooling_index.max() == len(indices) - 1
    assert b.total_nodes == sum(coll[i].node_count for i in indices)
    for feats, i in zip(b.unmerge(), indices):
        assert np.array_equal(feats, coll[i].features)


def test_synthetic_examples():
    coll = gen_synthetic(SyntheticSpec(classes=2, graphs_per_class=10), 5)
    assert len(coll) == 20 and np.bincount(coll.labels).tolist() == [10, 10]
    assert coll.same_as(gen_synthetic(SyntheticSpec(classes=2, graphs_per_class=10), 5))
    cliques = gen_synthetic(SyntheticSpec(classes=1, graphs_per_class=2, intra_p=1.0, inter_p=0.0, nodes=6), 0)
    # one class -> 2 blocks of 3 -> two disjoint triangles
    assert cliques[0].num_edges == 6
    assert np.all(cliques[0].degrees() == 2)


def test_synthetic_edge_probability_within_three_sigma():
    spec = SyntheticSpec(classes=1, graphs_per_class=1, intra_p=0.6, inter_p=0.1, nodes=20)
    from augcl.graphs import block_assignment

    block = block_assignment(20, 2)
    iu, iv = np.triu_indices(20, 1)
    same = block[iu] == block[iv]
    hits_in = hits_out = 0
    for seed in range(50):
        e = gen_synthetic(spec, seed)[0].edges
        s = block[e[:, 0]] == block[e[:, 1]]
        hits_in += s.sum()
        hits_out += (~s).sum()
    for hits, n, p in ((hits_in, 50 * same.sum(), 0.6), (hits_out, 50 * (~same).sum(), 0.1)):
        assert abs(hits - n * p) <= 3 * np.sqrt(n * p * (1 - p))


def test_folds_examples():
    labels = np.array([0, 1] * 5)
    folds = stratified_folds(labels, 5, 0)
    assert all(sorted(labels[f].tolist()) == [0, 1] for f in folds)
    with pytest.raises(ValueError):
        stratified_folds(labels, 11, 0)
    with pytest.raises(ValueError):
        stratified_folds(labels, 1, 0)


@given(st.lists(st.integers(0, 3), min_size=6, max_size=60), st.integers(2, 6), st.integers(0, 100))
def test_folds_partition_and_balance(labels, k, seed):
    labels = np.array(labels)
    k = min(k, len(labels))
    folds = stratified_folds(labels, k, seed)
    allidx = np.concatenate(folds)
    assert sorted(allidx.tolist()) == list(range(len(labels)))
    for c in np.unique(labels):
        counts = [int((labels[f] == c).sum()) for f in folds]
        assert max(counts) - min(counts) <= 1
