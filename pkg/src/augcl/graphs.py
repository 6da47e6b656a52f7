"""Graph data model, TU-format ingestion, minibatching and fold splitting."""

from __future__ import annotations

import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_DEGREE_CAP = 64


class GraphError(ValueError):
    pass


class TUParseError(GraphError):
    def __init__(self, path: Path | str, line: int | None, message: str):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.line = line


def canonical_edges(pairs, node_count: int | None = None) -> np.ndarray:
    """Sorted unique ``(u, v)`` rows with ``u < v``; self-loops dropped."""
    e = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if node_count is not None and e.size and (e.min() < 0 or e.max() >= node_count):
        raise GraphError(f"edge endpoint out of range for {node_count} nodes")
    e = np.sort(e, axis=1)
    e = e[e[:, 0] != e[:, 1]]
    if e.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(e, axis=0)


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected attributed graph. Edges are stored once, as ``u < v``."""

    node_count: int
    edges: np.ndarray
    features: np.ndarray
    label: int | None = None

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != self.node_count:
            raise GraphError(f"feature matrix {x.shape} does not match {self.node_count} nodes")
        if e.size:
            if e.min() < 0 or e.max() >= self.node_count:
                raise GraphError("edge endpoint out of range")
            if np.any(e[:, 0] >= e[:, 1]):
                raise GraphError("edges must be stored as u < v without self-loops")
            if len(np.unique(e, axis=0)) != len(e):
                raise GraphError("duplicate edges")
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "features", x)

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.node_count)

    def same_as(self, other: Graph) -> bool:
        return (
            self.node_count == other.node_count
            and self.label == other.label
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.features, other.features)
        )


@dataclass(frozen=True, eq=False)
class GraphCollection:
    graphs: tuple[Graph, ...]
    feature_dim: int
    class_count: int
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "graphs", tuple(self.graphs))
        for g in self.graphs:
            if g.features.shape[1] != self.feature_dim:
                raise GraphError("graphs disagree on feature dimension")
            if g.label is not None and not 0 <= g.label < self.class_count:
                raise GraphError(f"label {g.label} outside [0, {self.class_count})")

    def __len__(self) -> int:
        return len(self.graphs)

    def __getitem__(self, i: int) -> Graph:
        return self.graphs[i]

    @property
    def labels(self) -> np.ndarray:
        return np.array([-1 if g.label is None else g.label for g in self.graphs], dtype=np.int64)

    def same_as(self, other: GraphCollection) -> bool:
        return (
            self.feature_dim == other.feature_dim
            and self.class_count == other.class_count
            and self.name == other.name
            and len(self) == len(other)
            and all(a.same_as(b) for a, b in zip(self.graphs, other.graphs))
        )


@dataclass(frozen=True, eq=False)
class GraphBatch:
    """Disjoint union of graphs; ``pooling_index[v]`` is the member id of node ``v``."""

    features: np.ndarray
    edges: np.ndarray
    pooling_index: np.ndarray
    batch_size: int
    node_counts: np.ndarray = field(repr=False)

    @property
    def total_nodes(self) -> int:
        return int(self.features.shape[0])

    def message_index(self) -> tuple[np.ndarray, np.ndarray]:
        """(source, target) arrays covering each undirected edge in both directions."""
        src = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        dst = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        return src, dst

    def unmerge(self) -> list[np.ndarray]:
        return [self.features[self.pooling_index == i] for i in range(self.batch_size)]


def merge_graphs(graphs: Sequence[Graph]) -> GraphBatch:
    if not graphs:
        raise GraphError("cannot batch zero graphs")
    counts = np.array([g.node_count for g in graphs], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    feats = np.concatenate([g.features for g in graphs], axis=0)
    edges = np.concatenate([g.edges + off for g, off in zip(graphs, offsets)], axis=0).astype(np.int64)
    pool = np.repeat(np.arange(len(graphs), dtype=np.int64), counts)
    return GraphBatch(feats, edges.reshape(-1, 2), pool, len(graphs), counts)


def batch_graphs(collection: GraphCollection, indices: Iterable[int]) -> GraphBatch:
    idx = [int(i) for i in indices]
    if not idx:
        raise GraphError("empty batch")
    for i in idx:
        if not 0 <= i < len(collection):
            raise IndexError(f"graph index {i} out of range for {len(collection)} graphs")
    return merge_graphs([collection[i] for i in idx])


def degree_features(node_count: int, edges: np.ndarray, dim: int, cap: int = DEFAULT_DEGREE_CAP) -> np.ndarray:
    deg = np.minimum(np.bincount(np.asarray(edges).ravel(), minlength=node_count), min(cap, dim - 1))
    x = np.zeros((node_count, dim))
    x[np.arange(node_count), deg] = 1.0
    return x


def _degree_dim(node_counts, edge_lists, cap: int) -> int:
    top = 0
    for n, e in zip(node_counts, edge_lists):
        if n and e.size:
            top = max(top, int(np.bincount(e.ravel(), minlength=n).max()))
    return min(top, cap) + 1


# --- TU text format ----------------------------------------------------------


def _read_rows(path: Path, width: int) -> list[tuple[int, list[int]]]:
    rows = []
    with open(path, newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            tokens = [t.strip() for t in line.split(",")]
            if len(tokens) != width:
                raise TUParseError(path, lineno, f"expected {width} value(s), got {len(tokens)}")
            try:
                rows.append((lineno, [int(t) for t in tokens]))
            except ValueError:
                raise TUParseError(path, lineno, f"non-integer token in {line!r}") from None
    return rows


def _source_files(directory: Path, name: str) -> dict[str, Path]:
    files = {
        "A": directory / f"{name}_A.txt",
        "graph_indicator": directory / f"{name}_graph_indicator.txt",
        "graph_labels": directory / f"{name}_graph_labels.txt",
    }
    for key, path in files.items():
        if not path.is_file():
            raise TUParseError(path, None, "missing mandatory file")
    node_labels = directory / f"{name}_node_labels.txt"
    if node_labels.is_file():
        files["node_labels"] = node_labels
    return files


def parse_tu_dataset(
    directory: str | Path,
    name: str,
    degree_cap: int = DEFAULT_DEGREE_CAP,
    use_cache: bool = True,
) -> GraphCollection:
    """Load a TU benchmark dataset (``NAME_A.txt`` and friends) from ``directory``.

    Node labels, when present, become one-hot features over the sorted set of
    observed label values; otherwise node degree one-hot (capped) is used.
    Graph labels are remapped to ``0..C-1`` in sorted order. A binary sidecar
    ``NAME.augg`` caches the parse and is invalidated by source mtimes.
    """
    directory = Path(directory)
    files = _source_files(directory, name)
    stamp = {k: os.stat(p).st_mtime_ns for k, p in sorted(files.items())}
    cache = directory / f"{name}.augg"
    if use_cache and cache.is_file():
        try:
            coll, meta = _read_cache(cache)
            if meta.get("stamp") == stamp and meta.get("degree_cap") == degree_cap:
                return coll
        except (GraphError, OSError, ValueError) as exc:
            log.warning("ignoring unreadable cache %s: %s", cache, exc)

    coll = _parse_tu(files, name, degree_cap)
    if use_cache:
        try:
            write_cache(cache, coll, {"stamp": stamp, "degree_cap": degree_cap})
        except OSError as exc:
            log.warning("could not write cache %s: %s", cache, exc)
    return coll


def _parse_tu(files: dict[str, Path], name: str, degree_cap: int) -> GraphCollection:
    label_rows = _read_rows(files["graph_labels"], 1)
    if not label_rows:
        raise TUParseError(files["graph_labels"], None, "empty graph label file")
    raw_labels = [r[0] for _, r in label_rows]
    n_graphs = len(raw_labels)

    ind_rows = _read_rows(files["graph_indicator"], 1)
    node_graph = np.empty(len(ind_rows), dtype=np.int64)
    for k, (lineno, (gid,)) in enumerate(ind_rows):
        if not 1 <= gid <= n_graphs:
            raise TUParseError(files["graph_indicator"], lineno, f"graph id {gid} outside 1..{n_graphs}")
        node_graph[k] = gid - 1
    n_nodes = len(node_graph)
    node_counts = np.bincount(node_graph, minlength=n_graphs)
    local = np.empty(n_nodes, dtype=np.int64)
    seen = np.zeros(n_graphs, dtype=np.int64)
    for v, gid in enumerate(node_graph):
        local[v] = seen[gid]
        seen[gid] += 1

    per_graph_edges: list[list[tuple[int, int]]] = [[] for _ in range(n_graphs)]
    for lineno, (a, b) in _read_rows(files["A"], 2):
        if not (1 <= a <= n_nodes and 1 <= b <= n_nodes):
            raise TUParseError(files["A"], lineno, f"edge ({a}, {b}) references unknown node")
        ga, gb = node_graph[a - 1], node_graph[b - 1]
        if ga != gb:
            raise TUParseError(files["A"], lineno, f"edge ({a}, {b}) crosses graphs {ga + 1} and {gb + 1}")
        per_graph_edges[ga].append((local[a - 1], local[b - 1]))
    edge_lists = [canonical_edges(e) for e in per_graph_edges]

    classes = sorted(set(raw_labels))
    label_map = {c: i for i, c in enumerate(classes)}

    if "node_labels" in files:
        nl_rows = _read_rows(files["node_labels"], 1)
        if len(nl_rows) != n_nodes:
            raise TUParseError(files["node_labels"], None, f"{len(nl_rows)} node labels for {n_nodes} nodes")
        values = np.array([r[0] for _, r in nl_rows], dtype=np.int64)
        uniq = np.unique(values)
        onehot = np.zeros((n_nodes, len(uniq)))
        onehot[np.arange(n_nodes), np.searchsorted(uniq, values)] = 1.0
        dim = len(uniq)
        feats = [onehot[node_graph == g] for g in range(n_graphs)]
    else:
        dim = _degree_dim(node_counts, edge_lists, degree_cap)
        feats = [degree_features(int(n), e, dim, degree_cap) for n, e in zip(node_counts, edge_lists)]

    graphs = tuple(
        Graph(int(node_counts[g]), edge_lists[g], feats[g], label_map[raw_labels[g]]) for g in range(n_graphs)
    )
    return GraphCollection(graphs, dim, len(classes), name)


def write_tu_dataset(collection: GraphCollection, directory: str | Path, name: str) -> None:
    """Write ``collection`` in TU layout (edges listed in both directions)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    a_lines, ind_lines, lab_lines = [], [], []
    offset = 0
    for gid, g in enumerate(collection.graphs, start=1):
        for u, v in g.edges:
            a_lines.append(f"{u + offset + 1}, {v + offset + 1}")
            a_lines.append(f"{v + offset + 1}, {u + offset + 1}")
        ind_lines.extend([str(gid)] * g.node_count)
        lab_lines.append(str(0 if g.label is None else g.label))
        offset += g.node_count
    for suffix, lines in (("A", a_lines), ("graph_indicator", ind_lines), ("graph_labels", lab_lines)):
        (directory / f"{name}_{suffix}.txt").write_text("".join(line + "\n" for line in lines))


# --- binary cache ---------------------------------------------------------------

CACHE_MAGIC = b"AUGG"
CACHE_VERSION = 1


def _section(tag: bytes, payload: bytes) -> bytes:
    return tag + struct.pack("<Q", len(payload)) + payload


def write_cache(path: str | Path, coll: GraphCollection, meta: dict | None = None) -> None:
    """Serialize to the AUGG sidecar: magic, version u32, tagged length-prefixed sections."""
    info = dict(meta or {})
    info.update(name=coll.name, feature_dim=coll.feature_dim, class_count=coll.class_count)
    counts = np.array([g.node_count for g in coll.graphs], dtype="<i8")
    ecounts = np.array([g.num_edges for g in coll.graphs], dtype="<i8")
    edges = np.concatenate([g.edges.ravel() for g in coll.graphs] or [np.zeros(0)]).astype("<i8")
    feats = np.concatenate([g.features.ravel() for g in coll.graphs] or [np.zeros(0)]).astype("<f8")
    labels = coll.labels.astype("<i8")
    blob = b"".join(
        [
            CACHE_MAGIC,
            struct.pack("<I", CACHE_VERSION),
            _section(b"META", json.dumps(info, sort_keys=True).encode()),
            _section(b"NODE", counts.tobytes()),
            _section(b"ECNT", ecounts.tobytes()),
            _section(b"EDGE", edges.tobytes()),
            _section(b"FEAT", feats.tobytes()),
            _section(b"LABL", labels.tobytes()),
        ]
    )
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def _read_cache(path: str | Path) -> tuple[GraphCollection, dict]:
    buf = Path(path).read_bytes()
    if buf[:4] != CACHE_MAGIC:
        raise GraphError("bad cache magic")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != CACHE_VERSION:
        raise GraphError(f"unsupported cache version {version}")
    pos, sections = 8, {}
    while pos < len(buf):
        tag = buf[pos : pos + 4]
        (length,) = struct.unpack_from("<Q", buf, pos + 4)
        pos += 12
        if pos + length > len(buf):
            raise GraphError(f"truncated section {tag!r}")
        sections[tag] = buf[pos : pos + length]
        pos += length
    meta = json.loads(sections[b"META"])
    counts = np.frombuffer(sections[b"NODE"], dtype="<i8")
    ecounts = np.frombuffer(sections[b"ECNT"], dtype="<i8")
    edges = np.frombuffer(sections[b"EDGE"], dtype="<i8").reshape(-1, 2)
    dim = int(meta["feature_dim"])
    feats = np.frombuffer(sections[b"FEAT"], dtype="<f8").reshape(-1, dim)
    labels = np.frombuffer(sections[b"LABL"], dtype="<i8")
    graphs = []
    npos = epos = 0
    for n, m, y in zip(counts, ecounts, labels):
        graphs.append(
            Graph(
                int(n),
                edges[epos : epos + m].astype(np.int64),
                feats[npos : npos + n].astype(np.float64),
                None if y < 0 else int(y),
            )
        )
        npos += int(n)
        epos += int(m)
    coll = GraphCollection(tuple(graphs), dim, int(meta["class_count"]), meta.get("name", ""))
    return coll, meta


def read_cache(path: str | Path) -> GraphCollection:
    return _read_cache(path)[0]


# --- synthetic data ----------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Planted-partition generator: class ``c`` graphs have ``c + 2`` communities."""

    classes: int = 2
    graphs_per_class: int = 50
    intra_p: float = 0.7
    inter_p: float = 0.05
    nodes: int = 16
    degree_cap: int = DEFAULT_DEGREE_CAP

    def __post_init__(self):
        for p in (self.intra_p, self.inter_p):
            if not 0.0 <= p <= 1.0:
                raise GraphError(f"probability {p} outside [0, 1]")
        if self.classes < 1 or self.graphs_per_class < 1 or self.nodes < 1:
            raise GraphError("classes, graphs_per_class and nodes must be positive")


def block_assignment(nodes: int, blocks: int) -> np.ndarray:
    sizes = np.full(blocks, nodes // blocks)
    sizes[: nodes % blocks] += 1
    return np.repeat(np.arange(blocks), sizes)


def gen_synthetic(spec: SyntheticSpec | dict, seed: int) -> GraphCollection:
    if isinstance(spec, dict):
        spec = SyntheticSpec(**spec)
    rng = np.random.default_rng(seed)
    iu, iv = np.triu_indices(spec.nodes, k=1)
    raw = []
    for c in range(spec.classes):
        block = block_assignment(spec.nodes, c + 2)
        prob = np.where(block[iu] == block[iv], spec.intra_p, spec.inter_p)
        for _ in range(spec.graphs_per_class):
            keep = rng.random(len(iu)) < prob
            raw.append((np.stack([iu[keep], iv[keep]], axis=1).astype(np.int64), c))
    dim = _degree_dim([spec.nodes] * len(raw), [e for e, _ in raw], spec.degree_cap)
    graphs = tuple(
        Graph(spec.nodes, e, degree_features(spec.nodes, e, dim, spec.degree_cap), c) for e, c in raw
    )
    return GraphCollection(graphs, dim, spec.classes, "synthetic")


# --- folds --------------------------------------------------------------------


def stratified_folds(labels, k: int, seed: int) -> list[np.ndarray]:
    """Split indices into ``k`` folds with per-class counts differing by at most one.

    Classes are dealt round-robin; each class continues from the fold where the
    previous one stopped so total fold sizes stay balanced too.
    """
    labels = np.asarray(labels)
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > len(labels):
        raise ValueError(f"k={k} exceeds dataset size {len(labels)}")
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    cursor = 0
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        members = members[rng.permutation(len(members))]
        for i in members:
            folds[cursor % k].append(int(i))
            cursor += 1
    return [np.sort(np.array(f, dtype=np.int64)) for f in folds]
