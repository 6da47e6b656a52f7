"""Stochastic graph augmentations used to build the two contrastive views."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from augcl.graphs import Graph, GraphError, canonical_edges
from augcl.seeding import derive

KINDS = ("node_drop", "edge_perturb", "attr_mask", "subgraph")
DEFAULT_RATIO = 0.2


@dataclass(frozen=True)
class AugmentationSpec:
    kind: str
    ratio: float = DEFAULT_RATIO

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown augmentation {self.kind!r}; expected one of {KINDS}")
        if not 0.0 <= self.ratio < 1.0:
            raise ValueError(f"ratio must lie in [0, 1), got {self.ratio}")


def default_pool(ratio: float = DEFAULT_RATIO) -> list[AugmentationSpec]:
    return [AugmentationSpec(k, ratio) for k in KINDS]


def _induced(g: Graph, keep: np.ndarray) -> Graph:
    keep = np.sort(keep)
    remap = np.full(g.node_count, -1, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    e = remap[g.edges]
    e = e[(e >= 0).all(axis=1)] if e.size else e.reshape(0, 2)
    return Graph(len(keep), e, g.features[keep], g.label)


def _node_drop(g: Graph, ratio: float, rng: np.random.Generator) -> Graph:
    k = min(math.floor(ratio * g.node_count), g.node_count - 1)
    drop = rng.choice(g.node_count, size=k, replace=False)
    keep = np.setdiff1d(np.arange(g.node_count), drop)
    return _induced(g, keep)


def _edge_perturb(g: Graph, ratio: float, rng: np.random.Generator) -> Graph:
    m, n = g.num_edges, g.node_count
    k = math.floor(ratio * m)
    if k == 0:
        return g
    removed = rng.choice(m, size=k, replace=False)
    kept = np.delete(g.edges, removed, axis=0)
    existing = {(int(u), int(v)) for u, v in g.edges}
    free = n * (n - 1) // 2 - m
    added: list[tuple[int, int]] = []
    if free >= k:
        chosen: set[tuple[int, int]] = set()
        while len(added) < k:
            u, v = (int(x) for x in rng.integers(n, size=2))
            if u == v:
                continue
            pair = (min(u, v), max(u, v))
            if pair in existing or pair in chosen:
                continue
            chosen.add(pair)
            added.append(pair)
    else:
        # Near-complete graph: take every free pair, then restore removed edges to keep the count.
        iu, iv = np.triu_indices(n, k=1)
        added = [(int(u), int(v)) for u, v in zip(iu, iv) if (int(u), int(v)) not in existing]
        back = g.edges[removed][: k - len(added)]
        added.extend((int(u), int(v)) for u, v in back)
    new = np.concatenate([kept, np.array(added, dtype=np.int64).reshape(-1, 2)])
    return Graph(n, canonical_edges(new), g.features, g.label)


def _attr_mask(g: Graph, ratio: float, rng: np.random.Generator) -> Graph:
    k = math.floor(ratio * g.node_count)
    x = g.features.copy()
    x[rng.choice(g.node_count, size=k, replace=False)] = 0.0
    return Graph(g.node_count, g.edges, x, g.label)


def _subgraph(g: Graph, ratio: float, rng: np.random.Generator) -> Graph:
    n = g.node_count
    length = math.ceil((1.0 - ratio) * n)
    neighbors: list[list[int]] = [[] for _ in range(n)]
    for u, v in g.edges:
        neighbors[u].append(int(v))
        neighbors[v].append(int(u))
    cur = int(rng.integers(n))
    visited = {cur}
    # ``length`` counts walk positions including the start node.
    for _ in range(length - 1):
        if not neighbors[cur]:
            break
        cur = neighbors[cur][int(rng.integers(len(neighbors[cur])))]
        visited.add(cur)
    return _induced(g, np.fromiter(visited, dtype=np.int64))


_APPLY = {
    "node_drop": _node_drop,
    "edge_perturb": _edge_perturb,
    "attr_mask": _attr_mask,
    "subgraph": _subgraph,
}


def apply_augmentation(g: Graph, spec: AugmentationSpec, seed) -> Graph:
    """Apply one augmentation; identical ``(g, spec, seed)`` gives identical output."""
    if g.node_count == 0:
        raise GraphError("cannot augment an empty graph")
    if spec.ratio == 0.0:
        return g
    return _APPLY[spec.kind](g, spec.ratio, np.random.default_rng(seed))


def sample_two_views(g: Graph, pool: Sequence[AugmentationSpec], seed) -> tuple[Graph, Graph]:
    """Draw two specs from ``pool`` with replacement and apply them with independent sub-seeds."""
    if not pool:
        raise ValueError("augmentation pool is empty")
    a, b = draw_specs(pool, seed)
    return apply_augmentation(g, a, derive(seed, 1)), apply_augmentation(g, b, derive(seed, 2))


def draw_specs(pool: Sequence[AugmentationSpec], seed) -> tuple[AugmentationSpec, AugmentationSpec]:
    """The pair of specs :func:`sample_two_views` would use for ``seed``."""
    if not pool:
        raise ValueError("augmentation pool is empty")
    i, j = np.random.default_rng(derive(seed, 0)).integers(len(pool), size=2)
    return pool[i], pool[j]
