"""Graph, partition and dataset containers plus elementary transforms.

Adjacency is stored dense and without self-loops; self-loops only appear
inside :func:`normalized_adjacency`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import CoverageError, EmptyGroupError, OverlapError, PartitionError


def _frozen(a, dtype):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph with node features.

    ``gt_mask`` marks ground-truth important nodes when known.
    """

    features: np.ndarray
    adjacency: np.ndarray
    label: Optional[int] = None
    gt_mask: Optional[np.ndarray] = None
    id: str = ""

    def __post_init__(self):
        x = _frozen(self.features, np.float64)
        if x.ndim == 1:
            x = _frozen(x.reshape(-1, 1), np.float64)
        a = _frozen(self.adjacency, np.float64)
        n = x.shape[0]
        if n < 1:
            raise ValueError("graph must have at least one node")
        if a.shape != (n, n):
            raise ValueError(f"adjacency shape {a.shape} does not match {n} nodes")
        if not np.array_equal(a, a.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(a) != 0):
            raise ValueError("adjacency must have a zero diagonal")
        if not np.all((a == 0) | (a == 1)):
            raise ValueError("adjacency must be 0/1")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "adjacency", a)
        if self.gt_mask is not None:
            m = _frozen(self.gt_mask, bool)
            if m.shape != (n,):
                raise ValueError("gt_mask length must equal node count")
            object.__setattr__(self, "gt_mask", m)
        if self.label is not None:
            object.__setattr__(self, "label", int(self.label))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1).astype(np.int64)

    def edges(self) -> list[tuple[int, int]]:
        """Undirected edges as ``(i, j)`` with ``i < j``, sorted."""
        ii, jj = np.nonzero(np.triu(self.adjacency, k=1))
        return [(int(i), int(j)) for i, j in zip(ii, jj)]

    def neighbors(self, i: int) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.adjacency[i])]

    def replace(self, **changes) -> "Graph":
        kw = dict(
            features=self.features,
            adjacency=self.adjacency,
            label=self.label,
            gt_mask=self.gt_mask,
            id=self.id,
        )
        kw.update(changes)
        return Graph(**kw)

    def permute(self, perm: Sequence[int]) -> "Graph":
        """Relabel nodes so that new node ``k`` is old node ``perm[k]``."""
        p = np.asarray(perm, dtype=np.int64)
        return self.replace(
            features=self.features[p],
            adjacency=self.adjacency[np.ix_(p, p)],
            gt_mask=None if self.gt_mask is None else self.gt_mask[p],
        )

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        same_mask = (self.gt_mask is None and other.gt_mask is None) or (
            self.gt_mask is not None
            and other.gt_mask is not None
            and np.array_equal(self.gt_mask, other.gt_mask)
        )
        return (
            self.id == other.id
            and self.label == other.label
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.adjacency, other.adjacency)
            and same_mask
        )

    __hash__ = None


def graph_from_edges(n, edges, features=None, **kw) -> Graph:
    a = np.zeros((n, n))
    for i, j in edges:
        if i == j:
            raise ValueError("self-loops are not allowed")
        a[i, j] = a[j, i] = 1.0
    if features is None:
        features = np.ones((n, 1))
    return Graph(features=features, adjacency=a, **kw)


@dataclass(frozen=True)
class Partition:
    """Disjoint node groups covering ``{0..n-1}``; validated on construction."""

    groups: tuple
    n: int

    def __post_init__(self):
        groups = tuple(tuple(sorted(int(i) for i in g)) for g in self.groups)
        object.__setattr__(self, "groups", groups)
        validate_partition(self, self.n)

    @property
    def m(self) -> int:
        return len(self.groups)

    def sizes(self) -> list[int]:
        return [len(g) for g in self.groups]

    def membership(self) -> np.ndarray:
        """``membership()[j]`` is the index of the group holding node ``j``."""
        out = np.empty(self.n, dtype=np.int64)
        for s, g in enumerate(self.groups):
            out[list(g)] = s
        return out

    def as_sets(self) -> frozenset:
        return frozenset(frozenset(g) for g in self.groups)


def validate_partition(partition, n: int) -> None:
    """Raise a :class:`PartitionError` subclass unless ``partition`` is an
    m-partition of ``{0..n-1}``."""
    groups = partition.groups if isinstance(partition, Partition) else partition
    if n < 1:
        raise PartitionError("node count must be positive")
    if len(groups) == 0:
        raise EmptyGroupError("partition has no groups")
    owner = {}
    for s, g in enumerate(groups):
        if len(g) == 0:
            raise EmptyGroupError(f"group {s} is empty")
        for i in g:
            i = int(i)
            if not 0 <= i < n:
                raise PartitionError(f"index {i} outside 0..{n - 1}", index=i)
            if i in owner:
                raise OverlapError(
                    f"index {i} appears in groups {owner[i]} and {s}", index=i
                )
            owner[i] = s
    for i in range(n):
        if i not in owner:
            raise CoverageError(f"index {i} is not covered", index=i)


@dataclass(frozen=True, eq=False)
class Dataset:
    graphs: tuple
    num_classes: int
    split: tuple = field(default=())
    partitions: tuple = field(default=())

    def __post_init__(self):
        graphs = tuple(self.graphs)
        object.__setattr__(self, "graphs", graphs)
        split = tuple(self.split) if self.split else tuple("train" for _ in graphs)
        if len(split) != len(graphs):
            raise ValueError("split tags must cover all graphs")
        if any(t not in ("train", "test") for t in split):
            raise ValueError("split tags must be 'train' or 'test'")
        object.__setattr__(self, "split", split)
        parts = tuple(self.partitions) if self.partitions else tuple(None for _ in graphs)
        if len(parts) != len(graphs):
            raise ValueError("partitions must align with graphs")
        object.__setattr__(self, "partitions", parts)
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        for g in graphs:
            if g.label is not None and not 0 <= g.label < self.num_classes:
                raise ValueError(f"label {g.label} of graph {g.id!r} out of range")

    def __len__(self):
        return len(self.graphs)

    def subset(self, tag: str) -> "Dataset":
        if tag == "all":
            return self
        idx = [k for k, t in enumerate(self.split) if t == tag]
        return Dataset(
            graphs=[self.graphs[k] for k in idx],
            num_classes=self.num_classes,
            split=[tag] * len(idx),
            partitions=[self.partitions[k] for k in idx],
        )

    def labels(self) -> np.ndarray:
        return np.array([g.label for g in self.graphs], dtype=np.int64)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and self.split == other.split
            and self.partitions == other.partitions
            and len(self.graphs) == len(other.graphs)
            and all(a == b for a, b in zip(self.graphs, other.graphs))
        )

    __hash__ = None


def normalized_adjacency(graph: Graph) -> np.ndarray:
    """Symmetric GCN propagation matrix ``D^-1/2 (A + I) D^-1/2``."""
    a = graph.adjacency + np.eye(graph.n)
    inv_sqrt = 1.0 / np.sqrt(a.sum(axis=1))
    return a * inv_sqrt[:, None] * inv_sqrt[None, :]


def mean_neighbor_operator(graph: Graph) -> np.ndarray:
    """Row-normalized adjacency; rows of isolated nodes stay zero."""
    deg = graph.adjacency.sum(axis=1)
    scale = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    return graph.adjacency * scale[:, None]


def degree_onehot_features(graph: Graph, max_degree: int = 10) -> np.ndarray:
    if max_degree < 1:
        raise ValueError("max_degree must be at least 1")
    deg = np.minimum(graph.degrees(), max_degree)
    out = np.zeros((graph.n, max_degree + 1))
    out[np.arange(graph.n), deg] = 1.0
    return out
