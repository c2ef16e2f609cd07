"""Node partitions: singleton and bridge-cut builtins, plus file ingestion."""
from __future__ import annotations

import os

from .graph import Graph, Partition, validate_partition

BUILTINS = ("singleton", "bridges")


def singleton_partition(n: int) -> Partition:
    return Partition(groups=tuple((i,) for i in range(n)), n=n)


def find_bridges(graph: Graph) -> list[tuple[int, int]]:
    """Bridge edges ``(u, v)`` with ``u < v``, found by DFS low-link.

    Iterative so deep paths do not hit the recursion limit.
    """
    n = graph.n
    adj = [graph.neighbors(i) for i in range(n)]
    disc = [-1] * n
    low = [0] * n
    bridges = []
    timer = 0
    for root in range(n):
        if disc[root] != -1:
            continue
        disc[root] = low[root] = timer
        timer += 1
        # frames: (node, parent, next neighbor position)
        stack = [(root, -1, 0)]
        while stack:
            u, parent, pos = stack[-1]
            if pos < len(adj[u]):
                stack[-1] = (u, parent, pos + 1)
                v = adj[u][pos]
                if v == parent:
                    continue
                if disc[v] == -1:
                    disc[v] = low[v] = timer
                    timer += 1
                    stack.append((v, u, 0))
                else:
                    low[u] = min(low[u], disc[v])
            else:
                stack.pop()
                if parent != -1:
                    low[parent] = min(low[parent], low[u])
                    if low[u] > disc[parent]:
                        bridges.append((min(u, parent), max(u, parent)))
    return sorted(bridges)


def bridge_partition(graph: Graph) -> Partition:
    """Connected components left after deleting every bridge.

    Groups are ordered by their smallest member.
    """
    cut = set(find_bridges(graph))
    n = graph.n
    comp = [-1] * n
    groups = []
    for start in range(n):
        if comp[start] != -1:
            continue
        label = len(groups)
        comp[start] = label
        members = [start]
        stack = [start]
        while stack:
            u = stack.pop()
            for v in graph.neighbors(u):
                if comp[v] == -1 and (min(u, v), max(u, v)) not in cut:
                    comp[v] = label
                    members.append(v)
                    stack.append(v)
        groups.append(tuple(sorted(members)))
    return Partition(groups=tuple(groups), n=n)


def partition_for(graph: Graph, source) -> Partition:
    """Resolve ``source`` (a builtin name, a :class:`Partition`, or a path
    to a partition JSON file) into a validated partition for ``graph``."""
    if isinstance(source, Partition):
        part = source
    elif source == "singleton":
        part = singleton_partition(graph.n)
    elif source == "bridges":
        part = bridge_partition(graph)
    elif isinstance(source, (str, os.PathLike)):
        from .io import read_partition

        part = read_partition(source)
    else:
        raise TypeError(f"unsupported partition source {source!r}")
    validate_partition(part, graph.n)
    if part.n != graph.n:
        from .errors import PartitionError

        raise PartitionError(f"partition covers {part.n} nodes, graph has {graph.n}")
    return part
