"""BA2-Motif style benchmark: a preferential-attachment base graph with a
5-cycle (class 0) or house (class 1) motif hanging off a single edge."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Dataset, Graph, degree_onehot_features, graph_from_edges
from .rng import Xoshiro256

MOTIFS = {
    "cycle5": [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)],
    # 5-cycle plus the chord 1-4 closing the roof triangle 0-1-4
    "house5": [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (1, 4)],
}
MOTIF_FOR_CLASS = ("cycle5", "house5")


@dataclass(frozen=True)
class SynthConfig:
    graph_count: int = 500
    base_nodes: int = 20
    ba_attach: int = 1
    degree_cap: int = 10
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.graph_count < 2:
            raise ValueError("need at least two graphs")
        if self.base_nodes < 5:
            raise ValueError("base graph must be at least as large as the motif")
        if self.ba_attach < 1:
            raise ValueError("ba_attach must be at least 1")


def ba_edges(n: int, attach: int, rng: Xoshiro256) -> list[tuple[int, int]]:
    """Preferential attachment with weights ``degree + 1``, grown from one node."""
    edges = []
    deg = [0] * n
    for new in range(1, n):
        k = min(attach, new)
        weights = [deg[v] + 1 for v in range(new)]
        chosen = []
        for _ in range(k):
            total = sum(weights[v] for v in range(new) if v not in chosen)
            r = rng.random() * total
            acc = 0.0
            pick = None
            for v in range(new):
                if v in chosen:
                    continue
                acc += weights[v]
                pick = v
                if r < acc:
                    break
            chosen.append(pick)
        for v in chosen:
            edges.append((v, new))
            deg[v] += 1
            deg[new] += 1
    return edges


def ba_graph(n: int, attach: int, rng: Xoshiro256) -> Graph:
    return graph_from_edges(n, ba_edges(n, attach, rng))


def attach_motif(base: Graph, motif: str, rng: Xoshiro256):
    """Append the motif's five nodes and join it to ``base`` by one edge.

    Returns ``(graph, gt_mask)``; features are left as ones and recomputed
    by the caller.
    """
    b = base.n
    edges = base.edges() + [(b + i, b + j) for i, j in MOTIFS[motif]]
    anchor_motif = b + rng.below(5)
    anchor_base = rng.below(b)
    edges.append((anchor_base, anchor_motif))
    mask = np.zeros(b + 5, dtype=bool)
    mask[b:] = True
    g = graph_from_edges(b + 5, edges, gt_mask=mask, id=base.id, label=base.label)
    return g, mask


def generate_dataset(config: SynthConfig = SynthConfig()) -> Dataset:
    """Balanced two-class dataset with degree one-hot features and a seeded
    train/test split."""
    rng = Xoshiro256(config.seed)
    half = config.graph_count // 2
    labels = [0] * (config.graph_count - half) + [1] * half
    rng.shuffle(labels)
    width = len(str(config.graph_count - 1))
    graphs = []
    for k, y in enumerate(labels):
        base = ba_graph(config.base_nodes, config.ba_attach, rng)
        g, _ = attach_motif(base, MOTIF_FOR_CLASS[y], rng)
        g = g.replace(
            features=degree_onehot_features(g, config.degree_cap),
            label=y,
            id=f"synth-{k:0{width}d}",
        )
        graphs.append(g)
    n_train = int(round(config.train_fraction * config.graph_count))
    order = rng.permutation(config.graph_count)
    split = ["test"] * config.graph_count
    for k in order[:n_train]:
        split[k] = "train"
    return Dataset(graphs=graphs, num_classes=2, split=split)
