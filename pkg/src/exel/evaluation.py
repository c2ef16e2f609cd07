"""Fidelity under feature masking and ranking metrics against ground truth."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import DegenerateLabels, MissingNodeSet
from .gnn import ModelParams, predict
from .graph import Graph
from .rng import Xoshiro256


def mask_nodes(graph: Graph, nodes) -> Graph:
    """Copy of ``graph`` with the listed feature rows zeroed."""
    x = graph.features.copy()
    idx = sorted(int(i) for i in nodes)
    if idx:
        x[idx] = 0.0
    return graph.replace(features=x)


def _binary_f1(pred, true, positive):
    tp = int(np.sum((pred == positive) & (true == positive)))
    fp = int(np.sum((pred == positive) & (true != positive)))
    fn = int(np.sum((pred != positive) & (true == positive)))
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 2 * tp / denom


def f1_score(predictions, labels, positive_class: int = 1,
             num_classes: Optional[int] = None) -> float:
    """Binary F1 on ``positive_class``; macro-averaged when ``num_classes > 2``."""
    pred = np.asarray(predictions)
    true = np.asarray(labels)
    if num_classes is not None and num_classes > 2:
        return float(np.mean([_binary_f1(pred, true, c) for c in range(num_classes)]))
    return float(_binary_f1(pred, true, positive_class))


@dataclass
class FidelityResult:
    f1_original: float
    f1_masked: float
    fidelity: float
    predictions: list = field(default_factory=list)
    masked_predictions: list = field(default_factory=list)


def fidelity_f1(model: ModelParams, graphs: Sequence[Graph], node_sets, num_classes: int = 2,
                positive_class: int = 1, mode: str = "dataset") -> FidelityResult:
    """F1 on the original graphs minus F1 after zeroing each graph's nodes.

    ``node_sets`` is a sequence aligned with ``graphs`` or a mapping keyed by
    graph id. ``mode="per_graph"`` averages single-graph F1 values instead
    of scoring the split as a whole.
    """
    sets = []
    for k, g in enumerate(graphs):
        if isinstance(node_sets, Mapping):
            if g.id not in node_sets:
                raise MissingNodeSet(f"no node set for graph {g.id!r}")
            sets.append(node_sets[g.id])
        else:
            if k >= len(node_sets) or node_sets[k] is None:
                raise MissingNodeSet(f"no node set for graph {g.id!r}")
            sets.append(node_sets[k])
    labels = np.array([g.label for g in graphs])
    masked = [mask_nodes(g, s) for g, s in zip(graphs, sets)]
    p0 = predict(model, graphs)
    p1 = predict(model, masked)
    if mode == "dataset":
        f0 = f1_score(p0, labels, positive_class, num_classes)
        f1 = f1_score(p1, labels, positive_class, num_classes)
    elif mode == "per_graph":
        f0 = float(np.mean([f1_score(p0[k:k + 1], labels[k:k + 1], positive_class, num_classes)
                            for k in range(len(graphs))]))
        f1 = float(np.mean([f1_score(p1[k:k + 1], labels[k:k + 1], positive_class, num_classes)
                            for k in range(len(graphs))]))
    else:
        raise ValueError(f"unknown fidelity mode {mode!r}")
    return FidelityResult(f0, f1, f0 - f1, p0.tolist(), p1.tolist())


def _check_labels(labels):
    y = np.asarray(labels).astype(bool)
    if y.all() or not y.any():
        raise DegenerateLabels("labels must contain both classes")
    return y


def roc_auc(scores, labels) -> Optional[float]:
    """Mann-Whitney AUC with half credit for ties; ``None`` if one class."""
    try:
        y = _check_labels(labels)
    except DegenerateLabels:
        return None
    s = np.asarray(scores, dtype=np.float64)
    pos, neg = s[y], s[~y]
    greater = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return float((greater + 0.5 * ties) / (len(pos) * len(neg)))


def pr_auc(scores, labels) -> Optional[float]:
    """Average precision: sum of ``(R_k - R_{k-1}) * P_k`` over descending
    distinct score thresholds; ``None`` if one class."""
    try:
        y = _check_labels(labels)
    except DegenerateLabels:
        return None
    s = np.asarray(scores, dtype=np.float64)
    total_pos = int(y.sum())
    ap = 0.0
    prev_recall = 0.0
    for t in np.unique(s)[::-1]:
        sel = s >= t
        tp = int((sel & y).sum())
        precision = tp / int(sel.sum())
        recall = tp / total_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return float(ap)


def mean_defined(values) -> Optional[float]:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def random_selection_baseline(graph: Graph, count: Optional[int] = None,
                              fraction: Optional[float] = None, seed: int = 0,
                              rng: Optional[Xoshiro256] = None) -> list[int]:
    """Uniformly random node subset of a given size (or fraction of ``n``)."""
    if (count is None) == (fraction is None):
        raise ValueError("give exactly one of count or fraction")
    if count is None:
        count = int(round(fraction * graph.n))
    count = max(0, min(int(count), graph.n))
    rng = rng or Xoshiro256(seed)
    return sorted(rng.sample(graph.n, count))


def random_matched_sets(graphs: Sequence[Graph], reference_sets, seed: int = 0) -> list:
    """One random set per graph with the same size as the reference set,
    all drawn from a single seeded stream in graph order."""
    rng = Xoshiro256(seed)
    return [random_selection_baseline(g, count=len(s), rng=rng)
            for g, s in zip(graphs, reference_sets)]


def average_over_readouts(records: Sequence[dict], key: str = "fidelity") -> float:
    return float(np.mean([r[key] for r in records]))
