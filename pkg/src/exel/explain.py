"""Per-graph importance estimation by Group Lasso reconstruction of the
graph embedding from node embeddings."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .errors import DimensionMismatch, SchemaError
from .graph import Partition, validate_partition
from .io import EmbeddingBundle
from .partition import singleton_partition
from .solver import RegressionProblem, SolverConfig, cross_validate, solve

DEFAULT_DELTA = 1e-5
DEFAULT_COVERAGE = 0.70
DEFAULT_TOP_FRACTION = 0.30
METHODS = ("exel", "exel_node")


@dataclass(frozen=True, eq=False)
class ImportanceReport:
    graph_id: str
    alpha: np.ndarray
    beta: np.ndarray
    groups: tuple
    selected_groups: tuple
    selected_nodes: tuple
    lambda_used: float
    reconstruction_error: float
    delta: float
    method: str

    @property
    def n(self) -> int:
        return len(self.alpha)

    def partition(self) -> Partition:
        return Partition(groups=self.groups, n=self.n)

    def node_scores(self) -> np.ndarray:
        """``|beta|`` of each node's group (``|alpha_j|`` for singletons)."""
        out = np.zeros(self.n)
        for s, g in enumerate(self.groups):
            out[list(g)] = abs(self.beta[s])
        return out

    def to_json(self) -> dict:
        return {
            "graph_id": self.graph_id,
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "groups": [list(g) for g in self.groups],
            "selected_groups": list(self.selected_groups),
            "selected_nodes": list(self.selected_nodes),
            "lambda": float(self.lambda_used),
            "delta": float(self.delta),
            "reconstruction_error": float(self.reconstruction_error),
            "method": self.method,
        }

    @classmethod
    def from_json(cls, obj) -> "ImportanceReport":
        try:
            alpha = np.array(obj["alpha"], dtype=np.float64)
            groups = tuple(tuple(int(i) for i in g) for g in obj["groups"])
            validate_partition(groups, len(alpha))
            return cls(
                graph_id=str(obj["graph_id"]),
                alpha=alpha,
                beta=np.array(obj["beta"], dtype=np.float64),
                groups=groups,
                selected_groups=tuple(int(s) for s in obj["selected_groups"]),
                selected_nodes=tuple(int(i) for i in obj["selected_nodes"]),
                lambda_used=float(obj["lambda"]),
                reconstruction_error=float(obj["reconstruction_error"]),
                delta=float(obj["delta"]),
                method=str(obj["method"]),
            )
        except KeyError as exc:
            raise SchemaError("missing required field", str(exc.args[0])) from exc
        except (TypeError, ValueError) as exc:
            raise SchemaError(str(exc), "$") from exc

    def __eq__(self, other):
        if not isinstance(other, ImportanceReport):
            return NotImplemented
        return self.to_json() == other.to_json()

    __hash__ = None


def build_problem(bundle: EmbeddingBundle, partition: Partition) -> RegressionProblem:
    """Design ``Phi = H^T`` (column j is node j) and response ``z``."""
    if partition.n != bundle.n:
        raise DimensionMismatch(f"partition covers {partition.n} nodes, bundle has {bundle.n}")
    return RegressionProblem(bundle.node_embeddings.T, bundle.graph_embedding, partition)


def group_means(alpha, partition: Partition) -> np.ndarray:
    return np.array([float(np.mean(alpha[list(g)])) for g in partition.groups])


def select_groups(beta, delta: float) -> tuple:
    return tuple(int(s) for s in np.flatnonzero(np.abs(beta) > delta))


def explain(bundle: EmbeddingBundle, partition: Partition,
            lam: Union[float, str] = "auto", delta: float = DEFAULT_DELTA,
            config: SolverConfig = SolverConfig(), folds: int = 4, cv_seed: int = 0,
            method: Optional[str] = None) -> ImportanceReport:
    """Solve the reconstruction problem and threshold group means.

    ``lam="auto"`` picks the penalty by ``folds``-fold cross-validation over
    the default 20-point grid. Without an explicit ``method`` an all-singleton
    partition is tagged ``exel_node`` and anything else ``exel``.
    """
    if method is None:
        method = "exel_node" if partition.m == partition.n else "exel"
    if method not in METHODS:
        raise ValueError(f"unknown method tag {method!r}")
    problem = build_problem(bundle, partition)
    if lam == "auto":
        lam_value = cross_validate(problem, folds=folds, config=config, seed=cv_seed).best_lambda
    else:
        lam_value = float(lam)
    sol = solve(problem, config.with_lambda(lam_value))
    alpha = sol.alpha
    beta = group_means(alpha, partition)
    chosen = select_groups(beta, delta)
    nodes = tuple(sorted(i for s in chosen for i in partition.groups[s]))
    resid = float(np.linalg.norm(problem.response - problem.design @ alpha))
    return ImportanceReport(
        graph_id=bundle.graph_id,
        alpha=alpha,
        beta=beta,
        groups=partition.groups,
        selected_groups=chosen,
        selected_nodes=nodes,
        lambda_used=lam_value,
        reconstruction_error=resid,
        delta=delta,
        method=method,
    )


def explain_node_level(bundle: EmbeddingBundle, lam: Union[float, str] = "auto",
                       delta: float = DEFAULT_DELTA, config: SolverConfig = SolverConfig(),
                       folds: int = 4, cv_seed: int = 0) -> ImportanceReport:
    """Plain Lasso variant: every node is its own group."""
    return explain(bundle, singleton_partition(bundle.n), lam, delta, config, folds,
                   cv_seed, method="exel_node")


def thread_count() -> int:
    """Worker cap from ``EXEL_THREADS`` (0 or unset means one per CPU)."""
    raw = os.environ.get("EXEL_THREADS", "0").strip() or "0"
    try:
        k = int(raw)
    except ValueError:
        raise ValueError(f"EXEL_THREADS must be an integer, got {raw!r}") from None
    return k if k > 0 else (os.cpu_count() or 1)


def explain_many(bundles: Sequence[EmbeddingBundle], partitions: Sequence[Partition],
                 **kwargs) -> list[ImportanceReport]:
    """Explain a batch; results keep input order."""
    workers = min(thread_count(), max(1, len(bundles)))
    if workers == 1:
        return [explain(b, p, **kwargs) for b, p in zip(bundles, partitions)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda bp: explain(bp[0], bp[1], **kwargs), zip(bundles, partitions)))


# ---------------------------------------------------------------- selection


def select_by_coverage(report: ImportanceReport, cap: float = DEFAULT_COVERAGE) -> list[int]:
    """Greedy group selection by ``|beta|`` while coverage stays within ``cap``.

    Only groups already passing the threshold are candidates. Order is
    ``|beta|`` descending, then smaller group, then lower index; the walk
    stops at the first group that would exceed the cap. When even the top
    group is too large it is selected alone.
    """
    n = report.n
    cands = sorted(report.selected_groups,
                   key=lambda s: (-abs(report.beta[s]), len(report.groups[s]), s))
    if not cands:
        return []
    chosen = []
    count = 0
    for s in cands:
        size = len(report.groups[s])
        if (count + size) / n > cap:
            break
        chosen.append(s)
        count += size
    if not chosen:
        chosen = [cands[0]]
    return sorted(i for s in chosen for i in report.groups[s])


def top_fraction_nodes(report: ImportanceReport, fraction: float = DEFAULT_TOP_FRACTION) -> list[int]:
    """The ``max(1, floor(fraction * n))`` nodes with largest ``|alpha|``."""
    n = report.n
    # guard against 0.3 * 10 = 2.9999... style round-off
    k = max(1, math.floor(fraction * n + 1e-9))
    k = min(k, n)
    order = sorted(range(n), key=lambda j: (-abs(report.alpha[j]), j))
    return sorted(order[:k])
