"""File formats: TU flat-file corpora in, JSON artifacts in and out.

All writers are deterministic (sorted keys, shortest round-trip float
repr) and atomic (write to a temp file in the same directory, then rename).
"""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ConsistencyError,
    DanglingEdge,
    MalformedLine,
    MissingFile,
    SchemaError,
)
from .gnn import LayerSpec, ModelParams
from .graph import Dataset, Graph, Partition, degree_onehot_features

SCHEMA_VERSION = 1
READOUT_KINDS = ("mean", "sum", "max")


# ---------------------------------------------------------------- helpers


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    atomic_write_text(path, dumps(obj))


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise MissingFile(str(path)) from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}", path=str(path)) from exc


def _matrix(value, path, cols=None):
    if not isinstance(value, list) or not all(isinstance(r, list) for r in value):
        raise SchemaError("expected an array of arrays", path)
    try:
        arr = np.array(value, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"non-numeric or ragged matrix ({exc})", path) from exc
    if len(value) and arr.ndim != 2:
        raise SchemaError("ragged matrix", path)
    if not len(value):
        arr = arr.reshape(0, cols or 0)
    return arr


def _vector(value, path):
    if not isinstance(value, list):
        raise SchemaError("expected an array", path)
    try:
        arr = np.array(value, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"non-numeric vector ({exc})", path) from exc
    if arr.ndim != 1:
        raise SchemaError("expected a flat array", path)
    return arr


def _require(obj, key, path):
    if not isinstance(obj, dict):
        raise SchemaError("expected an object", path)
    if key not in obj:
        raise SchemaError("missing required field", f"{path}.{key}" if path else key)
    return obj[key]


def _floats(arr):
    return np.asarray(arr, dtype=np.float64).tolist()


# ---------------------------------------------------------------- TU corpora


def _read_lines(path: Path):
    if not path.exists():
        raise MissingFile(str(path))
    with open(path, encoding="utf-8") as fh:
        return [(k + 1, line.strip()) for k, line in enumerate(fh) if line.strip()]


def _parse_ints(path, lines, width=None):
    out = []
    for lineno, text in lines:
        parts = [p.strip() for p in text.split(",")]
        try:
            vals = [int(p) for p in parts]
        except ValueError:
            raise MalformedLine(path.name, lineno, text) from None
        if width is not None and len(vals) != width:
            raise MalformedLine(path.name, lineno, text)
        out.append(vals)
    return out


def parse_tu_dataset(directory, name: str, degree_cap: int = 10) -> Dataset:
    """Read a TU-format corpus (``<name>_A.txt`` and friends).

    Node features are the one-hot node labels concatenated with node
    attributes when present; corpora with neither get degree one-hot
    features capped at ``degree_cap``.
    """
    root = Path(directory)
    f_a = root / f"{name}_A.txt"
    f_ind = root / f"{name}_graph_indicator.txt"
    f_lab = root / f"{name}_graph_labels.txt"
    indicator = [v[0] for v in _parse_ints(f_ind, _read_lines(f_ind), 1)]
    raw_labels = [v[0] for v in _parse_ints(f_lab, _read_lines(f_lab), 1)]
    edges = _parse_ints(f_a, _read_lines(f_a), 2)

    num_nodes = len(indicator)
    num_graphs = len(raw_labels)
    if any(not 1 <= g <= num_graphs for g in indicator):
        raise SchemaError("graph indicator references an unknown graph", str(f_ind))
    # local (0-based) index of every global node
    members: list[list[int]] = [[] for _ in range(num_graphs)]
    local = [0] * num_nodes
    for node, g in enumerate(indicator):
        local[node] = len(members[g - 1])
        members[g - 1].append(node)
    adjs = [np.zeros((len(m), len(m))) for m in members]
    for (lineno, text), (i, j) in zip(_read_lines(f_a), edges):
        if not (1 <= i <= num_nodes and 1 <= j <= num_nodes):
            raise DanglingEdge(f"{f_a.name}:{lineno}: node index out of range in {text!r}")
        gi, gj = indicator[i - 1], indicator[j - 1]
        if gi != gj:
            raise DanglingEdge(
                f"{f_a.name}:{lineno}: edge {text!r} joins graphs {gi} and {gj}"
            )
        if i == j:
            continue
        a = adjs[gi - 1]
        a[local[i - 1], local[j - 1]] = a[local[j - 1], local[i - 1]] = 1.0

    blocks = []
    f_nl = root / f"{name}_node_labels.txt"
    if f_nl.exists():
        nl = [v[0] for v in _parse_ints(f_nl, _read_lines(f_nl), 1)]
        if len(nl) != num_nodes:
            raise SchemaError("node label count differs from node count", str(f_nl))
        values = sorted(set(nl))
        pos = {v: k for k, v in enumerate(values)}
        onehot = np.zeros((num_nodes, len(values)))
        onehot[np.arange(num_nodes), [pos[v] for v in nl]] = 1.0
        blocks.append(onehot)
    f_na = root / f"{name}_node_attributes.txt"
    if f_na.exists():
        rows = []
        for lineno, text in _read_lines(f_na):
            try:
                rows.append([float(p) for p in text.split(",")])
            except ValueError:
                raise MalformedLine(f_na.name, lineno, text) from None
        if len(rows) != num_nodes or len({len(r) for r in rows}) > 1:
            raise SchemaError("node attributes do not align with nodes", str(f_na))
        blocks.append(np.array(rows))
    feats = np.concatenate(blocks, axis=1) if blocks else None

    label_values = sorted(set(raw_labels))
    remap = {v: k for k, v in enumerate(label_values)}
    graphs = []
    for k, m in enumerate(members):
        if not m:
            raise SchemaError(f"graph {k + 1} has no nodes", str(f_ind))
        g = Graph(
            features=np.ones((len(m), 1)) if feats is None else feats[m],
            adjacency=adjs[k],
            label=remap[raw_labels[k]],
            id=f"{name}-{k + 1}",
        )
        if feats is None:
            g = g.replace(features=degree_onehot_features(g, degree_cap))
        graphs.append(g)
    return Dataset(graphs=graphs, num_classes=len(label_values))


# ---------------------------------------------------------------- graph bundle


def dataset_to_json(dataset: Dataset) -> dict:
    out = []
    for g, tag, part in zip(dataset.graphs, dataset.split, dataset.partitions):
        rec = {
            "id": g.id,
            "features": _floats(g.features),
            "num_nodes": g.n,
            "edges": [[i, j] for i, j in g.edges()],
            "split": tag,
        }
        if g.label is not None:
            rec["label"] = g.label
        if g.gt_mask is not None:
            rec["gt_mask"] = [bool(b) for b in g.gt_mask]
        if part is not None:
            rec["partition"] = [list(grp) for grp in part.groups]
        out.append(rec)
    return {"version": SCHEMA_VERSION, "num_classes": dataset.num_classes, "graphs": out}


def dataset_from_json(obj) -> Dataset:
    if not isinstance(obj, dict):
        raise SchemaError("top level must be an object", "$")
    version = _require(obj, "version", "")
    if version != SCHEMA_VERSION:
        raise SchemaError(f"unsupported version {version!r}", "version")
    num_classes = _require(obj, "num_classes", "")
    if not isinstance(num_classes, int) or num_classes < 1:
        raise SchemaError("must be a positive integer", "num_classes")
    recs = _require(obj, "graphs", "")
    if not isinstance(recs, list):
        raise SchemaError("expected an array", "graphs")
    graphs, split, parts = [], [], []
    for k, rec in enumerate(recs):
        path = f"graphs[{k}]"
        feats = _matrix(_require(rec, "features", path), f"{path}.features")
        n = feats.shape[0]
        if "num_nodes" in rec and rec["num_nodes"] != n:
            raise SchemaError("num_nodes disagrees with feature rows", f"{path}.num_nodes")
        if n < 1:
            raise SchemaError("graph needs at least one node", f"{path}.features")
        edges = _require(rec, "edges", path)
        if not isinstance(edges, list):
            raise SchemaError("expected an array", f"{path}.edges")
        adj = np.zeros((n, n))
        for e, pair in enumerate(edges):
            if (not isinstance(pair, list) or len(pair) != 2
                    or not all(isinstance(v, int) and 0 <= v < n for v in pair)
                    or pair[0] == pair[1]):
                raise SchemaError("edge must be two distinct node indices", f"{path}.edges[{e}]")
            adj[pair[0], pair[1]] = adj[pair[1], pair[0]] = 1.0
        mask = rec.get("gt_mask")
        if mask is not None and (not isinstance(mask, list) or len(mask) != n
                                 or not all(isinstance(b, bool) for b in mask)):
            raise SchemaError("must be a boolean array of length n", f"{path}.gt_mask")
        label = rec.get("label")
        if label is not None and (not isinstance(label, int) or not 0 <= label < num_classes):
            raise SchemaError("label out of range", f"{path}.label")
        tag = rec.get("split", "train")
        if tag not in ("train", "test"):
            raise SchemaError("split must be 'train' or 'test'", f"{path}.split")
        part = None
        if rec.get("partition") is not None:
            try:
                part = Partition(groups=tuple(tuple(g) for g in rec["partition"]), n=n)
            except (TypeError, ValueError) as exc:
                raise SchemaError(str(exc), f"{path}.partition") from exc
        graphs.append(Graph(features=feats, adjacency=adj, label=label,
                            gt_mask=None if mask is None else np.array(mask),
                            id=str(rec.get("id", f"graph-{k}"))))
        split.append(tag)
        parts.append(part)
    return Dataset(graphs=graphs, num_classes=num_classes, split=split, partitions=parts)


def write_graph_bundle(dataset: Dataset, path) -> None:
    write_json(path, dataset_to_json(dataset))


def read_graph_bundle(path) -> Dataset:
    return dataset_from_json(read_json(path))


# ---------------------------------------------------------------- partitions


def write_partition(partition: Partition, path) -> None:
    write_json(path, {"n": partition.n, "groups": [list(g) for g in partition.groups]})


def partition_from_json(obj, where="") -> Partition:
    n = _require(obj, "n", where)
    groups = _require(obj, "groups", where)
    if not isinstance(n, int) or not isinstance(groups, list):
        raise SchemaError("partition needs integer n and a list of groups", where or "$")
    for s, g in enumerate(groups):
        if not isinstance(g, list) or not all(isinstance(i, int) for i in g):
            raise SchemaError("group must be a list of integers", f"groups[{s}]")
    return Partition(groups=tuple(tuple(g) for g in groups), n=n)


def read_partition(path) -> Partition:
    return partition_from_json(read_json(path), "")


# ---------------------------------------------------------------- embeddings


@dataclass(frozen=True, eq=False)
class EmbeddingBundle:
    node_embeddings: np.ndarray  # n x d, rows are node embeddings
    graph_embedding: np.ndarray  # length d
    readout_kind: str
    graph_id: str = ""

    def __post_init__(self):
        H = np.array(self.node_embeddings, dtype=np.float64)
        z = np.array(self.graph_embedding, dtype=np.float64).reshape(-1)
        if H.ndim != 2 or H.shape[1] != z.shape[0]:
            raise SchemaError("node embedding width must equal graph embedding length")
        if self.readout_kind not in READOUT_KINDS:
            raise SchemaError(f"unknown readout kind {self.readout_kind!r}", "readout_kind")
        object.__setattr__(self, "node_embeddings", H)
        object.__setattr__(self, "graph_embedding", z)

    @property
    def n(self) -> int:
        return self.node_embeddings.shape[0]

    @property
    def d(self) -> int:
        return self.node_embeddings.shape[1]

    def check_consistency(self, tol: float = 1e-9) -> None:
        """Raise unless a mean/sum bundle's graph vector matches its rows."""
        if self.readout_kind == "mean":
            ref = self.node_embeddings.mean(axis=0)
        elif self.readout_kind == "sum":
            ref = self.node_embeddings.sum(axis=0)
        else:
            ref = self.node_embeddings.max(axis=0)
        err = float(np.max(np.abs(ref - self.graph_embedding))) if self.d else 0.0
        if err > tol:
            raise ConsistencyError(
                f"graph_embedding differs from the {self.readout_kind} of node rows by {err:.3e}",
                "graph_embedding",
            )

    def __eq__(self, other):
        if not isinstance(other, EmbeddingBundle):
            return NotImplemented
        return (self.readout_kind == other.readout_kind and self.graph_id == other.graph_id
                and np.array_equal(self.node_embeddings, other.node_embeddings)
                and np.array_equal(self.graph_embedding, other.graph_embedding))

    __hash__ = None


def write_embedding_bundle(bundle: EmbeddingBundle, path) -> None:
    write_json(path, {
        "graph_id": bundle.graph_id,
        "readout_kind": bundle.readout_kind,
        "node_embeddings": _floats(bundle.node_embeddings),
        "graph_embedding": _floats(bundle.graph_embedding),
    })


def read_embedding_bundle(path, check: bool = True) -> EmbeddingBundle:
    """Load a bundle; with ``check`` a mean/sum bundle must be self-consistent."""
    obj = read_json(path)
    z = _vector(_require(obj, "graph_embedding", ""), "graph_embedding")
    H = _matrix(_require(obj, "node_embeddings", ""), "node_embeddings", cols=len(z))
    kind = _require(obj, "readout_kind", "")
    bundle = EmbeddingBundle(H, z, kind, str(obj.get("graph_id", "")))
    if check and kind in ("mean", "sum"):
        bundle.check_consistency()
    return bundle


# ---------------------------------------------------------------- models


def model_to_json(model: ModelParams) -> dict:
    layers = []
    for spec, w in zip(model.layers, model.weights):
        layers.append({
            "kind": spec.kind,
            "in_dim": spec.in_dim,
            "out_dim": spec.out_dim,
            "gin_eps": float(spec.gin_eps),
            "params": {k: _floats(v) for k, v in w.items()},
        })
    return {
        "version": SCHEMA_VERSION,
        "readout": model.readout,
        "layers": layers,
        "W_out": _floats(model.W_out),
        "b_out": _floats(model.b_out),
    }


def model_from_json(obj) -> ModelParams:
    specs, weights = [], []
    for k, rec in enumerate(_require(obj, "layers", "")):
        path = f"layers[{k}]"
        try:
            spec = LayerSpec(_require(rec, "kind", path), _require(rec, "in_dim", path),
                             _require(rec, "out_dim", path), float(rec.get("gin_eps", 0.0)))
        except ValueError as exc:
            raise SchemaError(str(exc), path) from exc
        params = _require(rec, "params", path)
        w = {}
        for name, shape in spec.param_shapes().items():
            raw = _require(params, name, f"{path}.params")
            arr = (_matrix if len(shape) == 2 else _vector)(raw, f"{path}.params.{name}")
            if arr.shape != shape:
                raise SchemaError(f"expected shape {shape}, got {arr.shape}",
                                  f"{path}.params.{name}")
            w[name] = arr
        specs.append(spec)
        weights.append(w)
    if not specs:
        raise SchemaError("model needs at least one layer", "layers")
    W_out = _matrix(_require(obj, "W_out", ""), "W_out")
    b_out = _vector(_require(obj, "b_out", ""), "b_out")
    try:
        return ModelParams(specs, weights, W_out, b_out, _require(obj, "readout", ""))
    except ValueError as exc:
        raise SchemaError(str(exc), "$") from exc


def write_model_params(model: ModelParams, path) -> None:
    write_json(path, model_to_json(model))


def read_model_params(path) -> ModelParams:
    return model_from_json(read_json(path))


def safe_filename(graph_id: str) -> str:
    keep = "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in graph_id)
    return keep or "graph"
