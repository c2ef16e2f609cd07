"""Command-line pipeline: synth, parse-tu, train, embed, explain, fidelity,
eval-gt, gradcheck.

Every command writes JSON and a manifest next to its output. Exit codes:
0 success, 1 verification failure, 2 usage error, 3 I/O or schema error.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (DanglingEdge, DegenerateLabels, ExelError, MalformedLine, MissingFile,
                     MissingNodeSet, PartitionError, SchemaError)
from .evaluation import fidelity_f1, mean_defined, pr_auc, random_matched_sets, roc_auc
from .explain import (DEFAULT_COVERAGE, DEFAULT_DELTA, DEFAULT_TOP_FRACTION, ImportanceReport,
                      explain_many, select_by_coverage, top_fraction_nodes)
from .gnn import (LAYER_KINDS, READOUTS, TrainConfig, accuracy, build_specs, embed,
                  gradient_check, init_model, loss_and_gradients, train)
from .graph import graph_from_edges
from .io import (EmbeddingBundle, parse_tu_dataset, read_embedding_bundle,
                 read_graph_bundle, read_json, read_model_params, read_partition, safe_filename,
                 write_embedding_bundle, write_graph_bundle, write_json, write_model_params)
from .partition import bridge_partition, partition_for, singleton_partition
from .rng import Xoshiro256
from .synth import SynthConfig, generate_dataset

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- manifests


def _manifest(args, outputs, inputs, started, target: Path):
    flags = {k: v for k, v in sorted(vars(args).items()) if k != "handler"}
    record = {
        "command": args.command,
        "flags": flags,
        "seed": flags.get("seed"),
        "version": __version__,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "wall_time": round(time.perf_counter() - started, 6),
    }
    write_json(target, record)


def _file_manifest(path) -> Path:
    return Path(str(path) + ".manifest.json")


def _index(out_dir: Path, entries):
    """Dataset-ordered list of ``{graph_id, file}`` for a directory output."""
    write_json(out_dir / "index.json", {"entries": entries})


def _read_dir(directory, reader):
    directory = Path(directory)
    if not directory.exists():
        raise MissingFile(f"no such file or directory: {directory}")
    if directory.is_file():
        return [reader(directory)]
    idx = directory / "index.json"
    if idx.exists():
        names = [e["file"] for e in read_json(idx)["entries"]]
    else:
        names = sorted(p.name for p in directory.glob("*.json")
                       if p.name not in ("index.json", "manifest.json"))
    return [reader(directory / name) for name in names]


# ---------------------------------------------------------------- commands


def cmd_synth(args):
    cfg = SynthConfig(graph_count=args.count, base_nodes=args.base_nodes,
                      ba_attach=args.attach, seed=args.seed)
    write_graph_bundle(generate_dataset(cfg), args.out)
    return [args.out], []


def cmd_parse_tu(args):
    data = parse_tu_dataset(args.dir, args.name, degree_cap=args.degree_cap)
    write_graph_bundle(data, args.out)
    return [args.out], [args.dir]


def _dims(text):
    try:
        dims = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--dims must be comma-separated integers, got {text!r}") from None
    if not dims or min(dims) < 1:
        raise UsageError("--dims needs at least one positive width")
    return dims


def cmd_train(args):
    data = read_graph_bundle(args.data)
    graphs = data.subset("train").graphs
    if not graphs:
        raise UsageError("dataset has no training graphs")
    specs = build_specs(args.arch, data.graphs[0].num_features, _dims(args.dims), args.gin_eps)
    model = init_model(specs, data.num_classes, args.readout, seed=args.seed)
    model, trace = train(model, graphs, TrainConfig(args.epochs, args.lr, args.seed))
    write_model_params(model, args.out)
    trace_path = Path(str(args.out) + ".trace.json")
    write_json(trace_path, {"loss": [float(v) for v in trace],
                            "train_accuracy": accuracy(model, graphs)})
    return [args.out, trace_path], [args.data]


def cmd_embed(args):
    model = read_model_params(args.model)
    data = read_graph_bundle(args.data).subset(args.split)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries, written = [], []
    for g in data.graphs:
        H, z = embed(model, g)
        name = safe_filename(g.id) + ".json"
        write_embedding_bundle(EmbeddingBundle(H, z, model.readout, g.id), out / name)
        entries.append({"graph_id": g.id, "file": name})
        written.append(out / name)
    _index(out, entries)
    return written + [out / "index.json"], [args.model, args.data]


def _partition_source(spec):
    if spec.startswith("file:"):
        return Path(spec[5:])
    if spec in ("singleton", "bridges", "data"):
        return spec
    raise UsageError(f"--partition must be singleton, bridges, data or file:PATH, got {spec!r}")


def _lambda_spec(text):
    if text == "auto":
        return "auto"
    try:
        lam = float(text)
    except ValueError:
        raise UsageError(f"--lambda must be 'auto' or a number, got {text!r}") from None
    if not lam >= 0:
        raise UsageError("--lambda must be non-negative")
    return lam


def _graphs_by_id(path):
    data = read_graph_bundle(path)
    return {g.id: (g, p) for g, p in zip(data.graphs, data.partitions)}


def cmd_explain(args):
    lam = _lambda_spec(args.spec_lambda)
    source = "singleton" if args.penalty == "lasso" else _partition_source(args.partition)
    bundles = _read_dir(args.embeddings, read_embedding_bundle)
    graphs = None
    if source in ("bridges", "data"):
        if not args.data:
            raise UsageError(f"--partition {source} needs --data")
        graphs = _graphs_by_id(args.data)
    parts = []
    for b in bundles:
        if source == "singleton":
            parts.append(singleton_partition(b.n))
        elif isinstance(source, Path):
            path = source / (safe_filename(b.graph_id) + ".json") if source.is_dir() else source
            part = read_partition(path)
            if part.n != b.n:
                raise SchemaError(f"partition covers {part.n} nodes, graph has {b.n}",
                                  str(path))
            parts.append(part)
        else:
            if b.graph_id not in graphs:
                raise SchemaError(f"graph {b.graph_id!r} not found in --data", "graphs")
            g, stored = graphs[b.graph_id]
            if source == "bridges":
                parts.append(bridge_partition(g))
            elif stored is None:
                raise SchemaError(f"graph {b.graph_id!r} has no stored partition", "partition")
            else:
                parts.append(partition_for(g, stored))
    method = "exel_node" if args.penalty == "lasso" or source == "singleton" else "exel"
    reports = explain_many(bundles, parts, lam=lam, delta=args.delta, folds=args.folds,
                           cv_seed=args.seed, method=method)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries, written = [], []
    for r in reports:
        name = safe_filename(r.graph_id) + ".json"
        write_json(out / name, r.to_json())
        entries.append({"graph_id": r.graph_id, "file": name})
        written.append(out / name)
    _index(out, entries)
    return written + [out / "index.json"], [args.embeddings]


def _read_report(path):
    return ImportanceReport.from_json(read_json(path))


def _selection(text):
    kind, _, value = text.partition(":")
    if kind == "threshold" and not value:
        return kind, None
    if kind == "coverage":
        return kind, float(value) if value else DEFAULT_COVERAGE
    if kind == "topfrac":
        return kind, float(value) if value else DEFAULT_TOP_FRACTION
    raise UsageError(f"--selection must be coverage[:C], topfrac[:F] or threshold, got {text!r}")


def cmd_fidelity(args):
    kind, value = _selection(args.selection)
    model = read_model_params(args.model)
    data = read_graph_bundle(args.data)
    graphs = data.subset(args.split).graphs
    reports = {r.graph_id: r for r in _read_dir(args.reports, _read_report)}
    sets = {}
    for gid, r in reports.items():
        if kind == "coverage":
            sets[gid] = select_by_coverage(r, value)
        elif kind == "topfrac":
            sets[gid] = top_fraction_nodes(r, value)
        else:
            sets[gid] = list(r.selected_nodes)
    methods = {r.method for r in reports.values()}
    base = {
        "model": Path(args.model).name,
        "dataset": Path(args.data).name,
        "readout": model.readout,
        "selection": args.selection,
        "mode": args.mode,
    }
    res = fidelity_f1(model, graphs, sets, data.num_classes, mode=args.mode)
    records = [dict(base, method="+".join(sorted(methods)), fidelity=res.fidelity,
                    f1_original=res.f1_original, f1_masked=res.f1_masked,
                    mean_selected=float(np.mean([len(sets[g.id]) for g in graphs])))]
    if args.baseline == "random":
        rnd_sets = random_matched_sets(graphs, [sets[g.id] for g in graphs], args.seed)
        rnd = fidelity_f1(model, graphs, rnd_sets, data.num_classes, mode=args.mode)
        records.append(dict(base, method="random", fidelity=rnd.fidelity,
                            f1_original=rnd.f1_original, f1_masked=rnd.f1_masked,
                            mean_selected=float(np.mean([len(s) for s in rnd_sets]))))
    write_json(args.out, {"records": records})
    return [args.out], [args.model, args.data, args.reports]


def cmd_eval_gt(args):
    data = read_graph_bundle(args.data)
    graphs = {g.id: g for g in data.graphs}
    reports = _read_dir(args.reports, _read_report)
    unknown = [r.graph_id for r in reports if r.graph_id not in graphs]
    if unknown:
        raise MissingNodeSet(f"reports for graphs absent from --data: {', '.join(unknown)}")
    missing = [r.graph_id for r in reports if graphs[r.graph_id].gt_mask is None]
    if missing:
        raise DegenerateLabels(f"no ground-truth mask for graphs: {', '.join(missing)}")
    per_graph = []
    for r in reports:
        mask = graphs[r.graph_id].gt_mask
        per_graph.append({"graph_id": r.graph_id,
                          "roc_auc": roc_auc(r.node_scores(), mask),
                          "pr_auc": pr_auc(r.node_scores(), mask)})
    summary = {
        "roc_auc": mean_defined(p["roc_auc"] for p in per_graph),
        "pr_auc": mean_defined(p["pr_auc"] for p in per_graph),
        "graphs": len(per_graph),
        "defined": sum(p["roc_auc"] is not None for p in per_graph),
    }
    write_json(args.out, {"summary": summary, "per_graph": per_graph})
    return [args.out], [args.reports, args.data]


def _gradcheck_graph(rng, n=4, features=3):
    edges = [(i, i + 1) for i in range(n - 1)]
    extra = (0, 2 + rng.below(n - 2))
    if extra not in edges:
        edges.append(extra)
    x = np.array([[rng.normal() for _ in range(features)] for _ in range(n)])
    return graph_from_edges(n, edges, x, label=rng.below(2), id="gradcheck")


def cmd_gradcheck(args):
    rng = Xoshiro256(args.seed)
    rows = []
    for kind in LAYER_KINDS:
        for ro in READOUTS:
            g = _gradcheck_graph(rng)
            model = init_model(build_specs(kind, 3, [4, 4], gin_eps=0.1), 2, ro,
                               seed=args.seed, init_scale=0.5)
            analytic = None
            if args.inject_bug:
                # negative control: a first-layer gradient off by 50%
                analytic = loss_and_gradients(model, g)
                first = analytic.grads.weights[0]
                key = sorted(first)[0]
                first[key] = first[key] * 1.5
            err = gradient_check(model, g, analytic=analytic)
            rows.append({"arch": kind, "readout": ro, "max_rel_error": err,
                         "passed": bool(err <= args.tol)})
    ok = all(r["passed"] for r in rows)
    for r in rows:
        print(f"{r['arch']:5s} {r['readout']:5s} {r['max_rel_error']:.3e} "
              f"{'ok' if r['passed'] else 'FAIL'}")
    outputs = []
    if args.out:
        write_json(args.out, {"tolerance": args.tol, "passed": ok, "checks": rows})
        outputs.append(args.out)
    args._verify_failed = not ok
    return outputs, []


# ---------------------------------------------------------------- parser


def build_parser():
    p = argparse.ArgumentParser(prog="exel", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a motif dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=500)
    s.add_argument("--base-nodes", type=int, default=20)
    s.add_argument("--attach", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(handler=cmd_synth)

    s = sub.add_parser("parse-tu", help="convert a TU-format directory to a graph bundle")
    s.add_argument("--dir", required=True)
    s.add_argument("--name", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--degree-cap", type=int, default=10)
    s.set_defaults(handler=cmd_parse_tu)

    s = sub.add_parser("train", help="train a graph classifier")
    s.add_argument("--data", required=True)
    s.add_argument("--arch", choices=LAYER_KINDS, default="gcn")
    s.add_argument("--readout", choices=READOUTS, default="mean")
    s.add_argument("--dims", default="32,32")
    s.add_argument("--epochs", type=int, default=300)
    s.add_argument("--lr", type=float, default=0.5)
    s.add_argument("--gin-eps", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(handler=cmd_train)

    s = sub.add_parser("embed", help="write per-graph embedding bundles")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", choices=("train", "test", "all"), default="test")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(handler=cmd_embed)

    s = sub.add_parser("explain", help="score node groups by Group Lasso regression")
    s.add_argument("--embeddings", required=True)
    s.add_argument("--partition", default="bridges",
                   help="singleton, bridges, data (stored in --data) or file:PATH")
    s.add_argument("--data", help="graph bundle, needed for bridges and data partitions")
    s.add_argument("--penalty", choices=("group", "lasso"), default="group")
    s.add_argument("--lambda", dest="spec_lambda", default="auto")
    s.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    s.add_argument("--folds", type=int, default=4)
    s.add_argument("--seed", type=int, default=0, help="fold assignment seed")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(handler=cmd_explain)

    s = sub.add_parser("fidelity", help="F1 drop after masking selected nodes")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--reports", required=True)
    s.add_argument("--selection", default=f"coverage:{DEFAULT_COVERAGE:.2f}")
    s.add_argument("--baseline", choices=("none", "random"), default="none")
    s.add_argument("--mode", choices=("dataset", "per_graph"), default="dataset")
    s.add_argument("--split", choices=("train", "test", "all"), default="test")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(handler=cmd_fidelity)

    s = sub.add_parser("eval-gt", help="ROC-AUC and PR-AUC against ground-truth masks")
    s.add_argument("--reports", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(handler=cmd_eval_gt)

    s = sub.add_parser("gradcheck", help="finite-difference check of every architecture")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tol", type=float, default=1e-5)
    s.add_argument("--out")
    s.add_argument("--inject-bug", action="store_true", help=argparse.SUPPRESS)
    s.set_defaults(handler=cmd_gradcheck)
    return p


def _is_dir_output(args):
    return getattr(args, "out_dir", None) is not None


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    started = time.perf_counter()
    try:
        outputs, inputs = args.handler(args)
    except UsageError as exc:
        print(f"exel {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SchemaError, MissingFile, MalformedLine, DanglingEdge, PartitionError,
            DegenerateLabels, MissingNodeSet, json.JSONDecodeError, OSError) as exc:
        print(f"exel {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ExelError, ValueError) as exc:
        print(f"exel {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if _is_dir_output(args):
        target = Path(args.out_dir) / "manifest.json"
    elif getattr(args, "out", None):
        target = _file_manifest(args.out)
    else:
        target = None
    failed = getattr(args, "_verify_failed", False)
    if target is not None:
        vars(args).pop("_verify_failed", None)
        _manifest(args, outputs, inputs, started, target)
    return EXIT_VERIFY if failed else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
