"""``virgo`` command line.

Exit codes: 0 success, 1 invalid input, 2 a run diverged.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .datasets import DatasetError, read_edge_list, read_matrix, write_edge_list
from .experiments import (
    ExperimentSpec,
    SpecError,
    load_spec,
    plans_csv,
    run_assumptions,
    run_compare,
    run_init_plan,
    run_train,
    run_variance_probe,
)
from .graph import GraphError, build_graph, feature_means, generate_synthetic, merge_graphs, normalize_adjacency
from .initializers import LayerDims, virgo_backward_plan, virgo_forward_plan

logger = logging.getLogger("virgo")

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED = 0, 1, 2


def _spec(args) -> ExperimentSpec:
    spec = load_spec(args.spec) if args.spec else ExperimentSpec()
    return spec.with_overrides(out=args.out, seed=args.seed, threads=args.threads)


def cmd_init_plan(args) -> int:
    spec = _spec(args)
    for plan in run_init_plan(spec):
        print(plan.to_json())
    return EXIT_OK


def cmd_probe(args) -> int:
    spec = _spec(args)
    reports = run_variance_probe(spec)
    for r in reports:
        print(f"{r.method:>10}  fwd " + " ".join(f"{v:.3e}" for v in r.empirical_forward))
    print(f"wrote {Path(spec.out) / 'variance.csv'} and {Path(spec.out) / 'variance.svg'}")
    return EXIT_OK


def cmd_assumptions(args) -> int:
    spec = _spec(args)
    print(run_assumptions(spec).to_markdown())
    return EXIT_OK


def cmd_train(args) -> int:
    spec = _spec(args)
    runs = run_train(spec)
    for r in runs:
        status = "DIVERGED" if r.report.failed else f"test={r.report.test_acc:.4f}"
        print(f"{r.initializer:>12} seed={r.report.seed:<3} {status}")
    return EXIT_DIVERGED if any(r.report.failed for r in runs) else EXIT_OK


def cmd_compare(args) -> int:
    spec = _spec(args)
    result = run_compare(spec)
    for row in result.rows:
        print(f"{row.initializer:>12}  {row.test_mean * 100:.2f} ± {row.test_std * 100:.2f}  [{row.setting}]")
    return EXIT_DIVERGED if result.diverged else EXIT_OK


def cmd_merge(args) -> int:
    graphs = []
    for path in args.graphs:
        edges = read_edge_list(path)
        n = args.nodes[len(graphs)] if args.nodes else (int(edges.max()) + 1 if edges.size else 0)
        graphs.append(build_graph(edges, n))
    merged = merge_graphs(graphs)
    a = normalize_adjacency(merged)
    plans = []
    if args.features:
        if len(args.features) != len(graphs):
            raise SpecError(f"{len(args.features)} feature files for {len(graphs)} graphs")
        x = np.vstack([read_matrix(p) for p in args.features])
        if x.shape[0] != merged.node_count:
            raise DatasetError(f"feature files have {x.shape[0]} rows but the merged graph has {merged.node_count} nodes")
        dims = LayerDims.uniform(x.shape[1], args.hidden, args.layers, args.classes)
        plans.append(virgo_forward_plan(a, feature_means(x), dims))
    else:
        dims = LayerDims.uniform(args.in_dim, args.hidden, args.layers, args.classes)
    plans.append(virgo_backward_plan(a, dims))

    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    write_edge_list(out / "merged_edges.tsv", merged)
    (out / "plans.csv").write_text(plans_csv(plans), encoding="utf-8")
    print(f"merged {len(graphs)} graphs: {merged.node_count} nodes, {merged.edge_count} edges")
    return EXIT_OK


def cmd_gen(args) -> int:
    g = generate_synthetic(args.kind, args.nodes, args.p, args.seed or 0)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    write_edge_list(out / "edges.tsv", g)
    if args.features:
        rng = np.random.default_rng(np.random.SeedSequence([args.seed or 0, 1]))
        np.savetxt(out / "features.csv", rng.random((g.node_count, args.features)), delimiter=",", fmt="%.10f")
        np.savetxt(out / "labels.csv", rng.integers(0, args.classes, g.node_count), fmt="%d")
    print(f"{args.kind}: {g.node_count} nodes, {g.edge_count} edges")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--spec", type=Path, help="experiment spec (INI)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="first seed; the spec's seed count is kept")
    common.add_argument("--threads", type=int, help="worker threads")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="virgo", description="Graph-aware weight initialization for GCNs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("init-plan", parents=[common], help="print per-layer variances").set_defaults(func=cmd_init_plan)
    sub.add_parser("probe", parents=[common], help="variance probe: CSV + SVG").set_defaults(func=cmd_probe)
    sub.add_parser("assumptions", parents=[common], help="assumption tables").set_defaults(func=cmd_assumptions)
    sub.add_parser("train", parents=[common], help="train at the first grid setting").set_defaults(func=cmd_train)
    sub.add_parser("compare", parents=[common], help="grid search and compare").set_defaults(func=cmd_compare)

    p = sub.add_parser("merge", parents=[common], help="disjoint union of graphs and its Virgo plans")
    p.add_argument("graphs", nargs="+", type=Path, help="edge-list files")
    p.add_argument("--nodes", type=int, nargs="+", help="node count per graph (default: max index + 1)")
    p.add_argument("--features", type=Path, nargs="+", help="feature file per graph")
    p.add_argument("--in-dim", type=int, default=16, help="input width when no features are given")
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--classes", type=int, default=2)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("gen", parents=[common], help="write a synthetic graph")
    p.add_argument("--kind", choices=("ring", "star", "erdos_renyi"), default="erdos_renyi")
    p.add_argument("--nodes", type=int, default=100)
    p.add_argument("--p", type=float, default=0.1)
    p.add_argument("--features", type=int, default=0, help="also write uniform features of this width")
    p.add_argument("--classes", type=int, default=2)
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SpecError, DatasetError, GraphError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FloatingPointError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
