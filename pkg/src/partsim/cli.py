"""Command-line front end wiring the modules into reproducible pipelines.

Subcommands: gen, partition, ged, train, eval, rank, bench, gradcheck.
All randomness comes from explicit --seed flags, so identical invocations
produce byte-identical primary artifacts (timing numbers exempted).  Output
files are written to a temporary name and renamed into place.  Setting
PARTSIM_OUT_ROOT re-roots relative *output* paths; inputs are never
remapped.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .autodiff import NumericError, grad_check
from .dataset import (
    build_ba_dataset,
    generate_ba,
    load_dataset,
    load_split,
    save_dataset,
    save_split,
    split_dataset,
)
from .ged import beam_ged, bipartite_ged, exact_ged_astar, nged_similarity
from .graphs import Graph, GraphFormatError, load_graph
from .model import (
    ModelConfig,
    SimilarityModel,
    config_from_json,
    config_to_json,
    load_params,
    save_params,
    variant_config,
)
from .partition import fluidc, partition_to_json
from .training import TrainConfig, bench_timing, evaluate, history_to_csv, train

VARIANTS = ("full", "topk", "coarse")


# ---------------------------------------------------------------------------
# plumbing


def _out_path(p) -> Path:
    """Resolve an output path, honoring the PARTSIM_OUT_ROOT override."""
    root = os.environ.get("PARTSIM_OUT_ROOT")
    path = Path(p)
    if root and not path.is_absolute():
        return Path(root) / path
    return path


def _write_bytes(path: Path, data: bytes) -> None:
    """Write via a sibling temp file and rename, so readers never see a torn file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.parent / (path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _read_bytes(path) -> bytes:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {p}")
    return p.read_bytes()


def _positive_int(s: str) -> int:
    try:
        v = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {s!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {s}")
    return v


def _nonneg_int(s: str) -> int:
    try:
        v = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {s!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {s}")
    return v


def _positive_float(s: str) -> float:
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {s!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {s}")
    return v


def _model_config(args) -> ModelConfig:
    if getattr(args, "model_config", None):
        cfg = config_from_json(_read_bytes(args.model_config))
    else:
        cfg = ModelConfig()
    if getattr(args, "variant", None):
        cfg = variant_config(cfg, args.variant)
    return cfg


def _model_from_checkpoint(path) -> SimilarityModel:
    blob = _read_bytes(path)
    doc = json.loads(blob)
    if "config" not in doc:
        raise GraphFormatError(f"checkpoint {path} has no config section")
    model = SimilarityModel(config_from_json(json.dumps(doc["config"])))
    load_params(model, blob)
    return model


def _read_bytes_path(path):
    # load_split takes a path; normalize the missing-file error to FileNotFoundError
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {p}")
    return p


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    if args.trims % args.basics != 0:
        print(f"error: --trims {args.trims} must be a multiple of --basics {args.basics}", file=sys.stderr)
        return 1
    ds = build_ba_dataset(
        args.n,
        args.seed,
        n_basic=args.basics,
        n_derived_per_basic=args.trims // args.basics,
        beam_width=args.beam_width,
        progress=args.verbose,
    )
    out = _out_path(args.out)
    save_dataset(ds, out)
    split = split_dataset(ds.manifest.ids, seed=args.seed)
    save_split(split, out / "splits.json")
    print(f"wrote {len(ds.entries)} graphs and {len(ds.records)} pair records to {out}")
    return 0


def cmd_partition(args) -> int:
    g = load_graph(_read_bytes(args.graph))
    res = fluidc(g, args.k, args.seed)
    doc = partition_to_json(res)
    if args.out:
        _write_bytes(_out_path(args.out), doc + b"\n")
    sys.stdout.buffer.write(doc + b"\n")
    return 0


def cmd_ged(args) -> int:
    g1 = load_graph(_read_bytes(args.g1))
    g2 = load_graph(_read_bytes(args.g2))
    if args.method == "exact":
        res = exact_ged_astar(g1, g2, node_limit=args.node_limit)
    elif args.method == "beam":
        res = beam_ged(g1, g2, width=args.beam_width)
    else:
        res = bipartite_ged(g1, g2, solver=args.method)
    nged, sim = nged_similarity(res.value, g1.n, g2.n)
    print(f"ged {res.value:g}, sim {sim!r}")
    return 0


def cmd_train(args) -> int:
    ds = load_dataset(args.dataset)
    split = load_split(_read_bytes_path(args.split or Path(args.dataset) / "splits.json"))
    model = SimilarityModel(_model_config(args))
    cfg = TrainConfig(
        batch_size=args.batch_size,
        iterations=args.iterations,
        lr=args.lr,
        val_every=args.val_every,
        seed=args.seed,
    )
    result = train(model, ds, split, cfg, progress=args.verbose)
    out = _out_path(args.out)
    _write_bytes(out / "checkpoint.json", save_params(model))
    _write_bytes(out / "history.csv", history_to_csv(result.history))
    _write_bytes(out / "model_config.json", config_to_json(model.config))
    print(f"best val loss {result.best_val!r} at iteration {result.best_iteration}; artifacts in {out}")
    return 0


def cmd_eval(args) -> int:
    ds = load_dataset(args.dataset)
    split = load_split(_read_bytes_path(args.split or Path(args.dataset) / "splits.json"))
    model = _model_from_checkpoint(args.checkpoint)
    rep = evaluate(model, ds, split, which=args.subset, ranking=False)
    out = _out_path(args.report)
    _write_bytes(out / "report.csv", rep.to_csv())
    _write_bytes(out / "report.json", rep.to_json())
    print(f"{args.subset} mse {rep.mse!r} mae {rep.mae!r}; report in {out}")
    return 0


def cmd_rank(args) -> int:
    ds = load_dataset(args.dataset)
    split = load_split(_read_bytes_path(args.split or Path(args.dataset) / "splits.json"))
    model = _model_from_checkpoint(args.checkpoint)
    ks = tuple(args.k) if args.k else (10, 20)
    rep = evaluate(model, ds, split, which="test", ranking=True, ks=ks)
    out = _out_path(args.report)
    _write_bytes(out / "report.csv", rep.to_csv())
    _write_bytes(out / "report.json", rep.to_json())
    cols = ["query", "rho", "tau"] + [f"p@{k}" for k in ks]
    lines = [",".join(cols)]
    for row in rep.per_query:
        lines.append(",".join(repr(row[c]) if c != "query" else row[c] for c in cols))
    _write_bytes(out / "per_query.csv", ("\n".join(lines) + "\n").encode())
    print(f"rho {rep.rho!r} tau {rep.tau!r}; report in {out}")
    return 0


def cmd_bench(args) -> int:
    rng_base = args.seed
    pairs = []
    for i in range(args.pairs):
        ga = generate_ba(args.n, 1, rng_base + 2 * i)
        gb = generate_ba(args.n, 1, rng_base + 2 * i + 1)
        pairs.append(
            (Graph(ga.n, ga.edges, id=f"bench{2 * i:04d}"), Graph(gb.n, gb.edges, id=f"bench{2 * i + 1:04d}"))
        )
    base = _model_config(args)
    lines = ["variant,fine_pairs,mean_ms,prop_steps"]
    for name in VARIANTS:
        model = SimilarityModel(variant_config(base, name))
        model.reset_counters()
        for g1, g2 in pairs:
            model.score(g1, g2)
        steps = model.prop_steps
        ms = bench_timing(model.score, pairs, repetitions=args.repetitions)
        lines.append(f"{name},{model.config.fine_pairs},{ms!r},{steps}")
        print(f"{name:7s} fine_pairs={model.config.fine_pairs:2d}  {ms:8.3f} ms/pair  prop_steps={steps}")
    if args.out:
        _write_bytes(_out_path(args.out), ("\n".join(lines) + "\n").encode())
    return 0


def cmd_gradcheck(args) -> int:
    ga = generate_ba(args.nodes, 1, args.seed)
    gb = generate_ba(args.nodes, 1, args.seed + 1)
    g1 = Graph(ga.n, ga.edges, id="gradcheck-a")
    g2 = Graph(gb.n, gb.edges, id="gradcheck-b")
    model = SimilarityModel(_model_config(args))

    err = grad_check(lambda: model.forward(g1, g2), model.parameters(), h=args.epsilon)
    print(f"max relative error {err!r}")
    if err < args.tol:
        return 0
    print(f"numeric failure: gradient error {err!r} exceeds tolerance {args.tol!r}", file=sys.stderr)
    return 3


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="partsim",
        description="Partition-based graph similarity: data generation, training, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        if seed:
            p.add_argument("--seed", type=_nonneg_int, default=0, help="RNG seed (default 0)")
        p.add_argument(
            "--threads",
            type=_positive_int,
            default=1,
            help="worker cap for batch operations; execution is sequential for reproducibility",
        )
        p.add_argument("--verbose", action="store_true", help="progress output")

    def model_flags(p):
        p.add_argument("--model-config", help="model configuration JSON (default: built-in)")
        p.add_argument("--variant", choices=VARIANTS, help="override the fine-matching budget")

    p = sub.add_parser("gen", help="build a BA-graph dataset with edit-distance ground truth")
    p.add_argument("--n", type=_positive_int, required=True, help="target node count per graph")
    p.add_argument("--basics", type=_positive_int, default=2, help="number of base graphs")
    p.add_argument("--trims", type=_positive_int, default=198, help="total trimmed derivatives (multiple of --basics)")
    p.add_argument("--beam-width", type=_positive_int, default=16, help="beam width for ground-truth search")
    p.add_argument("--out", required=True, help="output dataset directory")
    common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("partition", help="run the fluid partitioner on one graph")
    p.add_argument("--graph", required=True, help="graph JSON file")
    p.add_argument("--k", type=_positive_int, required=True, help="number of communities")
    p.add_argument("--out", help="also write the partition JSON here")
    common(p)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("ged", help="edit distance between two graphs")
    p.add_argument("--g1", required=True)
    p.add_argument("--g2", required=True)
    p.add_argument("--method", choices=("exact", "hungarian", "vj", "beam"), default="exact")
    p.add_argument("--beam-width", type=_positive_int, default=100)
    p.add_argument("--node-limit", type=_positive_int, default=10, help="size cap for the exact search")
    common(p, seed=False)
    p.set_defaults(func=cmd_ged)

    p = sub.add_parser("train", help="train a similarity model on a dataset")
    p.add_argument("--dataset", required=True, help="dataset directory from gen")
    p.add_argument("--split", help="split JSON (default: <dataset>/splits.json)")
    model_flags(p)
    p.add_argument("--batch-size", type=_positive_int, default=128)
    p.add_argument("--iterations", type=_positive_int, default=2000)
    p.add_argument("--lr", type=_positive_float, default=0.001)
    p.add_argument("--val-every", type=_positive_int, default=50)
    p.add_argument("--out", required=True, help="output directory for checkpoint and history")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="regression metrics for a checkpoint on a dataset split")
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", help="split JSON (default: <dataset>/splits.json)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--subset", choices=("train", "val", "test"), default="test")
    p.add_argument("--report", required=True, help="output directory for report.csv/json")
    common(p, seed=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rank", help="query-vs-database ranking quality on the test split")
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", help="split JSON (default: <dataset>/splits.json)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--k", type=_positive_int, action="append", help="precision cutoff, repeatable (default 10 and 20)")
    p.add_argument("--report", required=True, help="output directory")
    common(p, seed=False)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("bench", help="score timing across the fine-matching budgets")
    p.add_argument("--n", type=_positive_int, default=200, help="nodes per generated graph")
    p.add_argument("--pairs", type=_positive_int, default=100, help="number of scored pairs")
    p.add_argument("--repetitions", type=_positive_int, default=1)
    model_flags(p)
    p.add_argument("--out", help="write bench CSV here")
    common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference audit of the full model gradient")
    p.add_argument("--nodes", type=_positive_int, default=10, help="graph size for the probe pair")
    p.add_argument("--epsilon", type=_positive_float, default=1e-6, help="finite-difference step")
    p.add_argument("--tol", type=_positive_float, default=1e-4, help="max relative error to accept")
    model_flags(p)
    common(p)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage problems and 0 for --help
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (GraphFormatError, FileNotFoundError, NotADirectoryError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
