"""Command line entry point: generate, train, query, evaluate, bench.

Results go to stdout as JSON; logs go to stderr.  Every subcommand accepts
``--config FILE`` holding a JSON object whose keys are the subcommand's long
option names (dashes or underscores); explicit flags override it.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

from .graph import GraphBuildError
from .io import DatasetFormatError, load_dataset
from .model import ModelConfig, load_checkpoint
from .trainer import TrainConfig, TrainingError

log = logging.getLogger("hetcs")

DATA_ENV = "HETCS_DATA_DIR"


def _dmax(text: str) -> float:
    if text.lower() in ("inf", "none", "unbounded"):
        return math.inf
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"d_max must be a non-negative integer or 'inf', got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"d_max must be >= 0, got {v}")
    return float(v)


def _range(text: str) -> list[float]:
    if ".." in text:
        lo, hi = text.split("..", 1)
        a, b = int(_dmax(lo)), int(_dmax(hi))
        if b < a:
            raise argparse.ArgumentTypeError(f"empty range {text!r}")
        return [float(d) for d in range(a, b + 1)]
    return [_dmax(t) for t in text.split(",") if t]


def _ints(text: str) -> tuple[int, ...]:
    try:
        out = tuple(int(t) for t in text.split(",") if t)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return out


def _words(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _prob(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"expected a value in [0, 1], got {text}")
    return v


def _add_data(p):
    p.add_argument("--data", help=f"dataset directory (default: ${DATA_ENV})")


def _add_model(p):
    d = ModelConfig()
    p.add_argument("--layers", type=int, default=d.layers)
    p.add_argument("--hidden", type=int, default=d.hidden)
    p.add_argument("--heads", type=int, default=d.heads)
    p.add_argument("--unified-dim", type=int, default=d.unified_dim)
    p.add_argument("--edge-dim", type=int, default=d.edge_dim)
    p.add_argument("--dropout", type=float, default=d.dropout)
    p.add_argument("--encoders", choices=("both", "hetero", "query"), default=d.encoders)
    p.add_argument("--no-edge-semantic", dest="edge_semantic", action="store_false",
                   help="drop the edge term from attention scores")


def _add_train(p):
    d = TrainConfig()
    p.add_argument("--mode", choices=("full", "ls"), default=d.mode)
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--weight-decay", type=float, default=d.weight_decay)
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--patience", type=int, default=d.patience)
    p.add_argument("--fanouts", type=_ints, default=d.fanouts, help="per-layer fanouts f_1..f_L, e.g. 20,10")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="hetcs", description="Query-driven community search on heterogeneous graphs.")
    parser.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = subs["generate"] = sub.add_parser("generate", help="write a synthetic dataset with planted communities")
    p.add_argument("--out", help=f"output directory (default: ${DATA_ENV})")
    p.add_argument("--nodes", type=int, default=2000, help="total node count; other sizes scale with it")
    p.add_argument("--communities", type=int)
    p.add_argument("--p-in", type=_prob, default=0.3)
    p.add_argument("--p-out", type=_prob, help="default 0.01 at 2,000 nodes, scaled inversely with size")
    p.add_argument("--signal", type=float, default=2.0)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--queries-per-community", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)

    p = subs["train"] = sub.add_parser("train", help="fit a model and write a checkpoint")
    _add_data(p)
    _add_model(p)
    _add_train(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="checkpoint path (default: <data>/checkpoint.json)")

    p = subs["query"] = sub.add_parser("query", help="extract the community of one node")
    _add_data(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--query-node", type=int, required=True)
    p.add_argument("--types", type=_words, help="target node types as names or prefixes (default: the query's type)")
    p.add_argument("--gamma", type=_prob, help="probability threshold (default: the checkpoint's)")
    p.add_argument("--dmax", type=_dmax, default=math.inf)
    p.add_argument("--connectivity", action="store_true", help="report whether the community is connected")

    p = subs["evaluate"] = sub.add_parser("evaluate", help="score a checkpoint on query tasks")
    _add_data(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--gamma", type=_prob)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--dmax", type=_dmax, default=math.inf)
    g.add_argument("--sweep-dmax", type=_range, help="depths to sweep, e.g. 2..10")
    p.add_argument("--split", choices=("test", "val", "train", "all"), default="test",
                   help="which tasks to score; splits come from the checkpoint")
    p.add_argument("--tsv", help="also write per-task rows to this TSV file")

    p = subs["bench"] = sub.add_parser("bench", help="time training and search across graph sizes")
    p.add_argument("--sizes", type=_ints, default=(2000, 8000, 32000))
    p.add_argument("--modes", type=_words, default=("full", "ls"))
    p.add_argument("--profile", choices=("sparse", "dense"), default="sparse")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--tasks-per-epoch", type=int, default=4)
    p.add_argument("--queries", type=int, default=20)
    p.add_argument("--dmax", type=_dmax, default=4.0)
    p.add_argument("--fanouts", type=_ints, default=(20, 10))
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tsv", help="also write the table to this TSV file")

    for p in subs.values():
        p.add_argument("--config", help="JSON file with option values; flags override it")
    return parser, subs


def _apply_config(parser, subs, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    sp = subs[args.command]
    try:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        sp.error(f"cannot read --config {args.config}: {exc}")
    if not isinstance(raw, dict):
        sp.error("--config must hold a JSON object")
    by_dest = {a.dest: a for a in sp._actions if a.dest not in ("help", "config")}
    defaults = {}
    for key, value in raw.items():
        dest = key.replace("-", "_")
        if dest not in by_dest:
            sp.error(f"unknown key {key!r} in --config {args.config}")
        action = by_dest[dest]
        if action.type is not None and isinstance(value, (str, int, float)) and not isinstance(value, bool):
            try:
                value = action.type(str(value))
            except (argparse.ArgumentTypeError, ValueError) as exc:
                sp.error(f"bad value for {key!r} in --config: {exc}")
        elif isinstance(value, list):
            value = tuple(value)
        if action.choices is not None and value not in action.choices:
            sp.error(f"bad value for {key!r} in --config: {value!r} not in {list(action.choices)}")
        defaults[dest] = value
    sp.set_defaults(**defaults)
    for a in sp._actions:
        if a.dest in defaults:
            a.required = False
    return parser.parse_args(argv)


def _data_dir(args, attr="data") -> Path:
    value = getattr(args, attr, None) or os.environ.get(DATA_ENV)
    if not value:
        raise _UsageError(f"no dataset directory: pass --{attr} or set ${DATA_ENV}")
    return Path(value)


class _UsageError(Exception):
    pass


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True, allow_nan=False, default=_json_default) + "\n")
    sys.stdout.flush()


def _json_default(o):
    if isinstance(o, (set, frozenset, tuple)):
        return sorted(o) if isinstance(o, (set, frozenset)) else list(o)
    if hasattr(o, "item"):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _resolved(args) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if isinstance(v, float) and math.isinf(v):
            v = "inf"
        elif isinstance(v, (list, tuple)):
            v = ["inf" if isinstance(x, float) and math.isinf(x) else x for x in v]
        out[k] = v
    return out


# -- subcommands ---------------------------------------------------------------------
def cmd_generate(args) -> dict:
    from .synth import SynthConfig, generate

    out = _data_dir(args, "out")
    overrides = dict(p_in=args.p_in, signal=args.signal, feature_dim=args.feature_dim,
                     queries_per_community=args.queries_per_community, seed=args.seed)
    if args.communities is not None:
        overrides["communities"] = args.communities
    if args.p_out is not None:
        overrides["p_out"] = args.p_out
    cfg = SynthConfig.scaled(args.nodes, **overrides)
    ds = generate(cfg)
    ds.save(out)
    (out / "synth_config.json").write_text(json.dumps(cfg.to_dict(), sort_keys=True) + "\n", encoding="utf-8")
    return {
        "out": str(out),
        "nodes": ds.graph.num_nodes,
        "edges": ds.graph.num_edges,
        "communities": len(ds.communities),
        "tasks": len(ds.tasks),
    }


def cmd_train(args) -> dict:
    from .trainer import train
    from .validation import check_fanouts

    data = _data_dir(args)
    try:
        fanouts = check_fanouts(args.fanouts, args.layers)
    except ValueError as exc:
        raise _UsageError(f"--fanouts: {exc}") from None
    graph, tasks, _ = load_dataset(data)
    mcfg = ModelConfig(layers=args.layers, hidden=args.hidden, heads=args.heads, unified_dim=args.unified_dim,
                       edge_dim=args.edge_dim, dropout=args.dropout, encoders=args.encoders,
                       edge_semantic=args.edge_semantic)
    tcfg = TrainConfig(mode=args.mode, epochs=args.epochs, patience=args.patience, lr=args.lr,
                       weight_decay=args.weight_decay, fanouts=fanouts, seed=args.seed)
    out = Path(args.out) if args.out else data / "checkpoint.json"
    report, _ = train(graph, tasks, mcfg, tcfg, out)
    return report.to_json()


def cmd_query(args) -> dict:
    from .model import check_compatible, predict
    from .search import SearchConfig, search
    from .validation import check_query, resolve_types

    graph, _, _ = load_dataset(_data_dir(args))
    ckpt = load_checkpoint(args.checkpoint)
    check_compatible(ckpt.signature, graph, ckpt.config.use_edge_features)
    q = check_query(graph, args.query_node)
    types = resolve_types(graph, args.types) if args.types else frozenset({int(graph.node_type[q])})
    gamma = args.gamma if args.gamma is not None else (ckpt.gamma if ckpt.gamma is not None else 0.5)
    probs = predict(ckpt.params, ckpt.config, graph, q)
    res = search(graph, q, probs, SearchConfig(gamma, args.dmax, types), connectivity=args.connectivity)
    return res.to_json(graph)


def cmd_evaluate(args) -> dict:
    from .metrics import evaluate

    graph, tasks, communities = load_dataset(_data_dir(args))
    ckpt = load_checkpoint(args.checkpoint)
    splits = ckpt.meta.get("splits") or {}
    if args.split != "all":
        idx = splits.get(args.split)
        if idx is None:
            raise ValueError(f"checkpoint records no {args.split!r} split; use --split all")
        if idx and max(idx) >= len(tasks):
            raise ValueError("checkpoint splits do not match this dataset's tasks; use --split all")
        tasks = [tasks[i] for i in idx]
    if not tasks:
        raise ValueError(f"the {args.split!r} split is empty")
    depths = args.sweep_dmax if args.sweep_dmax else args.dmax
    report = evaluate(graph, ckpt, tasks, args.gamma, depths, communities)
    if args.tsv:
        Path(args.tsv).write_text(report.to_tsv(), encoding="utf-8")
    return report.to_json()


def cmd_bench(args) -> dict:
    from .bench import bench

    mcfg = ModelConfig(layers=args.layers, hidden=args.hidden, heads=args.heads)
    report = bench(sizes=args.sizes, modes=args.modes, model_config=mcfg, fanouts=args.fanouts, d_max=args.dmax,
                   reps=args.reps, tasks_per_epoch=args.tasks_per_epoch, queries=args.queries,
                   profile=args.profile, seed=args.seed)
    if args.tsv:
        Path(args.tsv).write_text(report.to_tsv(), encoding="utf-8")
    return report.to_json()


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "query": cmd_query, "evaluate": cmd_evaluate,
            "bench": cmd_bench}


def _jsonable(obj):
    if isinstance(obj, float) and math.isinf(obj):
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def main(argv=None) -> int:
    parser, subs = build_parser()
    try:
        args = _apply_config(parser, subs, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(asctime)s %(name)s %(levelname)s %(message)s"))
    saved = log.level, log.propagate
    log.addHandler(handler)
    log.setLevel(args.log_level)
    log.propagate = False
    try:
        log.info("resolved config: %s", json.dumps(_resolved(args), sort_keys=True))
        result = COMMANDS[args.command](args)
    except _UsageError as exc:
        subs[args.command].print_usage(sys.stderr)
        print(f"hetcs {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, IndexError, OSError, DatasetFormatError, GraphBuildError, TrainingError,
            FloatingPointError) as exc:
        print(f"hetcs {args.command}: error: {exc}", file=sys.stderr)
        return 1
    finally:
        log.removeHandler(handler)
        log.setLevel(saved[0])
        log.propagate = saved[1]
    _emit(_jsonable(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
