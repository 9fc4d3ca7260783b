"""Command-line pipeline: data generation, graph building, training, evaluation,
and neighbor stability analysis.

Configuration is flat ``key=value`` text (one pair per line, ``#`` comments);
command-line flags override file values. Unknown keys are rejected. Every
command accepts ``--seed`` and re-runs byte-identically for identical flags.
The ``GEANN_THREADS`` environment variable caps internal parallelism
(0 or unset keeps the automatic default); ``GEANN_NUMBA`` selects the kernel
path, see :mod:`geann._accel`.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import _accel
from .data import load_dataset, save_dataset
from .graph_build import (
    cooccurrence_graph,
    load_membership_csv,
    neighbor_score_stats,
    neighbor_sets_from_graph,
    pearson_knn_graph,
    save_membership_csv,
    stability_table,
)
from .graphs import identity_graph, load_edge_list, random_graph, save_edge_list
from .model import EncoderConfig, GemConfig, ModelConfig
from .synthetic import (
    SyntheticSpec,
    generate,
    load_segments_csv,
    pretrain_on_dataset,
    save_segments_csv,
    segment_masks,
)
from .tensor import ParameterStore
from .training import TrainConfig, evaluate_weighted_ql, train


class UsageError(ValueError):
    pass


def load_config(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def merge_config(args, known: dict[str, type]) -> dict:
    """File values overridden by flags, coerced per the known-key table."""
    raw = dict(load_config(args.config)) if getattr(args, "config", None) else {}
    unknown = set(raw) - set(known)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    merged = {}
    for key, caster in known.items():
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
        elif key in raw:
            merged[key] = caster(raw[key])
    return merged


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in str(text).split(",") if v != "")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in str(text).split(",") if v != "")


def _write_csv(path, header: str, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> int:
    known = {
        "n": int, "t": int, "clusters": int, "cold_start_fraction": float,
        "oos_fraction": float, "noise": float, "seed": int, "context": int,
        "horizons": _ints, "quantiles": _floats,
    }
    cfg = merge_config(args, known)
    spec = SyntheticSpec(
        num_series=cfg.get("n", 200),
        num_steps=cfg.get("t", 100),
        num_clusters=cfg.get("clusters", 10),
        cold_start_fraction=cfg.get("cold_start_fraction", 0.0),
        oos_fraction=cfg.get("oos_fraction", 0.0),
        noise_scale=cfg.get("noise", 0.0),
        seed=cfg.get("seed", 0),
        context_length=cfg.get("context", 12),
        horizons=cfg.get("horizons", (1, 2, 4)),
        quantiles=cfg.get("quantiles", (0.5, 0.9)),
    )
    bundle = generate(spec)
    os.makedirs(args.out, exist_ok=True)
    save_dataset(bundle.dataset, os.path.join(args.out, "dataset.bin"))
    save_edge_list(bundle.truth_graph, os.path.join(args.out, "truth_graph.csv"))
    save_membership_csv(bundle.memberships, os.path.join(args.out, "memberships.csv"))
    save_segments_csv(bundle.segments, os.path.join(args.out, "segments.csv"))
    print(f"wrote dataset ({spec.num_series} series x {spec.num_steps} steps) to {args.out}")
    return 0


def cmd_build_graph(args) -> int:
    if args.kind == "identity":
        if args.n is None:
            raise UsageError("build-graph --kind identity needs --n")
        g = identity_graph(args.n)
    elif args.kind == "random":
        if args.n is None or args.k is None:
            raise UsageError("build-graph --kind random needs --n and --k")
        g = random_graph(args.n, args.k, args.seed or 0)
    elif args.kind == "knn":
        if not args.embeddings or args.k is None:
            raise UsageError("build-graph --kind knn needs --embeddings and --k")
        emb = np.load(args.embeddings)
        g = pearson_knn_graph(emb, args.k)
    elif args.kind == "cooc":
        if not args.members or args.n is None or args.k is None:
            raise UsageError("build-graph --kind cooc needs --members, --n and --k")
        members = load_membership_csv(args.members)
        g = cooccurrence_graph(members, args.n, args.k)
    else:
        raise UsageError(f"unknown graph kind {args.kind!r}")
    save_edge_list(g, args.out)
    print(f"wrote {g.num_edges} edges over {g.num_nodes} nodes to {args.out}")
    return 0


def _encoder_config(cfg: dict) -> EncoderConfig:
    return EncoderConfig(
        kernel_size=cfg.get("kernel", 2),
        dilations=cfg.get("dilations", (1, 2, 4)),
        channels=cfg.get("channels", (16, 16, 16)),
    )


_MODEL_KEYS = {
    "kernel": int, "dilations": _ints, "channels": _ints,
    "static_hidden": int, "static_width": int, "decoder_hidden": int,
    "gcn_layers": int, "gcn_hidden": int, "gcn_width": int,
}
_TRAIN_KEYS = {
    "epochs": int, "batch": int, "lr": float, "optimizer": str,
    "weight_decay": float, "seed": int, "hops": int, "k": int,
    "train_t_end": int, "fct_stride": int,
}


def _model_config(cfg: dict, num_graphs: int) -> ModelConfig:
    gem = None
    if num_graphs:
        gem = GemConfig(
            num_graphs=num_graphs,
            num_layers=cfg.get("gcn_layers", 2),
            hidden_width=cfg.get("gcn_hidden", 16),
            out_width=cfg.get("gcn_width", 16),
        )
    return ModelConfig(
        encoder=_encoder_config(cfg),
        gem=gem,
        static_hidden=cfg.get("static_hidden", 8),
        static_width=cfg.get("static_width", 8),
        decoder_hidden=cfg.get("decoder_hidden", 16),
    )


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        epochs=cfg.get("epochs", 10),
        batch_size=cfg.get("batch", 64),
        learning_rate=cfg.get("lr", 1e-3),
        optimizer=cfg.get("optimizer", "adamw"),
        weight_decay=cfg.get("weight_decay", 0.01),
        seed=cfg.get("seed", 0),
        num_hops=cfg.get("hops"),
        top_k=cfg.get("k"),
        train_t_end=cfg.get("train_t_end"),
        fct_stride=cfg.get("fct_stride"),
    )


def _save_model_config(cfg: ModelConfig, path) -> None:
    lines = [
        f"kernel={cfg.encoder.kernel_size}",
        f"dilations={','.join(str(d) for d in cfg.encoder.dilations)}",
        f"channels={','.join(str(c) for c in cfg.encoder.channels)}",
        f"static_hidden={cfg.static_hidden}",
        f"static_width={cfg.static_width}",
        f"decoder_hidden={cfg.decoder_hidden}",
    ]
    if cfg.gem is not None:
        lines += [
            f"gcn_layers={cfg.gem.num_layers}",
            f"gcn_hidden={cfg.gem.hidden_width}",
            f"gcn_width={cfg.gem.out_width}",
            f"num_graphs={cfg.gem.num_graphs}",
        ]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _load_model_config(path, num_graphs: int) -> ModelConfig:
    raw = load_config(path)
    cfg = {
        "kernel": int(raw["kernel"]),
        "dilations": _ints(raw["dilations"]),
        "channels": _ints(raw["channels"]),
        "static_hidden": int(raw["static_hidden"]),
        "static_width": int(raw["static_width"]),
        "decoder_hidden": int(raw["decoder_hidden"]),
    }
    if "gcn_layers" in raw:
        cfg.update(
            gcn_layers=int(raw["gcn_layers"]),
            gcn_hidden=int(raw["gcn_hidden"]),
            gcn_width=int(raw["gcn_width"]),
        )
        stored = int(raw.get("num_graphs", num_graphs))
        if num_graphs != stored:
            raise UsageError(f"model was trained with {stored} graphs, got {num_graphs}")
    elif num_graphs:
        raise UsageError("model was trained without graphs; do not pass --graphs")
    return _model_config(cfg, num_graphs)


def _load_graphs(arg: str | None):
    if not arg:
        return []
    return [load_edge_list(path) for path in arg.split(",")]


def cmd_pretrain(args) -> int:
    known = dict(_MODEL_KEYS)
    known.update({"epochs": int, "batch": int, "lr": float, "seed": int})
    cfg = merge_config(args, known)
    ds = load_dataset(args.data)
    emb = pretrain_on_dataset(
        ds,
        _encoder_config(cfg),
        epochs=cfg.get("epochs", 10),
        seed=cfg.get("seed", 0),
        batch_size=cfg.get("batch", 128),
        learning_rate=cfg.get("lr", 3e-3),
    )
    np.save(args.out, emb)
    print(f"wrote embeddings with shape {emb.shape} to {args.out}")
    return 0


def cmd_train(args) -> int:
    known = dict(_MODEL_KEYS)
    known.update(_TRAIN_KEYS)
    cfg = merge_config(args, known)
    ds = load_dataset(args.data)
    graphs = _load_graphs(args.graphs)
    model = _model_config(cfg, len(graphs))
    tcfg = _train_config(cfg)
    result = train(ds, graphs, tcfg, model)
    os.makedirs(args.out, exist_ok=True)
    np.savez(os.path.join(args.out, "params.npz"), **result.params.state_arrays())
    _save_model_config(model, os.path.join(args.out, "model.cfg"))
    _write_csv(
        os.path.join(args.out, "train_log.csv"),
        "epoch,batch,loss",
        ((ep, b, _fmt(loss)) for ep, b, loss in result.history),
    )
    final = result.history[-1][2] if result.history else float("nan")
    print(f"trained {tcfg.epochs} epochs; final batch loss {final:.6g}; outputs in {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    ds = load_dataset(args.data)
    graphs = _load_graphs(args.graphs)
    model = _load_model_config(os.path.join(args.params, "model.cfg"), len(graphs))
    arrays = np.load(os.path.join(args.params, "params.npz"))
    params = ParameterStore.from_arrays({name: arrays[name] for name in arrays.files})
    segments = None
    if args.segments:
        segments = segment_masks(load_segments_csv(args.segments), ds.num_series)
    try:
        t0, t1 = (int(v) for v in args.split.split(":"))
    except ValueError:
        raise UsageError(f"--split must look like start:end, got {args.split!r}") from None
    report = evaluate_weighted_ql(ds, params, model, graphs, (t0, t1), segments)
    _write_csv(
        args.out,
        "segment,quantile,weighted_ql",
        ((seg, label, _fmt(v)) for seg, label, v in report.rows()),
    )
    print(f"wrote evaluation report to {args.out}")
    return 0


def cmd_stability(args) -> int:
    paths = args.runs.split(",")
    if len(paths) < 2:
        raise UsageError("stability needs at least two run files")
    runs = [neighbor_sets_from_graph(load_edge_list(p), args.k) for p in paths]
    table = stability_table(runs, args.k)
    _write_csv(args.out, "node,stability", ((node, _fmt(v)) for node, v in table))
    mean = float(np.mean([v for _, v in table])) if table else float("nan")
    print(f"mean stability {mean:.4f} over {len(table)} nodes; wrote {args.out}")
    return 0


def cmd_graph_stats(args) -> int:
    g = load_edge_list(args.graph)
    table = neighbor_score_stats(g, args.k)
    _write_csv(
        args.out,
        "node,mean,std",
        ((node, _fmt(m), _fmt(s)) for node, m, s in table),
    )
    print(f"wrote per-node score statistics for {len(table)} nodes to {args.out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="geann",
        description="Graph-ensemble quantile forecasting pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a clustered synthetic panel")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--out", required=True, help="output directory")
    for flag, caster in (
        ("--n", int), ("--t", int), ("--clusters", int),
        ("--cold-start-fraction", float), ("--oos-fraction", float),
        ("--noise", float), ("--seed", int), ("--context", int),
    ):
        p.add_argument(flag, type=caster)
    p.add_argument("--horizons", type=_ints)
    p.add_argument("--quantiles", type=_floats)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("build-graph", help="build or synthesize a sparse graph")
    p.add_argument("--kind", required=True, choices=["knn", "cooc", "identity", "random"])
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--embeddings", help=".npy embedding matrix for knn")
    p.add_argument("--members", help="membership csv for cooc")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("pretrain", help="fit the graph-free model and emit embeddings")
    p.add_argument("--config")
    p.add_argument("--data", required=True, help="dataset container")
    p.add_argument("--out", required=True, help="output .npy path")
    for flag in ("--epochs", "--batch", "--seed", "--kernel", "--static-hidden",
                 "--static-width", "--decoder-hidden", "--gcn-layers", "--gcn-hidden",
                 "--gcn-width"):
        p.add_argument(flag, type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--dilations", type=_ints)
    p.add_argument("--channels", type=_ints)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="train on a panel with zero or more graphs")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--graphs", help="comma-separated edge-list files")
    p.add_argument("--out", required=True, help="output directory")
    for flag in ("--epochs", "--batch", "--seed", "--hops", "--k", "--train-t-end",
                 "--fct-stride", "--kernel", "--static-hidden", "--static-width",
                 "--decoder-hidden", "--gcn-layers", "--gcn-hidden", "--gcn-width"):
        p.add_argument(flag, type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--optimizer", choices=["sgd", "adamw"])
    p.add_argument("--dilations", type=_ints)
    p.add_argument("--channels", type=_ints)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="weighted quantile-loss report")
    p.add_argument("--data", required=True)
    p.add_argument("--params", required=True, help="directory produced by train")
    p.add_argument("--graphs")
    p.add_argument("--segments", help="segments csv for breakdowns")
    p.add_argument("--split", required=True, help="creation-time range start:end")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stability", help="per-node neighbor stability across runs")
    p.add_argument("--runs", required=True, help="comma-separated knn graph files")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("graph-stats", help="per-node mean and std of top-k in-edge weights")
    p.add_argument("--graph", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_graph_stats)

    return parser


def main(argv=None) -> int:
    threads = os.environ.get("GEANN_THREADS", "").strip()
    if threads.isdigit():
        _accel.set_thread_cap(int(threads))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure, keep the diagnostic on stderr
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
