"""Command-line entry point: generate, train, evaluate, crossval, ablate, gradcheck,
export-saliency and bench."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .graph import Dataset, Graph, GenerationError, generate_triangles, k_fold_split, load_tu_dataset
from .model import (
    VARIANT_ALIASES,
    SarGnnConfig,
    SarGnnModel,
    cross_validate,
    evaluate,
    load_checkpoint,
    loss,
    predict,
    save_checkpoint,
    train,
)
from .optim import grad_check_report

log = logging.getLogger("sargnn")

GRADCHECK_TOLERANCE = 1e-4
CSV_HEADER = ["fold", "epoch", "block", "loss", "train_accuracy"]
METRICS_SCHEMA = Path(__file__).with_name("metrics.schema.json")


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ parsing


def _range(text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(x) for x in text.split(".."))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO..HI, got {text!r}") from None
    return lo, hi


def _sizes(text: str) -> list[tuple[int, int, int]]:
    out = []
    for item in text.split(","):
        try:
            n, layers, d = (int(x) for x in item.split(":"))
        except ValueError:
            raise argparse.ArgumentTypeError(f"size points look like N:L:d, got {item!r}") from None
        out.append((n, layers, d))
    return out


def _add_data_args(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", type=Path, help="dataset in the native JSON format")
    src.add_argument("--tu", metavar="DIR/NAME", help="TU-format dataset, e.g. data/MUTAG/MUTAG")


def _add_model_args(p: argparse.ArgumentParser, dim: int = 32, layers: int = 3) -> None:
    p.add_argument("--backbone", choices=["gcn", "gin", "sage", "gat"], default="gcn")
    p.add_argument("--variant", choices=list(VARIANT_ALIASES), default=None,
                   help="model variant (default sar-w, or sar-s with --fusion scaling)")
    p.add_argument("--fusion", choices=["weighted", "scaling"], default=None)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--layers", type=int, default=layers)
    p.add_argument("--dim", type=int, default=dim, help="d_H = d_M = d")
    p.add_argument("--k-iters", type=int, default=1)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--policy", choices=["joint", "alternating"], default="joint")
    p.add_argument("--alt-period", type=int, default=1)
    p.add_argument("--saliency-lambda", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sargnn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic triangle-counting dataset")
    p.add_argument("--n", type=int, required=True, help="number of graphs")
    p.add_argument("--nodes", type=_range, default=(6, 20), help="node range LO..HI")
    p.add_argument("--labels", type=int, default=3, help="triangle counts 1..LABELS")
    p.add_argument("--edge-prob", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", help="train one model and write metrics + checkpoint")
    _add_data_args(p)
    _add_model_args(p)
    p.add_argument("--holdout", type=float, default=0.0,
                   help="fraction of graphs held out for a test accuracy")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("evaluate", help="accuracy of a checkpoint on a dataset")
    _add_data_args(p)
    p.add_argument("--checkpoint", type=Path, required=True)

    for name, helptext in (("crossval", "k-fold cross-validation"),
                           ("ablate", "cross-validate all six variants")):
        p = sub.add_parser(name, help=helptext)
        _add_data_args(p)
        _add_model_args(p)
        p.add_argument("--k", type=int, default=10)
        p.add_argument("--workers", type=int, default=1, help="parallel fold processes")
        p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("gradcheck", help="end-to-end finite-difference gradient check")
    _add_model_args(p, dim=6, layers=2)
    p.add_argument("--h", type=float, default=1e-5)

    p = sub.add_parser("export-saliency", help="per-graph saliency as JSON and DOT")
    _add_data_args(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--indices", default="0", help="comma-separated graph indices")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("bench", help="forward+backward time per graph over (N, L, d) points")
    p.add_argument("--sizes", type=_sizes, required=True, help="comma list of N:L:d")
    p.add_argument("--backbone", choices=["gcn", "gin", "sage", "gat"], default="gcn")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=None)
    return parser


def config_from_args(args, dataset: Dataset | None = None) -> SarGnnConfig:
    fusion = {"weighted": "weighted_sum", "scaling": "scaling", None: None}[args.fusion]
    variant = args.variant or ("sar-s" if fusion == "scaling" else "sar-w")
    implied = VARIANT_ALIASES[variant]
    if fusion is not None:
        if implied[0] in ("base", "gnm_gnn"):
            raise UsageError(f"--fusion has no effect for variant {variant}")
        if fusion != implied[1]:
            raise UsageError(f"--fusion {args.fusion} contradicts variant {variant}")
    if not args.gamma > 0:
        raise UsageError("--gamma must be > 0")
    if args.saliency_lambda < 0:
        raise UsageError("--saliency-lambda must be >= 0")
    if args.layers < 1 or args.dim < 1 or args.k_iters < 1 or args.alt_period < 1:
        raise UsageError("--layers, --dim, --k-iters and --alt-period must be positive")
    if args.epochs < 0 or args.lr < 0:
        raise UsageError("--epochs and --lr must be nonnegative")
    extra = {}
    if dataset is not None:
        extra = {"in_dim": dataset.feature_dim, "num_classes": dataset.num_classes}
    return SarGnnConfig.from_variant(
        variant, backbone=args.backbone, beta=args.beta, gamma=args.gamma, layers=args.layers,
        hidden_dim=args.dim, k_iters=args.k_iters, learning_rate=args.lr, epochs=args.epochs,
        policy=args.policy, alt_period=args.alt_period, saliency_lambda=args.saliency_lambda,
        seed=args.seed, **extra)


def load_data(args) -> Dataset:
    if args.data is not None:
        return Dataset.load(args.data)
    path = Path(args.tu)
    return load_tu_dataset(path.parent, path.name)


# ------------------------------------------------------------------ outputs


def _dataset_info(ds: Dataset) -> dict:
    return {"name": ds.name, "num_graphs": len(ds), "num_classes": ds.num_classes,
            "feature_dim": ds.feature_dim}


def _epoch_rows(report, fold: int) -> list[dict]:
    return [{"fold": fold, "epoch": e, "block": b, "loss": l, "train_accuracy": a}
            for e, (l, a, b) in enumerate(zip(report.epoch_losses, report.epoch_accuracies,
                                              report.epoch_blocks))]


def write_metrics(out: Path, metrics: dict, epoch_rows: list[dict]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    metrics = {"schema_version": 1, **metrics, "epochs": epoch_rows}
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2))
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_HEADER)
        writer.writeheader()
        writer.writerows(epoch_rows)


def write_embeddings(path: Path, model: SarGnnModel, graphs: Sequence[Graph]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        dim = len(model.embedding(graphs[0])) if graphs else 0
        writer.writerow(["index", "label", "prediction"] + [f"m{i}" for i in range(dim)])
        for i, g in enumerate(graphs):
            writer.writerow([i, g.label, predict(model, g)] + [repr(float(x)) for x in model.embedding(g)])


def saliency_record(model: SarGnnModel, g: Graph) -> dict:
    with T.no_grad():
        trace = model.forward(g)
    return {
        "nodes": list(range(g.num_nodes)),
        "edges": g.edges.tolist(),
        "saliency": [s.data.reshape(-1).tolist() for s in trace.saliencies],
        "label": g.label,
        "prediction": trace.prediction,
    }


def saliency_dot(record: dict, name: str = "G") -> str:
    final = np.asarray(record["saliency"][-1]) if record["saliency"] else np.ones(len(record["nodes"]))
    peak = final.max() if final.size and final.max() > 0 else 1.0
    lines = [f"graph {name} {{", '  node [style=filled, shape=circle, fontname="Helvetica"];']
    for v, s in zip(record["nodes"], final):
        shade = int(round(255 * (1.0 - s / peak)))
        color = f"#ff{shade:02x}{shade:02x}"
        lines.append(f'  {v} [label="{v}\\n{s:.3f}", fillcolor="{color}"];')
    for u, v in record["edges"]:
        lines.append(f"  {u} -- {v};")
    lines.append("}")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------- commands


def cmd_generate(args) -> int:
    if args.labels < 2:
        raise UsageError("--labels must be at least 2")
    lo, hi = args.nodes
    if lo < 3 or hi < lo:
        raise UsageError("--nodes needs 3 <= LO <= HI")
    ds = generate_triangles(args.n, lo, hi, args.labels, args.edge_prob, args.seed)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    ds.save(args.out)
    counts = np.bincount(ds.labels, minlength=ds.num_classes).tolist()
    print(json.dumps({"graphs": len(ds), "class_counts": counts, "out": str(args.out)}))
    return 0


def cmd_train(args) -> int:
    ds = load_data(args)
    cfg = config_from_args(args, ds)
    if not 0 <= args.holdout < 1:
        raise UsageError("--holdout must lie in [0, 1)")
    train_graphs, test_graphs = ds.graphs, []
    if args.holdout > 0:
        k = max(2, int(round(1 / args.holdout)))
        train_idx, test_idx = k_fold_split(ds, k, args.seed).train_test(0)
        train_graphs, test_graphs = ds.subset(train_idx), ds.subset(test_idx)
    model = SarGnnModel(cfg)
    report = train(model, train_graphs, cfg,
                   on_epoch=lambda e, l, a: log.info("epoch %d loss %.4f acc %.3f", e, l, a))
    metrics = {
        "command": "train",
        "config": asdict(cfg),
        "dataset": _dataset_info(ds),
        "train_accuracy": evaluate(model, train_graphs),
        "test_accuracy": evaluate(model, test_graphs) if test_graphs else None,
        "seconds_per_graph": report.seconds_per_graph,
        "num_parameters": model.num_parameters(),
    }
    write_metrics(args.out, metrics, _epoch_rows(report, 0))
    save_checkpoint(model, args.out / "checkpoint.json")
    write_embeddings(args.out / "embeddings.csv", model, ds.graphs)
    print(json.dumps({k: metrics[k] for k in ("train_accuracy", "test_accuracy", "num_parameters")}))
    return 0


def cmd_evaluate(args) -> int:
    ds = load_data(args)
    model = load_checkpoint(args.checkpoint)
    if model.cfg.in_dim != ds.feature_dim:
        raise UsageError("checkpoint and dataset disagree on feature dimension")
    print(json.dumps({"accuracy": evaluate(model, ds.graphs), "graphs": len(ds)}))
    return 0


def _crossval_metrics(ds, cfg, k, workers) -> tuple[dict, list[dict]]:
    res = cross_validate(ds, cfg, k=k, seed=cfg.seed, workers=workers)
    rows = [row for fold, rep in enumerate(res.reports) for row in _epoch_rows(rep, fold)]
    steps = sum(r.steps for r in res.reports)
    metrics = {
        "mean_accuracy": res.mean,
        "std_accuracy": res.std,
        "folds": [{"fold": i, "accuracy": a} for i, a in enumerate(res.fold_accuracies)],
        "seconds_per_graph": sum(r.seconds for r in res.reports) / steps if steps else 0.0,
        "num_parameters": SarGnnModel(cfg).num_parameters(),
    }
    return metrics, rows


def cmd_crossval(args) -> int:
    ds = load_data(args)
    cfg = config_from_args(args, ds)
    if not 2 <= args.k <= len(ds):
        raise UsageError(f"--k must lie in [2, {len(ds)}]")
    metrics, rows = _crossval_metrics(ds, cfg, args.k, args.workers)
    metrics = {"command": "crossval", "config": asdict(cfg), "dataset": _dataset_info(ds), **metrics}
    write_metrics(args.out, metrics, rows)
    print(json.dumps({"mean_accuracy": metrics["mean_accuracy"], "std_accuracy": metrics["std_accuracy"]}))
    return 0


def cmd_ablate(args) -> int:
    ds = load_data(args)
    if args.variant or args.fusion:
        raise UsageError("ablate sweeps every variant; drop --variant/--fusion")
    if not 2 <= args.k <= len(ds):
        raise UsageError(f"--k must lie in [2, {len(ds)}]")
    table, rows = {}, []
    for name in VARIANT_ALIASES:
        args.variant = name
        cfg = config_from_args(args, ds)
        metrics, fold_rows = _crossval_metrics(ds, cfg, args.k, args.workers)
        table[name] = {"mean_accuracy": metrics["mean_accuracy"], "std_accuracy": metrics["std_accuracy"],
                       "folds": metrics["folds"], "num_parameters": metrics["num_parameters"]}
        rows.extend(fold_rows)
        print(f"{name:12s} {100 * metrics['mean_accuracy']:5.1f} ± {100 * metrics['std_accuracy']:4.1f}")
    args.variant = None
    write_metrics(args.out, {"command": "ablate", "dataset": _dataset_info(ds), "variants": table}, [])
    return 0


def gradcheck_graph(seed: int, in_dim: int = 3) -> Graph:
    """Seeded 4-node connected graph with continuous features."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(4)
    edges = [(perm[i], perm[i + 1]) for i in range(3)]
    extra = rng.choice([(perm[0], perm[2]), (perm[1], perm[3]), (perm[0], perm[3])])
    edges.append(tuple(extra))
    truth = np.zeros(4)
    truth[perm[:3]] = 1 / 3
    return Graph(4, np.array(edges), rng.normal(size=(4, in_dim)), 1, truth)


def group_of(name: str) -> str:
    parts = name.split(".")
    return ".".join(parts[:2]) if parts[0] in ("backbone", "memory", "saliency") else parts[0]


def run_gradcheck(cfg: SarGnnConfig, h: float = 1e-5) -> dict[str, float]:
    """Max relative error per parameter group for one loss evaluation on the seeded graph."""
    g = gradcheck_graph(cfg.seed, cfg.in_dim)
    model = SarGnnModel(cfg)
    params = model.named_parameters()
    per_param = grad_check_report(lambda: loss(model.forward(g), g, cfg), params, h)
    groups: dict[str, float] = {}
    for name, err in per_param.items():
        key = group_of(name)
        groups[key] = max(groups.get(key, 0.0), err)
    return groups


def cmd_gradcheck(args) -> int:
    cfg = config_from_args(args).replace(in_dim=3, num_classes=3)
    groups = run_gradcheck(cfg, args.h)
    worst = float(max(groups.values()))
    passed = bool(worst < GRADCHECK_TOLERANCE)
    print(json.dumps({"variant": args.variant or "sar-w", "backbone": cfg.backbone,
                      "groups": groups, "max_error": worst, "passed": passed}, indent=2))
    return 0 if passed else 1


def cmd_export_saliency(args) -> int:
    ds = load_data(args)
    model = load_checkpoint(args.checkpoint)
    if not model.cfg.regularized:
        raise UsageError(f"variant {model.cfg.variant} computes no saliency")
    if model.cfg.in_dim != ds.feature_dim:
        raise UsageError("checkpoint and dataset disagree on feature dimension")
    try:
        indices = [int(x) for x in args.indices.split(",") if x.strip()]
    except ValueError:
        raise UsageError("--indices must be comma-separated integers") from None
    for i in indices:
        if not 0 <= i < len(ds):
            raise UsageError(f"graph index {i} out of range [0, {len(ds)})")
    out = args.out / "saliency"
    out.mkdir(parents=True, exist_ok=True)
    for i in indices:
        record = saliency_record(model, ds[i])
        (out / f"{i}.json").write_text(json.dumps(record, indent=2))
        (out / f"{i}.dot").write_text(saliency_dot(record, name=f"g{i}"))
    print(json.dumps({"exported": indices, "out": str(out)}))
    return 0


def bench_graph(n: int, rng: np.random.Generator, mean_degree: float = 4.0) -> Graph:
    p = min(1.0, mean_degree / max(1, n - 1))
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < p
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    return Graph(n, edges, rng.normal(size=(n, 11)), 0)


def time_forward_backward(cfg: SarGnnConfig, g: Graph, repeats: int = 5) -> float:
    """Best-of-``repeats`` wall time of one forward+backward pass."""
    model = SarGnnModel(cfg)
    best = np.inf
    for _ in range(repeats + 1):
        model.zero_grad()
        t0 = time.perf_counter()
        T.backward(loss(model.forward(g), g, cfg))
        best = min(best, time.perf_counter() - t0)
    return float(best)


def _slope(xs, ys) -> float | None:
    if len(set(xs)) < 2:
        return None
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def run_bench(sizes, backbone: str = "gcn", repeats: int = 5, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    rows = []
    for n, layers, d in sizes:
        g = bench_graph(n, rng)
        cfg = SarGnnConfig(backbone=backbone, variant="sar_gnn", layers=layers, hidden_dim=d,
                           in_dim=11, num_classes=2, seed=seed)
        rows.append({"N": n, "L": layers, "d": d, "edges": g.num_edges,
                     "seconds": time_forward_backward(cfg, g, repeats)})
    fits: dict[str, float | None] = {"N": None, "L": None}
    by_ld: dict[tuple, list] = {}
    by_nd: dict[tuple, list] = {}
    for r in rows:
        by_ld.setdefault((r["L"], r["d"]), []).append(r)
        by_nd.setdefault((r["N"], r["d"]), []).append(r)
    for key, groups in (("N", by_ld), ("L", by_nd)):
        slopes = [_slope([r[key] for r in grp], [r["seconds"] for r in grp]) for grp in groups.values()]
        slopes = [s for s in slopes if s is not None]
        fits[key] = float(np.mean(slopes)) if slopes else None
    return {"rows": rows, "exponents": fits}


def cmd_bench(args) -> int:
    result = run_bench(args.sizes, args.backbone, args.repeats, args.seed)
    print(f"{'N':>6} {'L':>3} {'d':>4} {'|E|':>6} {'ms':>9}")
    for r in result["rows"]:
        print(f"{r['N']:6d} {r['L']:3d} {r['d']:4d} {r['edges']:6d} {1000 * r['seconds']:9.3f}")
    print(f"growth exponents: {json.dumps(result['exponents'])}")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "bench.json").write_text(json.dumps(result, indent=2))
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "crossval": cmd_crossval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
    "export-saliency": cmd_export_saliency,
    "bench": cmd_bench,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, T.ContractError) as exc:
        parser.error(str(exc))
    except (GenerationError, FileNotFoundError) as exc:
        print(f"sargnn: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
