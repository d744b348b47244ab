"""Command-line entry point.

Subcommands: `gen` writes a SHAF1 dataset, `train` produces a checkpoint
plus a metrics log, `eval` reports retrieval/probe/zero-shot numbers,
`infer` runs the sensor-dropout substitution experiment, and `check` runs
the built-in invariant suite. Every run drops a resolved-config snapshot
next to its outputs. Exit codes: 0 success, 1 runtime failure, 2 usage or
config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, apply_overrides, resolve_config
from .data import (
    DatasetFormatError,
    RedundancyControl,
    class_balanced_split,
    generate_multiview,
    read_dataset,
    write_dataset,
)
from .evaluation import (
    dropout_inference_experiment,
    encode_views,
    few_shot_probe,
    retrieval_report,
    train_linear_probe,
    zero_shot_prototype,
)
from .training import CheckpointError, build_model, load_checkpoint, train, write_metrics

log = logging.getLogger("decalign")

USAGE_ERROR = 2
RUNTIME_ERROR = 1


def _load_config(args) -> RunConfig:
    path = Path(args.config)
    try:
        with open(path) as fh:
            document = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if args.set:
        document = apply_overrides(document, args.set)
    if args.seed is not None:
        document.setdefault("train", {})["seed"] = args.seed
    return resolve_config(document)


def _snapshot_config(cfg: RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "resolved_config.json", "w") as fh:
        json.dump(cfg.resolved, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _dataset_from_config(cfg: RunConfig):
    section = cfg.resolved["data"]
    if section["path"]:
        return read_dataset(section["path"])
    ctrl = RedundancyControl(
        shared_dim=section["shared_dim"],
        unique_dim=section["unique_dim"],
        noise_sigma=section["noise_sigma"],
        view_dim=section["view_dim"],
        class_separation=section["class_separation"],
        identity_transforms=section["identity_transforms"],
    )
    return generate_multiview(
        section["num_classes"],
        section["samples_per_class"],
        ctrl,
        n_views=cfg.graph_section["nodes"],
        seed=section["seed"],
    )


def cmd_gen(args) -> int:
    cfg = _load_config(args)
    if cfg.resolved["data"]["path"]:
        raise ConfigError("data.path is set; gen only works with generator parameters")
    ds = _dataset_from_config(cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(ds, out)
    _snapshot_config(cfg, out.parent)
    print(f"wrote {ds.sample_count} samples x {ds.num_views} views to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(args.out)
    _snapshot_config(cfg, out_dir)
    ds = _dataset_from_config(cfg)
    graph = cfg.build_graph()
    if ds.num_views != graph.node_count:
        raise ConfigError(
            f"data: dataset has {ds.num_views} views but graph.nodes is {graph.node_count}"
        )
    encoders, sheaf = build_model(
        ds.input_dims,
        graph,
        cfg.stalk_dims(graph.node_count),
        cfg.resolved["sheaf"]["edge_dims"],
        hidden=cfg.resolved["encoder"]["hidden"],
        nonlinearity=cfg.resolved["encoder"]["nonlinearity"],
        seed=cfg.resolved["train"]["seed"],
    )
    train_cfg = cfg.train_config(checkpoint_path=str(out_dir / "checkpoint.bin"))
    result = train(ds, graph, encoders, sheaf, train_cfg, config_digest=cfg.digest())
    write_metrics(result.metrics, out_dir / "metrics.jsonl")
    final = result.metrics[-1]
    print(
        f"trained {train_cfg.epochs} epochs; final loss {final['total']:.6f}, "
        f"{result.ledger.total_bytes} bytes exchanged"
    )
    print(f"checkpoint: {out_dir / 'checkpoint.bin'}")
    return 0


def _load_trained(args, cfg: RunConfig):
    bundle = load_checkpoint(
        args.checkpoint,
        expect_config_digest=cfg.digest(),
        learning_rate=cfg.resolved["train"]["learning_rate"],
    )
    return bundle


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(args.out)
    _snapshot_config(cfg, out_dir)
    bundle = _load_trained(args, cfg)
    ds = _dataset_from_config(cfg)
    section = cfg.resolved["eval"]

    report: dict = {}
    if ds.labels is not None:
        train_ds, test_ds = class_balanced_split(ds, section["train_per_class"])
        if test_ds.sample_count == 0:
            raise ConfigError(
                "eval.train_per_class: no samples left for the held-out split"
            )
    else:
        train_ds, test_ds = None, ds

    test_emb = encode_views(bundle.encoders, test_ds.observations)
    retrieval = retrieval_report(
        bundle.sheaf, bundle.graph, test_emb, k_values=tuple(section["recall_k"])
    )
    report["retrieval"] = retrieval.to_json_dict()

    if ds.labels is not None:
        train_emb = encode_views(bundle.encoders, train_ds.observations)
        probe_scores: dict[str, float] = {}
        for shots in section["shots"]:
            per_node = [
                few_shot_probe(
                    train_emb[i], train_ds.labels, test_emb[i], test_ds.labels,
                    shots, seed=section["seed"], num_classes=ds.num_classes,
                )
                for i in range(bundle.graph.node_count)
            ]
            probe_scores[str(shots)] = float(np.mean(per_node))
        report["probe"] = probe_scores

        reference = section["reference_node"]
        zero_shot: dict[str, float] = {}
        for target in range(bundle.graph.node_count):
            if target == reference or not bundle.graph.has_edge(reference, target):
                continue
            zero_shot[str(target)] = zero_shot_prototype(
                bundle.sheaf, reference, target,
                train_emb[reference], train_ds.labels,
                test_emb[target], test_ds.labels,
                num_classes=ds.num_classes,
            )
        report["zero_shot"] = {
            "per_target": zero_shot,
            "mean": float(np.mean(list(zero_shot.values()))) if zero_shot else None,
        }

    out_path = out_dir / "eval.json"
    with open(out_path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"mean recall: {report['retrieval']['mean']}")
    print(f"report: {out_path}")
    return 0


def cmd_infer(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(args.out)
    _snapshot_config(cfg, out_dir)
    bundle = _load_trained(args, cfg)
    ds = _dataset_from_config(cfg)
    if ds.labels is None:
        raise ConfigError("data: the dropout experiment needs a labeled dataset")
    section = cfg.resolved["eval"]
    train_ds, test_ds = class_balanced_split(ds, section["train_per_class"])
    train_emb = encode_views(bundle.encoders, train_ds.observations)
    test_emb = encode_views(bundle.encoders, test_ds.observations)
    task = section["task_node"]
    probe = train_linear_probe(train_emb[task], train_ds.labels, ds.num_classes)

    p_values = [float(p) for p in (args.p_drop if args.p_drop else section["p_drop"])]
    reports = []
    for p in p_values:
        result = dropout_inference_experiment(
            bundle.sheaf, bundle.graph, task, test_emb, test_ds.labels,
            probe, p, seed=section["seed"],
        )
        reports.append(result.to_json_dict())
        print(
            f"p_drop={p}: accuracy {result.accuracy_with_substitution:.4f} "
            f"(no substitution {result.accuracy_without_substitution:.4f}), "
            f"{result.transmitted_bytes} bytes "
            f"(full-embedding counterfactual {result.counterfactual_bytes})"
        )
    out_path = out_dir / "infer.json"
    with open(out_path, "w") as fh:
        json.dump(reports, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"report: {out_path}")
    return 0


def cmd_check(args) -> int:
    from .checks import run_all_checks

    failures = 0
    for outcome in run_all_checks():
        status = "ok" if outcome.passed else "FAIL"
        print(f"[{status}] {outcome.name}: {outcome.detail}")
        failures += 0 if outcome.passed else 1
    if failures:
        print(f"{failures} check(s) failed")
        return RUNTIME_ERROR
    print("all checks passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="decalign",
        description="Decentralized multimodal alignment over edge comparison spaces",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_checkpoint=False):
        p.add_argument("--config", required=True, help="run configuration (JSON)")
        p.add_argument("--seed", type=int, default=None, help="override train.seed")
        p.add_argument(
            "--set", action="append", default=[], metavar="PATH=VALUE",
            help="override a config scalar, e.g. --set train.epochs=5",
        )
        if needs_checkpoint:
            p.add_argument("--checkpoint", required=True, help="trained checkpoint file")

    p_gen = sub.add_parser("gen", help="generate a synthetic dataset file")
    common(p_gen)
    p_gen.add_argument("--out", required=True, help="output dataset path (SHAF1)")
    p_gen.set_defaults(func=cmd_gen)

    p_train = sub.add_parser("train", help="train encoders and edge maps")
    common(p_train)
    p_train.add_argument("--out", default="runs/train", help="output directory")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="retrieval, probe, and zero-shot reports")
    common(p_eval, needs_checkpoint=True)
    p_eval.add_argument("--out", default="runs/eval", help="output directory")
    p_eval.set_defaults(func=cmd_eval)

    p_infer = sub.add_parser("infer", help="sensor-dropout substitution experiment")
    common(p_infer, needs_checkpoint=True)
    p_infer.add_argument("--out", default="runs/infer", help="output directory")
    p_infer.add_argument(
        "--p-drop", action="append", type=float, default=None,
        help="dropout probability (repeatable; defaults to eval.p_drop)",
    )
    p_infer.set_defaults(func=cmd_infer)

    p_check = sub.add_parser("check", help="run the built-in invariant suite")
    p_check.set_defaults(func=cmd_check)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (DatasetFormatError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
