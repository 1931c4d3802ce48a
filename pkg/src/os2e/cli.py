"""Command-line entry point: gen, stats, select, train, infer, report.

Config precedence is defaults < ``--config`` JSON file < command-line flags.
Every subcommand writes a ``resolved_config.json`` into its output directory
with the fully-explicit settings of the run, so any output can be reproduced
bit for bit.  ``OS2E_THREADS`` caps worker threads (all current module
implementations are single-threaded, which trivially respects any cap).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import datagen, io, pipeline, selection, stats, training
from .network import Checkpoint, NetworkConfig, forward, init_params


def _resolved_threads() -> int:
    env = os.environ.get("OS2E_THREADS", "")
    if env.strip():
        return max(1, int(env))
    return os.cpu_count() or 1


def _write_resolved_config(out_dir: str, payload: dict) -> None:
    io.ensure_dir(out_dir)
    payload = dict(payload)
    payload["threads"] = _resolved_threads()
    with open(os.path.join(out_dir, "resolved_config.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _layer_config(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults < config file < explicit flags."""
    resolved = dict(defaults)
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            resolved.update(json.load(fh))
    for key in defaults:
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            resolved[key] = value
    return resolved


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

_GEN_DEFAULTS = {
    "preset": "responses",
    "seed": 0,
    "concentration": None,
    "noise_sigma": None,
    "n_train": None,
    "n_test": None,
}


def _generator_config(resolved: dict) -> datagen.GeneratorConfig:
    preset = {
        "responses": datagen.preset_responses,
        "vectors": datagen.preset_vector_benchmark,
        "images": datagen.preset_image_benchmark,
    }[resolved["preset"]](int(resolved["seed"]))
    overrides = {
        key: resolved[key]
        for key in ("concentration", "noise_sigma", "n_train", "n_test")
        if resolved.get(key) is not None
    }
    if overrides:
        from dataclasses import replace

        preset = replace(preset, **overrides)
    return preset


def _truth_payload(truth: datagen.PlantedTruth) -> dict:
    return {
        "object_signatures": truth.object_signatures,
        "scene_signatures": truth.scene_signatures,
        "teacher_concepts": truth.teacher_concepts,
        "teacher_weights": None
        if truth.teacher_weights is None
        else truth.teacher_weights.tolist(),
        "teacher_bias": None
        if truth.teacher_bias is None
        else truth.teacher_bias.tolist(),
    }


def _cmd_gen(args: argparse.Namespace) -> int:
    resolved = _layer_config(args, _GEN_DEFAULTS)
    out = io.ensure_dir(args.out)
    config = _generator_config(resolved)
    produced = []

    if resolved["preset"] == "responses":
        objects, scenes, labels, truth = datagen.gen_response_data(config)
        io.write_response_csv(os.path.join(out, "object_responses.csv"), objects)
        io.write_response_csv(os.path.join(out, "scene_responses.csv"), scenes)
        io.write_labels_csv(os.path.join(out, "labels.csv"), labels)
        produced = ["object_responses.csv", "scene_responses.csv", "labels.csv"]
    elif resolved["preset"] == "vectors":
        truth = datagen.make_truth(config)
        train, test, soft = datagen.gen_vector_dataset(config, truth)
        aux = datagen.gen_aux_dataset(config, truth)
        io.write_dataset_csv(os.path.join(out, "train.csv"), train)
        io.write_dataset_csv(os.path.join(out, "test.csv"), test)
        io.write_dataset_csv(os.path.join(out, "aux.csv"), aux)
        io.write_soft_targets_json(os.path.join(out, "soft_targets.json"), soft)
        produced = ["train.csv", "test.csv", "aux.csv", "soft_targets.json"]
    else:
        truth = datagen.make_truth(config)
        train, test = datagen.gen_image_dataset(config, truth)
        for split, ds in (("train", train), ("test", test)):
            split_dir = io.ensure_dir(os.path.join(out, split))
            ids = []
            for i, image in enumerate(ds.features):
                name = f"img_{i:04d}.fimg"
                io.write_image(os.path.join(split_dir, name), image)
                ids.append(f"img_{i:04d}")
            io.write_labels_csv(
                os.path.join(split_dir, "labels.csv"),
                stats.EventLabels(ds.labels, ds.num_classes),
                image_ids=ids,
            )
            produced.append(f"{split}/")

    with open(os.path.join(out, "truth.json"), "w", encoding="utf-8") as fh:
        json.dump(_truth_payload(truth), fh, indent=1)
        fh.write("\n")
    with open(os.path.join(out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump({"preset": resolved["preset"], "files": produced + ["truth.json"]}, fh, indent=1)
        fh.write("\n")
    _write_resolved_config(out, {"subcommand": "gen", **resolved})
    return 0


# ---------------------------------------------------------------------------
# stats
# ---------------------------------------------------------------------------


def _cmd_stats(args: argparse.Namespace) -> int:
    out = io.ensure_dir(args.out)
    responses, _ = io.read_response_csv(args.responses, kind=args.kind)
    labels, _ = io.read_labels_csv(args.labels)
    table = stats.estimate_conditional(responses, labels)
    posterior = stats.bayes_posterior(table)
    io.write_conditional_json(os.path.join(out, "conditional.json"), table)
    io.write_posterior_json(os.path.join(out, "posterior.json"), posterior)
    _write_resolved_config(
        out,
        {
            "subcommand": "stats",
            "responses": args.responses,
            "labels": args.labels,
            "kind": args.kind,
        },
    )
    return 0


# ---------------------------------------------------------------------------
# select
# ---------------------------------------------------------------------------


def _cmd_select(args: argparse.Namespace) -> int:
    out = io.ensure_dir(args.out)
    table = io.read_conditional_json(args.table)
    posterior = stats.bayes_posterior(table)
    problem = selection.SelectionProblem.from_posterior(posterior, k=args.k, lam=args.lam)
    result = selection.greedy_select(problem)
    io.write_selection_json(os.path.join(out, "selection.json"), result)
    io.write_selection_report_csv(
        os.path.join(out, "selection_report.csv"), result, problem
    )
    _write_resolved_config(
        out,
        {"subcommand": "select", "table": args.table, "k": args.k, "lam": args.lam},
    )
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

_TRAIN_DEFAULTS = {
    "mode": "init",
    "alpha": training.ALPHA_OBJECT_DEFAULT,
    "beta": training.BETA_DEFAULT,
    "lr": 0.01,
    "schedule": training.K_ITERS_DEFAULT,
    "batch_size": training.BATCH_SIZE_DEFAULT,
    "dropout": 0.7,
    "seed": 0,
    "soft_direction": "target_as_distribution",
    "trunk": "64",
}


def _cmd_train(args: argparse.Namespace) -> int:
    resolved = _layer_config(args, _TRAIN_DEFAULTS)
    out = io.ensure_dir(args.out)
    train = io.read_dataset_csv(args.train, split="train")
    test = io.read_dataset_csv(args.test, num_classes=train.num_classes, split="test")
    config = training.TransferConfig(
        mode=resolved["mode"],
        alpha=float(resolved["alpha"]),
        beta=float(resolved["beta"]),
        lr=float(resolved["lr"]),
        k_iters=int(resolved["schedule"]),
        batch_size=int(resolved["batch_size"]),
        dropout_rate=float(resolved["dropout"]),
        seed=int(resolved["seed"]),
        soft_direction=resolved["soft_direction"],
    )
    trunk = tuple(int(w) for w in str(resolved["trunk"]).split(",") if w)

    if resolved["mode"] == "probe":
        features = training.probe_features(train.features)
        test_features = training.probe_features(test.features)
        probe_train = training.Dataset(features, train.labels, train.num_classes)
        probe_test = training.Dataset(test_features, test.labels, test.num_classes)
        report = training.linear_probe_train(probe_train, probe_test, config)
    else:
        if args.source:
            source = io.read_checkpoint_json(args.source)
        else:
            net = NetworkConfig(
                input_dim=train.features.shape[1],
                trunk=trunk,
                heads=(train.num_classes,),
                dropout_rate=0.0,
            )
            source = Checkpoint(config=net, params=init_params(net, config.seed))
        if resolved["mode"] == "init":
            report = training.init_transfer_train(source, train, test, config)
        elif resolved["mode"] == "knowledge":
            if not args.soft_targets:
                raise ValueError("knowledge mode needs --soft-targets")
            soft = io.read_soft_targets_json(args.soft_targets)
            report = training.knowledge_transfer_train(source, train, test, soft, config)
        else:
            if not args.aux:
                raise ValueError("data mode needs --aux")
            aux = io.read_dataset_csv(args.aux, split="train", name="aux")
            report = training.data_transfer_train(source, train, test, aux, config)

    checkpoint_path = os.path.join(out, "checkpoint.json")
    io.write_checkpoint_json(checkpoint_path, report.checkpoint)
    io.write_report_json(os.path.join(out, "report.json"), report, "checkpoint.json")
    io.write_report_csv(os.path.join(out, "report.csv"), report)
    _write_resolved_config(
        out,
        {
            "subcommand": "train",
            **resolved,
            "train": args.train,
            "test": args.test,
            "source": args.source,
            "soft_targets": args.soft_targets,
            "aux": args.aux,
        },
    )
    return 0


# ---------------------------------------------------------------------------
# infer
# ---------------------------------------------------------------------------


def _checkpoint_scorer(checkpoint_path: str):
    ckpt = io.read_checkpoint_json(checkpoint_path)

    def scorer(crop: np.ndarray) -> np.ndarray:
        flat = np.asarray(crop, dtype=np.float64).reshape(1, -1)
        cache = forward(ckpt.config, ckpt.params, flat, mode="eval")
        return cache.head_prob[0][0]

    return scorer


def _cmd_infer(args: argparse.Namespace) -> int:
    out = io.ensure_dir(args.out)
    crop = {
        "base_side": 256,
        "crop_side": 224,
        "scale_factors": [1.0, 1.5, 2.0],
        "ratio_modes": [pipeline.RATIO_ASPECT, pipeline.RATIO_SQUARE],
        "grid": 3,
    }
    if args.crop_config:
        with open(args.crop_config, "r", encoding="utf-8") as fh:
            crop.update(json.load(fh))
    if args.base_side is not None:
        crop["base_side"] = args.base_side
    if args.crop_side is not None:
        crop["crop_side"] = args.crop_side
    if args.scales is not None:
        crop["scale_factors"] = [float(s) for s in args.scales.split(",")]
    if args.ratio_modes is not None:
        crop["ratio_modes"] = args.ratio_modes.split(",")
    if args.grid is not None:
        crop["grid"] = args.grid
    config = pipeline.CropConfig(
        base_side=crop["base_side"],
        crop_side=crop["crop_side"],
        scale_factors=tuple(crop["scale_factors"]),
        ratio_modes=tuple(crop["ratio_modes"]),
        grid=crop["grid"],
    )
    scorers = {
        "object": _checkpoint_scorer(args.checkpoint_o),
        "scene": _checkpoint_scorer(args.checkpoint_s),
    }
    names = sorted(
        f for f in os.listdir(args.image_dir) if f.endswith(".fimg")
    )
    if not names:
        raise ValueError(f"no .fimg images found in {args.image_dir}")
    ids, rows = [], []
    specs_dumped = False
    for name in names:
        image = io.read_image(os.path.join(args.image_dir, name))
        if not specs_dumped:
            io.write_region_specs_json(
                os.path.join(out, "region_specs.json"),
                pipeline.generate_regions(image.height, image.width, config),
            )
            specs_dumped = True
        scores, _ = pipeline.classify_image(
            image, config, scorers, mean_pixel=args.mean_pixel
        )
        ids.append(name[: -len(".fimg")])
        rows.append(scores)
    io.write_scores_csv(os.path.join(out, "scores.csv"), ids, np.array(rows))
    _write_resolved_config(
        out,
        {
            "subcommand": "infer",
            "checkpoint_o": args.checkpoint_o,
            "checkpoint_s": args.checkpoint_s,
            "image_dir": args.image_dir,
            "base_side": config.base_side,
            "crop_side": config.crop_side,
            "scales": list(config.scale_factors),
            "ratio_modes": list(config.ratio_modes),
            "grid": config.grid,
            "mean_pixel": args.mean_pixel,
        },
    )
    return 0


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def _cmd_report(args: argparse.Namespace) -> int:
    out = io.ensure_dir(args.out)
    warnings = []
    produced = []

    conditional_path = None
    posterior_path = None
    report_runs = []
    for root, _, files in os.walk(args.run_dir):
        if "conditional.json" in files and conditional_path is None:
            conditional_path = os.path.join(root, "conditional.json")
        if "posterior.json" in files and posterior_path is None:
            posterior_path = os.path.join(root, "posterior.json")
        if "report.json" in files:
            mode = "unknown"
            resolved_path = os.path.join(root, "resolved_config.json")
            if os.path.exists(resolved_path):
                with open(resolved_path, "r", encoding="utf-8") as fh:
                    mode = json.load(fh).get("mode", "unknown")
            report_runs.append((mode, os.path.join(root, "report.json")))

    if conditional_path:
        table = io.read_conditional_json(conditional_path)
        top_k = min(args.top_k, table.num_classes)
        with open(os.path.join(out, "top_concepts.csv"), "w", encoding="utf-8") as fh:
            fh.write("event,rank,class_id,p_concept_given_event\n")
            for e in range(table.num_events):
                order = np.argsort(-table.cond[:, e], kind="stable")[:top_k]
                for rank, c in enumerate(order, 1):
                    fh.write(
                        f"{e},{rank},{table.class_ids[c]},{float(table.cond[c, e])!r}\n"
                    )
        marginal = stats.marginalize(table)
        with open(os.path.join(out, "marginals.csv"), "w", encoding="utf-8") as fh:
            fh.write("class_id,p_concept\n")
            for c in range(table.num_classes):
                fh.write(f"{table.class_ids[c]},{float(marginal[c])!r}\n")
        produced += ["top_concepts.csv", "marginals.csv"]
    else:
        warnings.append("no conditional.json found; skipping concept tables")

    if report_runs:
        with open(os.path.join(out, "mode_comparison.csv"), "w", encoding="utf-8") as fh:
            fh.write("mode,final_iter,train_loss,test_loss,test_acc,test_map\n")
            for mode, path in sorted(report_runs):
                with open(path, "r", encoding="utf-8") as rfh:
                    records = json.load(rfh)["records"]
                last = records[-1]
                fh.write(
                    f"{mode},{last['iteration']},{last['train_loss']!r},"
                    f"{last['test_loss']!r},{last['test_accuracy']!r},"
                    f"{last['test_map']!r}\n"
                )
        for i, (mode, path) in enumerate(sorted(report_runs)):
            with open(path, "r", encoding="utf-8") as rfh:
                records = json.load(rfh)["records"]
            curve_name = f"loss_curve_{mode}_{i}.csv"
            with open(os.path.join(out, curve_name), "w", encoding="utf-8") as fh:
                fh.write("iter,train_loss,test_loss,test_acc,test_map\n")
                for r in records:
                    fh.write(
                        f"{r['iteration']},{r['train_loss']!r},{r['test_loss']!r},"
                        f"{r['test_accuracy']!r},{r['test_map']!r}\n"
                    )
            produced.append(curve_name)
        produced.append("mode_comparison.csv")
    else:
        warnings.append("no report.json found; skipping mode comparison")

    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    summary = {"produced": produced, "warnings": warnings}
    with open(os.path.join(out, "report_summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=1)
        fh.write("\n")
    _write_resolved_config(
        out, {"subcommand": "report", "run_dir": args.run_dir, "top_k": args.top_k}
    )
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="os2e",
        description="Concept-response statistics, class selection, transfer "
        "training, and multi-crop inference.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("gen", help="generate a synthetic benchmark dataset")
    p.add_argument("--preset", choices=("responses", "vectors", "images"))
    p.add_argument("--seed", type=int)
    p.add_argument("--concentration", type=float)
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--config")
    p.add_argument("--out", "--out-dir", dest="out", required=True)
    p.set_defaults(handler=_cmd_gen)

    p = sub.add_parser("stats", help="estimate conditional/posterior tables")
    p.add_argument("--responses", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--kind", choices=("object", "scene"), default="object")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_stats)

    p = sub.add_parser("select", help="greedy discriminative-diverse selection")
    p.add_argument("--table", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--lam", type=float, default=selection.DEFAULT_LAMBDA)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_select)

    p = sub.add_parser("train", help="run one transfer-training mode")
    p.add_argument("--mode", choices=("init", "knowledge", "data", "probe"))
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--source")
    p.add_argument("--soft-targets")
    p.add_argument("--aux")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--schedule", type=int, help="K iterations per lr step")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--soft-direction", choices=("target_as_distribution", "target_in_log"))
    p.add_argument("--trunk", help="comma-separated widths for a fresh source")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("infer", help="multi-crop fused scoring of an image dir")
    p.add_argument("--checkpoint-o", required=True)
    p.add_argument("--checkpoint-s", required=True)
    p.add_argument("--image-dir", required=True)
    p.add_argument("--crop-config", help="JSON file of CropConfig fields")
    p.add_argument("--base-side", type=int)
    p.add_argument("--crop-side", type=int)
    p.add_argument("--scales")
    p.add_argument("--ratio-modes")
    p.add_argument("--grid", type=int)
    p.add_argument("--mean-pixel", type=float, default=pipeline.DEFAULT_MEAN_PIXEL)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_infer)

    p = sub.add_parser("report", help="summarize run artifacts into plot CSVs")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_report)

    return parser


def run(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"os2e {args.subcommand}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))
