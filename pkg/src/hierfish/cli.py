"""Command-line front end: generate -> split -> train -> search-threshold
-> evaluate -> report, plus an `ablation` command running every
configured scheme and emitting one combined results table.

Precedence: command-line flags override config-file values override
built-in defaults. All randomness derives from one top-level seed.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys

import numpy as np

from . import data as D
from . import evaluation as E
from . import inference as I
from . import model as M
from . import training as T
from .errors import ConfigError, HierfishError
from .taxonomy import Taxonomy, default_taxonomy, load_taxonomy

DEFAULT_SCHEMES = ["baseline", "scheme1", "scheme2", "scheme3"]
DEFAULT_SPLIT_RATIO = 0.8


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    return doc


def _read_taxonomy(path: str | None) -> Taxonomy:
    if path is None:
        return default_taxonomy()
    with open(path, "r", encoding="utf-8") as f:
        return load_taxonomy(f.read())


def _gen_config(cfg: dict, taxonomy: Taxonomy, seed: int | None) -> D.GenConfig:
    section = dict(cfg.get("gen", {}))
    if seed is not None:
        section["seed"] = seed
    allowed = {f.name for f in dataclasses.fields(D.GenConfig)} - {"taxonomy"}
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown gen config keys: {sorted(unknown)}")
    return D.GenConfig(taxonomy=taxonomy, **section)


def _train_config(cfg: dict, args) -> T.TrainConfig:
    section = dict(cfg.get("train", {}))
    if getattr(args, "scheme", None):
        section["scheme"] = args.scheme
    if getattr(args, "epochs", None) is not None:
        section["epochs"] = args.epochs
    if getattr(args, "seed", None) is not None:
        section["seed"] = args.seed
    allowed = {f.name for f in dataclasses.fields(T.TrainConfig)}
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
    return T.TrainConfig(**section)


def _write_loss_csv(history, path):
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "mean_loss"])
        for epoch, loss in enumerate(history):
            writer.writerow([epoch, repr(loss)])


def cmd_gen(args) -> int:
    cfg = _load_config(args.config)
    taxonomy = _read_taxonomy(args.taxonomy)
    gen_cfg = _gen_config(cfg, taxonomy, args.seed)
    dataset = D.generate(gen_cfg)
    os.makedirs(args.out, exist_ok=True)
    D.save_jsonl(dataset, os.path.join(args.out, "dataset.jsonl"))
    with open(os.path.join(args.out, "taxonomy.json"), "w", encoding="utf-8") as f:
        f.write(taxonomy.to_json() + "\n")
    print(f"wrote {len(dataset)} tracks / {dataset.n_frames} frames to {args.out}")
    return 0


def cmd_split(args) -> int:
    cfg = _load_config(args.config)
    taxonomy = _read_taxonomy(args.taxonomy)
    dataset = D.load_jsonl(args.data)
    D.check_labels(dataset, taxonomy)
    ratio = args.ratio if args.ratio is not None else cfg.get("split_ratio", DEFAULT_SPLIT_RATIO)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    train, evaln = D.split_by_track(dataset, ratio, seed)
    os.makedirs(args.out, exist_ok=True)
    D.save_jsonl(train, os.path.join(args.out, "train.jsonl"))
    D.save_jsonl(evaln, os.path.join(args.out, "eval.jsonl"))
    print(f"split: {len(train)} train / {len(evaln)} eval tracks")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    taxonomy = _read_taxonomy(args.taxonomy)
    train_cfg = _train_config(cfg, args)
    dataset = D.load_jsonl(args.data)
    D.check_labels(dataset, taxonomy)
    params, history = T.train(train_cfg, dataset, taxonomy)
    os.makedirs(args.out, exist_ok=True)
    M.save_checkpoint(params, taxonomy, os.path.join(args.out, "model.json"))
    _write_loss_csv(history, os.path.join(args.out, "loss.csv"))
    final = f"{history[-1]:.4f}" if history else "n/a"
    print(f"trained {train_cfg.scheme} for {train_cfg.epochs} epochs, final loss {final}")
    return 0


def cmd_search_threshold(args) -> int:
    taxonomy = _read_taxonomy(args.taxonomy)
    params = M.load_checkpoint(args.model, taxonomy)
    dataset = D.load_jsonl(args.data)
    D.check_labels(dataset, taxonomy)
    tau = I.search_threshold(params, dataset.tracks, taxonomy)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "threshold.json"), "w", encoding="utf-8") as f:
        json.dump({"tau": tau}, f)
    print(f"tau = {tau!r}")
    return 0


def _resolve_threshold(args) -> float:
    if args.threshold is not None:
        return args.threshold
    return 0.0


def cmd_eval(args) -> int:
    taxonomy = _read_taxonomy(args.taxonomy)
    params = M.load_checkpoint(args.model, taxonomy)
    dataset = D.load_jsonl(args.data)
    D.check_labels(dataset, taxonomy)
    tau = _resolve_threshold(args)
    report = E.evaluate(params, dataset, taxonomy, tau, scheme=args.scheme or "scheme3")
    E.write_report(report, args.out)
    for row in E.table_rows(report):
        print(",".join(row))
    return 0


def cmd_infer(args) -> int:
    taxonomy = _read_taxonomy(args.taxonomy)
    params = M.load_checkpoint(args.model, taxonomy)
    dataset = D.load_jsonl(args.data)
    D.check_labels(dataset, taxonomy)
    tau = _resolve_threshold(args)
    unit = args.unit
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "predictions.jsonl")
    with open(out_path, "w", encoding="utf-8") as f:
        for track in dataset.tracks:
            ts = I.score_track(params, track)
            if unit == "video_avg":
                agg = I.aggregate_avg(ts, taxonomy)
                pred = I.decide(agg.confidence, agg.p1, agg.selection, tau, unit)
            else:
                agg = I.aggregate_vote(ts, taxonomy)
                coarse_scores = np.zeros(taxonomy.G)
                coarse_scores[agg.coarse_selection] = agg.coarse_confidence
                pred = I.decide(agg.confidence, coarse_scores, agg.selection, tau, unit)
            name = (taxonomy.groups[pred.label] if pred.level == "coarse"
                    else taxonomy.species_name(pred.label))
            f.write(json.dumps({
                "track_id": track.track_id,
                "unit": pred.unit,
                "level": pred.level,
                "label": name,
                "label_index": pred.label,
                "confidence": pred.confidence,
            }, ensure_ascii=False) + "\n")
    print(f"wrote predictions for {len(dataset)} tracks to {out_path}")
    return 0


def run_scheme(scheme: str, train_split: D.Dataset, eval_split: D.Dataset,
               taxonomy: Taxonomy, train_cfg: T.TrainConfig,
               out_dir: str) -> E.EvalReport:
    """Train one scheme, search its threshold, evaluate, write artifacts."""
    cfg = dataclasses.replace(train_cfg, scheme=scheme)
    params, history = T.train(cfg, train_split, taxonomy)
    os.makedirs(out_dir, exist_ok=True)
    M.save_checkpoint(params, taxonomy, os.path.join(out_dir, "model.json"))
    _write_loss_csv(history, os.path.join(out_dir, "loss.csv"))
    if scheme == "baseline":
        report = E.evaluate_flat(params, eval_split, taxonomy)
    else:
        tau = I.search_threshold(params, eval_split.tracks, taxonomy)
        with open(os.path.join(out_dir, "threshold.json"), "w", encoding="utf-8") as f:
            json.dump({"tau": tau}, f)
        report = E.evaluate(params, eval_split, taxonomy, tau, scheme=scheme)
    E.write_report(report, out_dir)
    return report


def cmd_ablation(args) -> int:
    cfg = _load_config(args.config)
    taxonomy = _read_taxonomy(args.taxonomy)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    schemes = args.schemes.split(",") if args.schemes else cfg.get("schemes", DEFAULT_SCHEMES)
    for scheme in schemes:
        if scheme not in T.SCHEMES:
            raise ConfigError(f"unknown scheme {scheme!r}")
    gen_cfg = _gen_config(cfg, taxonomy, seed)
    dataset = D.generate(gen_cfg)
    ratio = cfg.get("split_ratio", DEFAULT_SPLIT_RATIO)
    train_split, eval_split = D.split_by_track(dataset, ratio, seed)
    section = dict(cfg.get("train", {}))
    section["seed"] = seed
    if args.epochs is not None:
        section["epochs"] = args.epochs
    train_cfg = T.TrainConfig(**section)
    os.makedirs(args.out, exist_ok=True)
    reports = []
    for scheme in schemes:
        report = run_scheme(scheme, train_split, eval_split, taxonomy,
                            train_cfg, os.path.join(args.out, scheme))
        reports.append(report)
    E.write_table_csv(reports, os.path.join(args.out, "ablation_table.csv"))
    for report in reports:
        for row in E.table_rows(report):
            print(",".join(row))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hierfish",
        description="Hierarchical coarse/fine species classification pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, data=False, model=False, threshold=False):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--taxonomy", default=None,
                       help="taxonomy JSON (default: built-in 6/31 taxonomy)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=True, help="output directory")
        if data:
            p.add_argument("--data", required=True, help="frames JSONL")
        if model:
            p.add_argument("--model", required=True, help="model checkpoint JSON")
        if threshold:
            p.add_argument("--threshold", type=float, default=None)

    common(sub.add_parser("gen", help="generate a synthetic dataset"))

    p = sub.add_parser("split", help="track-level train/eval split")
    common(p, data=True)
    p.add_argument("--ratio", type=float, default=None)

    p = sub.add_parser("train", help="train one scheme")
    common(p, data=True)
    p.add_argument("--scheme", choices=T.SCHEMES, default=None)
    p.add_argument("--epochs", type=int, default=None)

    p = sub.add_parser("search-threshold", help="greedy threshold search")
    common(p, data=True, model=True)

    p = sub.add_parser("eval", help="compute the full metric suite")
    common(p, data=True, model=True, threshold=True)
    p.add_argument("--scheme", choices=T.SCHEMES, default=None)

    p = sub.add_parser("infer", help="per-track predictions JSONL")
    common(p, data=True, model=True, threshold=True)
    p.add_argument("--unit", choices=["video_avg", "video_vote"],
                   default="video_avg")

    p = sub.add_parser("ablation", help="run all schemes end to end")
    common(p)
    p.add_argument("--schemes", default=None,
                   help="comma-separated subset of schemes")
    p.add_argument("--epochs", type=int, default=None)

    return parser


COMMANDS = {
    "gen": cmd_gen,
    "split": cmd_split,
    "train": cmd_train,
    "search-threshold": cmd_search_threshold,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "ablation": cmd_ablation,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (HierfishError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
