"""Command-line entrypoint.

Subcommands: synth, train, eval, infer, bench, aggregate, serve. Every
command is scriptable (no prompts); machine-readable outputs go to
files, human summaries to stdout. Exit codes: 0 success, 1 validation
error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import checkpoint, config as config_mod, dataset, metrics, service, synth, trainer
from .model import count_params

log = logging.getLogger("fthnet.cli")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


class CliError(ValueError):
    """User input problem: bad flag value, malformed config, bad file."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_VALIDATION)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise CliError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise CliError(f"config file {path} must hold a JSON object")
    return data


def _apply_overrides(cfg: dict, overrides: list[str]) -> dict:
    for item in overrides or []:
        if "=" not in item:
            raise CliError(f"override {item!r} must look like section.key=value")
        key, value = item.split("=", 1)
        parts = key.split(".")
        node = cfg
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise CliError(f"override {item!r} descends into a non-object")
        node[parts[-1]] = _parse_value(value)
    return cfg


def _model_config(section: dict) -> config_mod.FthnetConfig:
    section = dict(section)
    profile_name = section.pop("profile", None)
    try:
        if profile_name:
            return config_mod.profile(profile_name, **section)
        return config_mod.FthnetConfig.from_dict(section) if section else config_mod.fthnet_s()
    except (TypeError, config_mod.ConfigError) as exc:
        raise CliError(f"bad model config: {exc}")


def _train_config(section: dict) -> trainer.TrainConfig:
    known = set(trainer.TrainConfig.__dataclass_fields__)
    unknown = set(section) - known
    if unknown:
        raise CliError(f"unknown train config keys: {sorted(unknown)}")
    try:
        return trainer.TrainConfig(**section)
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad train config: {exc}")


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    out = Path(args.out)
    synth.synth_generate(args.n, out, seed=args.seed, image_size=args.image_size)
    print(f"wrote {args.n} images + manifest.csv to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _apply_overrides(_load_config_file(args.config), args.set)
    model_cfg = _model_config(cfg.get("model", {}))
    train_cfg = _train_config(cfg.get("train", {}))
    data = trainer.ArrayDataset.from_manifest(args.manifest)
    plan = trainer.make_splits(len(data), seed=train_cfg.seed, rounds=args.rounds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "splits.json").write_text(plan.to_json(), encoding="utf-8")
    (out / "config.json").write_text(json.dumps(
        {"model": model_cfg.to_dict(), "train": asdict(train_cfg)}, indent=2),
        encoding="utf-8")
    report = trainer.cross_validate(data, plan, model_cfg, train_cfg, out)
    mean = report.mean()
    print(f"cv mean over {plan.n_rounds} rounds: "
          f"srcc={mean['srcc']:.4f} plcc={mean['plcc']:.4f} rmse={mean['rmse']:.4f}")
    return EXIT_OK


def _eval_ids(args, n: int) -> list[int]:
    if args.splits is None:
        return list(range(n))
    plan = json.loads(Path(args.splits).read_text(encoding="utf-8"))
    try:
        return list(plan["rounds"][args.round][1])  # test ids of the round
    except (KeyError, IndexError):
        raise CliError(f"splits file has no round {args.round}")


def cmd_eval(args) -> int:
    model = checkpoint.load_model(args.checkpoint)
    data = trainer.ArrayDataset.from_manifest(args.manifest)
    ids = _eval_ids(args, len(data))
    result = trainer.evaluate_model(model, data, ids)
    params_m = count_params(model) / 1e6
    print("srcc,plcc,rmse,params_m")
    print(f"{result['srcc']:.4f},{result['plcc']:.4f},{result['rmse']:.4f},{params_m:.3f}")
    if args.out:
        report = metrics.EvalReport()
        report.add_round(args.round if args.splits else 0,
                         result["rmse"], result["plcc"], result["srcc"])
        Path(args.out).write_text(report.to_json(), encoding="utf-8")
    return EXIT_OK


def cmd_infer(args) -> int:
    model = checkpoint.load_model(args.checkpoint)
    results = []
    for path in args.images:
        from PIL import Image
        img = np.asarray(Image.open(path).convert("RGB"))
        score, level, latency_ms = service.score_image(model, img)
        results.append({"image": str(path), "score": score, "level": level,
                        "latency_ms": latency_ms})
        print(f"{path}: score={score:.2f} level={level}")
    if args.out:
        Path(args.out).write_text(json.dumps(results, indent=2), encoding="utf-8")
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.checkpoint:
        model = checkpoint.load_model(args.checkpoint)
    else:
        from .model import build_model
        model = build_model(config_mod.profile(args.profile), seed=0)
        model.eval()
    report = service.bench(model, n_warmup=args.warmup, n_trials=args.trials)
    print(json.dumps(report, indent=2))
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2), encoding="utf-8")
    return EXIT_OK


def cmd_aggregate(args) -> int:
    records = dataset.load_manifest(args.manifest)
    rows = []
    per_image_scores = {}
    for rec in records:
        if rec.ratings is None:
            continue
        ratings = [dataset.RatingRecord(f"e{i+1}", "experienced", s)
                   for i, s in enumerate(rec.ratings[:3])]
        ratings += [dataset.RatingRecord(f"j{i+1}", "junior", s)
                    for i, s in enumerate(rec.ratings[3:])]
        mos = dataset.aggregate_mos(ratings)
        per_image_scores[rec.image_path] = list(rec.ratings)
        rows.append({"image_path": rec.image_path, "mos": mos})
    stats = dataset.rating_sd_stats(per_image_scores)
    for row in rows:
        row["sd"] = stats["per_image"].get(row["image_path"])
    out = {"images": rows, "sd_quartiles": stats["quartiles"], "skipped": stats["skipped"]}
    print(f"aggregated {len(rows)} images; SD quartiles: {stats['quartiles']}")
    if args.out:
        Path(args.out).write_text(json.dumps(out, indent=2), encoding="utf-8")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    checkpoints = {}
    if args.checkpoint_s:
        checkpoints["s"] = args.checkpoint_s
    if args.checkpoint_l:
        checkpoints["l"] = args.checkpoint_l
    app = service.create_app(checkpoints, store_dir=args.store)
    addr = os.environ.get("FTHNET_ADDR", "127.0.0.1:8321")
    host, _, port = addr.rpartition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port), log_level="info")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="fthnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic degraded-fundus dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-size", type=int, default=256)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="cross-validated training from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON config file with model/train sections")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry, e.g. model.embed_channels=32")
    p.add_argument("--rounds", type=int, default=10)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--splits", help="splits.json from training, to evaluate one round's test set")
    p.add_argument("--round", type=int, default=0)
    p.add_argument("--out", help="write an EvalReport JSON here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("infer", help="score images with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="write JSON results here")
    p.add_argument("images", nargs="+")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("bench", help="single-image latency benchmark")
    p.add_argument("--checkpoint")
    p.add_argument("--profile", default="fthnet-s")
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("aggregate", help="aggregate rater scores in a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_aggregate)

    p = sub.add_parser("serve", help="run the scoring/annotation HTTP service")
    p.add_argument("--checkpoint-s", help="checkpoint served as model=s")
    p.add_argument("--checkpoint-l", help="checkpoint served as model=l")
    p.add_argument("--store", default="annotation_store")
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except (CliError, config_mod.ConfigError, dataset.ManifestError,
            dataset.AggregationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
