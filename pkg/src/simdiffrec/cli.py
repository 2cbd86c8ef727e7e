"""Command-line entry point: preprocess, train, evaluate, ablate, sweep,
augment-preview, export-embeddings.

One JSON config file ({"dataset": ..., "out": ..., "train": {...}}) drives
every run; the named flags and repeatable dotted --set overrides take
precedence. Unknown keys anywhere are errors. Every run writes its fully
resolved config next to its outputs, and SIMDIFFREC_THREADS caps the torch
thread count (recorded for determinism).

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import torch

from .augment import augment_batch, position_distributions
from .dataio import (
    build_sequences,
    kcore_filter,
    load_bundle,
    load_interactions,
    pad_sequence,
    save_bundle,
    split_leave_one_out,
    stats,
)
from .diffusion import NoiseSchedule, forward_closed, reverse_chain
from .errors import ConfigError, DataError, NumericError
from .evalmetrics import evaluate_model, export_embeddings
from .trainer import (
    ABLATION_MODES,
    TrainConfig,
    _make_noise,
    ablate,
    fit,
    make_stream,
    models_from_checkpoint,
    sweep,
    write_metrics_json,
)

THREADS_ENV = "SIMDIFFREC_THREADS"
PREVIEW_HEADER = "# simdiffrec augment-preview v1"
_TOP_KEYS = {"version", "dataset", "out", "train"}


def _apply_thread_env() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is not None:
        try:
            n = int(raw)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV}={raw!r} is not an integer") from None
        if n < 1:
            raise ConfigError(f"{THREADS_ENV} must be >= 1, got {n}")
        torch.set_num_threads(n)
    return torch.get_num_threads()


def _parse_scalar(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_cli_config(path: str | None) -> dict:
    conf = {"dataset": None, "out": None, "train": {}}
    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must be a JSON object")
        unknown = sorted(set(raw) - _TOP_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if not isinstance(raw.get("train", {}), dict):
            raise ConfigError("config key 'train' must be an object")
        conf["dataset"] = raw.get("dataset")
        conf["out"] = raw.get("out")
        conf["train"] = dict(raw.get("train", {}))
    return conf


def _apply_set(conf: dict, assignments: list[str]) -> None:
    for item in assignments:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        parts = key.split(".")
        node = conf
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"--set key {key!r} does not name a config section")
            node = node[part]
        leaf = parts[-1]
        if len(parts) == 1 and leaf not in _TOP_KEYS:
            raise ConfigError(f"--set key {key!r} is not a known top-level key")
        node[leaf] = _parse_scalar(value)


_FLAG_TO_TRAIN_KEY = {
    "seed": "seed",
    "alpha": "alpha",
    "beta": "beta",
    "k_noise": "k_noise",
    "k_sample": "k_sample",
    "k_aug_ratio": "k_aug_ratio",
    "tau": "tau",
    "ablation": "ablation",
    "max_len": "max_len",
}


def resolve_config(args) -> tuple[dict, TrainConfig]:
    conf = load_cli_config(getattr(args, "config", None))
    if getattr(args, "data", None):
        conf["dataset"] = args.data
    if getattr(args, "out", None):
        conf["out"] = args.out
    _apply_set(conf, getattr(args, "set", None) or [])
    for flag, key in _FLAG_TO_TRAIN_KEY.items():
        value = getattr(args, flag, None)
        if value is not None:
            conf["train"][key] = value
    cfg = TrainConfig.from_dict(conf["train"])
    return conf, cfg


def write_resolved_config(out_dir: Path, command: str, conf: dict, cfg: TrainConfig, threads: int) -> None:
    resolved = {
        "version": 1,
        "command": command,
        "dataset": conf.get("dataset"),
        "out": str(out_dir),
        "threads": threads,
        "train": cfg.to_dict(),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.json", "w") as fh:
        json.dump(resolved, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _require(conf: dict, key: str, flag: str):
    if not conf.get(key):
        raise ConfigError(f"missing {key}: pass {flag} or set it in the config file")
    return conf[key]


def _load_dataset(path: str):
    try:
        return load_bundle(path)
    except FileNotFoundError:
        raise DataError(f"dataset bundle not found: {path}") from None


def _write_rows_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        raise DataError("no rows to write")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = list(rows[0])
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row.values()])


def cmd_preprocess(args) -> int:
    log = load_interactions(args.input, fmt=None if args.format == "auto" else args.format)
    filtered = kcore_filter(log, min_count=args.min_count)
    ds = build_sequences(filtered, min_length=args.min_length)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_bundle(ds, out)
    report = stats(ds)
    payload = report.to_json()
    with open(Path(str(out) + ".stats.json"), "w") as fh:
        fh.write(payload + "\n")
    print(payload)
    return 0


def cmd_train(args) -> int:
    threads = torch.get_num_threads()
    conf, cfg = resolve_config(args)
    data_path = _require(conf, "dataset", "--data")
    out_dir = Path(_require(conf, "out", "--out"))
    ds = _load_dataset(data_path)
    record = fit(cfg, ds, out_dir=out_dir)
    write_resolved_config(out_dir, "train", conf, cfg, threads)
    print(
        json.dumps(
            {
                "out": str(out_dir),
                "best_epoch": record.best_epoch,
                "test": record.test_report.to_json_dict(cfg.config_hash),
            },
            sort_keys=True,
        )
    )
    return 0


def _parse_ks(text: str) -> tuple[int, ...]:
    try:
        ks = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"--ks expects comma-separated integers, got {text!r}") from None
    if not ks:
        raise ConfigError("--ks must name at least one cutoff")
    return ks


def cmd_evaluate(args) -> int:
    encoder, _, cfg, ckpt_catalog_hash = models_from_checkpoint(args.checkpoint)
    ds = _load_dataset(args.data)
    if ds.catalog.hash() != ckpt_catalog_hash:
        raise DataError(
            "catalog mismatch: the checkpoint was trained on a different dataset bundle"
        )
    _, valid, test = split_leave_one_out(ds)
    split = valid if args.split == "valid" else test
    ks = _parse_ks(args.ks)
    report = evaluate_model(
        encoder, split, ks, seed=cfg.seed, filter_history=args.filter_history
    )
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_metrics_json(out, report, cfg.config_hash)
    print(json.dumps(report.to_json_dict(cfg.config_hash), sort_keys=True))
    return 0


def _parse_seeds(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"--seeds expects comma-separated integers, got {text!r}") from None
    if not seeds:
        raise ConfigError("--seeds must name at least one seed")
    return seeds


def cmd_ablate(args) -> int:
    threads = torch.get_num_threads()
    conf, cfg = resolve_config(args)
    data_path = _require(conf, "dataset", "--data")
    out_dir = Path(_require(conf, "out", "--out"))
    ds = _load_dataset(data_path)
    modes = tuple(m for m in args.modes.split(",") if m)
    seeds = _parse_seeds(args.seeds) if args.seeds else (cfg.seed,)
    rows, _ = ablate(cfg, ds, modes=modes, seeds=seeds)
    write_resolved_config(out_dir, "ablate", conf, cfg, threads)
    _write_rows_csv(out_dir / "ablate.csv", rows)
    k = cfg.selection_k
    summary = {
        mode: sum(r[f"hr@{k}"] for r in rows if r["mode"] == mode)
        / max(1, sum(1 for r in rows if r["mode"] == mode))
        for mode in modes
    }
    print(json.dumps({"mean_hr@%d" % k: summary, "out": str(out_dir)}, sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    threads = torch.get_num_threads()
    conf, cfg = resolve_config(args)
    data_path = _require(conf, "dataset", "--data")
    out_dir = Path(_require(conf, "out", "--out"))
    ds = _load_dataset(data_path)
    if not args.grid:
        raise ConfigError("sweep needs at least one --grid NAME=V1,V2,... entry")
    grid = {}
    for entry in args.grid:
        name, sep, values = entry.partition("=")
        if not sep or not values:
            raise ConfigError(f"--grid expects NAME=V1,V2,..., got {entry!r}")
        grid[name] = [_parse_scalar(v) for v in values.split(",")]
    rows, _ = sweep(cfg, ds, grid)
    write_resolved_config(out_dir, "sweep", conf, cfg, threads)
    _write_rows_csv(out_dir / "sweep.csv", rows)
    print(json.dumps({"points": len(rows), "out": str(out_dir)}, sort_keys=True))
    return 0


def _preview_lines(encoder, denoiser, cfg: TrainConfig, ds, n: int):
    from .trainer import RngStreams

    train_ds, _, _ = split_leave_one_out(ds)
    schedule = NoiseSchedule.linear(cfg.T, cfg.beta_start, cfg.beta_end)
    rng = RngStreams.from_seed(cfg.seed)
    users = sorted(train_ds.sequences)[:n]
    lines = []
    with torch.no_grad():
        for uid in users:
            ids = torch.tensor(
                [pad_sequence(train_ds.sequences[uid], cfg.max_len)], dtype=torch.int64
            )
            mask = ids != 0
            noise = _make_noise(ids, encoder.weight, cfg, rng)
            z_T = forward_closed(encoder.weight[ids], noise, schedule.T, schedule)
            z0_hat = reverse_chain(
                z_T, noise, schedule, cfg.stride, lambda z, t: denoiser(z, t, mask)
            )
            position_gen = rng.positions if cfg.ablation == "no_c_aug" else None
            pos_ids, neg_ids, plans = augment_batch(
                z0_hat, ids, encoder.weight, cfg.k_aug_ratio, cfg.k_sample, position_gen
            )
            plan = plans[0]
            p = position_distributions(z0_hat, encoder.weight)[0]
            confidences = [float(p[pos].max()) for pos in plan.positions]
            lines.append(
                {
                    "user_id": uid,
                    "original": [int(i) for i in ids[0]],
                    "positions": list(plan.positions),
                    "confidences": confidences,
                    "positive_items": list(plan.positive_items),
                    "hard_negative_items": list(plan.hard_negative_items),
                    "k_sample": plan.k_sample,
                    "source_hash": plan.source_hash,
                }
            )
    return lines


def cmd_augment_preview(args) -> int:
    encoder, denoiser, cfg, ckpt_catalog_hash = models_from_checkpoint(args.checkpoint)
    ds = _load_dataset(args.data)
    if ds.catalog.hash() != ckpt_catalog_hash:
        raise DataError(
            "catalog mismatch: the checkpoint was trained on a different dataset bundle"
        )
    if args.n < 0:
        raise ConfigError(f"--n must be >= 0, got {args.n}")
    lines = _preview_lines(encoder, denoiser, cfg, ds, args.n)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        fh.write(PREVIEW_HEADER + "\n")
        for line in lines:
            fh.write(json.dumps(line, sort_keys=True) + "\n")
    print(json.dumps({"rows": len(lines), "out": str(out)}, sort_keys=True))
    return 0


def cmd_export_embeddings(args) -> int:
    encoder, denoiser, cfg, ckpt_catalog_hash = models_from_checkpoint(args.checkpoint)
    ds = _load_dataset(args.data)
    if ds.catalog.hash() != ckpt_catalog_hash:
        raise DataError(
            "catalog mismatch: the checkpoint was trained on a different dataset bundle"
        )
    tags = tuple(t for t in args.tags.split(",") if t)
    allowed = {"original", "positive", "hard_negative"}
    if not tags or not set(tags) <= allowed:
        raise ConfigError(f"--tags must be a comma list from {sorted(allowed)}")
    train_ds, _, _ = split_leave_one_out(ds)
    users = sorted(train_ds.sequences)[: args.n] if args.n else sorted(train_ds.sequences)
    rows = []
    need_views = {"positive", "hard_negative"} & set(tags)
    schedule = NoiseSchedule.linear(cfg.T, cfg.beta_start, cfg.beta_end)
    from .trainer import RngStreams

    rng = RngStreams.from_seed(cfg.seed)
    with torch.no_grad():
        for uid in users:
            seq = train_ds.sequences[uid]
            if "original" in tags:
                rows.append((uid, seq, "original"))
            if need_views:
                ids = torch.tensor([pad_sequence(seq, cfg.max_len)], dtype=torch.int64)
                mask = ids != 0
                noise = _make_noise(ids, encoder.weight, cfg, rng)
                z_T = forward_closed(encoder.weight[ids], noise, schedule.T, schedule)
                z0_hat = reverse_chain(
                    z_T, noise, schedule, cfg.stride, lambda z, t: denoiser(z, t, mask)
                )
                position_gen = rng.positions if cfg.ablation == "no_c_aug" else None
                pos_ids, neg_ids, _ = augment_batch(
                    z0_hat, ids, encoder.weight, cfg.k_aug_ratio, cfg.k_sample, position_gen
                )
                if "positive" in tags:
                    rows.append((uid, [int(i) for i in pos_ids[0]], "positive"))
                if "hard_negative" in tags:
                    rows.append((uid, [int(i) for i in neg_ids[0]], "hard_negative"))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    n = export_embeddings(encoder, rows, out)
    print(json.dumps({"rows": n, "out": str(out)}, sort_keys=True))
    return 0


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--data", help="dataset bundle path (overrides config)")
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--alpha", type=float, help="contrastive loss weight")
    parser.add_argument("--beta", type=float, help="diffusion loss weight")
    parser.add_argument("--k-noise", dest="k_noise", type=int)
    parser.add_argument("--k-sample", dest="k_sample", type=int)
    parser.add_argument("--k-aug-ratio", dest="k_aug_ratio", type=float)
    parser.add_argument("--tau", type=float, help="contrastive temperature")
    parser.add_argument("--ablation", choices=ABLATION_MODES)
    parser.add_argument("--max-len", dest="max_len", type=int)
    parser.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="dotted config override, e.g. --set train.epochs=50",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="simdiffrec",
        description="Sequential recommendation with similarity-guided diffusion augmentation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="filter raw interactions into a dataset bundle")
    p.add_argument("input", help="raw interaction file (tsv/csv, optionally .gz)")
    p.add_argument("--out", required=True, help="bundle output path")
    p.add_argument("--min-count", type=int, default=5, help="k-core threshold")
    p.add_argument("--min-length", type=int, default=3, help="minimum kept sequence length")
    p.add_argument("--format", choices=("auto", "tsv", "csv"), default="auto")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a model and write a run directory")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--ks", default="5,10")
    p.add_argument("--split", choices=("valid", "test"), default="test")
    p.add_argument("--filter-history", action="store_true")
    p.add_argument("--out", help="metrics.json output path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run the ablation grid")
    _add_train_flags(p)
    p.add_argument("--modes", default=",".join(ABLATION_MODES))
    p.add_argument("--seeds", help="comma-separated seeds (default: config seed)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="grid sweep over config fields")
    _add_train_flags(p)
    p.add_argument(
        "--grid", action="append", metavar="NAME=V1,V2,...", help="repeatable grid axis"
    )
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("augment-preview", help="dump augmentation plans as JSON lines")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--n", type=int, default=10, help="number of users to preview")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_augment_preview)

    p = sub.add_parser("export-embeddings", help="write sequence representations as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--tags", default="original")
    p.add_argument("--n", type=int, default=0, help="limit users (0 = all)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_embeddings)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _apply_thread_env()
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
