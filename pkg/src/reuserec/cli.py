"""Command-line entry point.

Subcommands: prepare, train, eval, analyze, bench. Every run writes a
manifest (config snapshot, code version, dataset checksum, rng algorithm)
before any other artifact, so a crashed run is identifiable.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__, bench, config as cfg, datapipe, evalkit, trainer
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import (ContractViolationError, DataFormatError,
                     DegenerateInputError, NumericalError)
from .models import SequenceModel
from .numerics import RNG_ALGORITHM, Rng

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command, values, data_dir=None, extra=None):
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "command": command,
        "config": values,
        "code_version": __version__,
        "rng_algorithm": RNG_ALGORITHM,
        "started_unix": time.time(),
        "dataset_checksum": None,
    }
    if data_dir:
        canon = os.path.join(data_dir, datapipe.CANONICAL_FILE)
        if os.path.exists(canon):
            manifest["dataset_checksum"] = _sha256(canon)
    if extra:
        manifest.update(extra)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path


def _load_values(args):
    values = cfg.load_config(args.config) if getattr(args, "config", None) else cfg.defaults()
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        values["threads"] = args.threads
    problems = cfg.validate(values)
    if problems:
        raise DataFormatError("config errors:\n  " + "\n  ".join(problems))
    return values


def _load_dataset(data_dir):
    try:
        return datapipe.read_canonical(data_dir)
    except FileNotFoundError as exc:
        raise DataFormatError(f"no prepared dataset in {data_dir}: {exc}") from exc


def _model_from_checkpoint(path):
    ck = load_checkpoint(path)
    model = SequenceModel(ck["kind"], ck["hyper"], ck["params"],
                          ck["n_items"], ck["n_users"])
    return model, ck


def cmd_prepare(args, values):
    out_dir = args.out
    write_manifest(out_dir, "prepare", values,
                   extra={"raw_input": args.raw, "format": args.format})
    log, malformed = datapipe.parse_log(args.raw, fmt=args.format)
    threshold = args.rating_threshold if args.rating_threshold is not None else (
        values["rating_threshold"] if values["rating_threshold"] >= 0 else None)
    ds = datapipe.apply_policy(
        log,
        min_user_events=args.min_user if args.min_user is not None else values["min_user_events"],
        min_item_events=args.min_item if args.min_item is not None else values["min_item_events"],
        rating_threshold=threshold,
    )
    datapipe.write_canonical(ds, out_dir)
    stats = ds.stats()
    stats["malformed_lines"] = malformed
    with open(os.path.join(out_dir, "stats.json"), "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
    print(f"users={stats['users']} items={stats['items']} "
          f"interactions={stats['interactions']} "
          f"intrns/u={stats['intrns_per_user']:.1f} "
          f"u/i={stats['users_per_item']:.1f}")
    return EXIT_OK


def cmd_train(args, values):
    out_dir = args.out
    ds = _load_dataset(args.data)
    write_manifest(out_dir, "train", values, data_dir=args.data)
    hyper = cfg.to_hyper(values)
    tconf = cfg.to_train_config(values)
    bundle = datapipe.leave_one_out(ds)
    start_state = None
    if args.resume:
        model, ck = _model_from_checkpoint(args.resume)
        if ck["kind"] != tconf.model:
            raise DataFormatError(
                f"checkpoint is a {ck['kind']} model, config says {tconf.model}")
        hyper = ck["hyper"]
        start_state = (model, ck["adam"], ck["meta"].get("epoch", 0))
    res = trainer.fit(bundle, ds.n_items, ds.n_users, hyper, tconf,
                      start_state=start_state)
    ckpt_path = os.path.join(out_dir, "checkpoint.bin")
    save_checkpoint(ckpt_path, tconf.model, hyper, ds.n_items, ds.n_users,
                    res.best_params, adam=None,
                    meta={"epoch": res.log[-1]["epoch"] if res.log else 0,
                          "best_epoch": res.best_epoch,
                          "best_val_recall10": res.best_metric})
    # resumable snapshot of the *final* state, optimizer included
    save_checkpoint(os.path.join(out_dir, "last_state.bin"), tconf.model, hyper,
                    ds.n_items, ds.n_users, res.model.params,
                    adam=res.last_adam, meta={"epoch": res.log[-1]["epoch"] if res.log else 0})
    with open(os.path.join(out_dir, "trainlog.jsonl"), "w", encoding="utf-8") as fh:
        for record in res.log:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    with open(os.path.join(out_dir, "timings.jsonl"), "w", encoding="utf-8") as fh:
        for record in res.timings:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    best = f"{res.best_metric:.4f}" if res.best_metric is not None else "n/a"
    print(f"trained {tconf.model} for {len(res.log)} epochs; "
          f"best val recall@10 = {best}; checkpoint at {ckpt_path}")
    return EXIT_OK


def cmd_eval(args, values):
    out_dir = args.out
    ds = _load_dataset(args.data)
    write_manifest(out_dir, "eval", values, data_dir=args.data,
                   extra={"checkpoint": args.checkpoint, "split": args.split})
    model, _ck = _model_from_checkpoint(args.checkpoint)
    bundle = datapipe.leave_one_out(ds)
    pairs = bundle.val_pairs if args.split == "val" else bundle.test_pairs
    cutoffs = cfg.cutoff_list(args.cutoffs or values["cutoffs"])
    report = evalkit.evaluate(model, pairs, cutoffs=cutoffs,
                              exclude_seen=values["exclude_seen"],
                              item_sets=datapipe.user_item_sets(ds))
    report["split"] = args.split
    path = os.path.join(out_dir, "eval.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    for k, vals in report["cutoffs"].items():
        print(f"{args.split} recall@{k}={vals['recall']:.4f} ndcg@{k}={vals['ndcg']:.4f}")
    return EXIT_OK


def cmd_analyze(args, values):
    out_dir = args.out
    ds = _load_dataset(args.data)
    write_manifest(out_dir, "analyze", values, data_dir=args.data,
                   extra={"kind": args.kind, "checkpoint": args.checkpoint})
    model, _ck = _model_from_checkpoint(args.checkpoint)
    bundle = datapipe.leave_one_out(ds)
    pairs = bundle.test_pairs
    if args.limit_users:
        pairs = pairs[:args.limit_users]
    rng = Rng(values["seed"])

    if args.kind == "entropy":
        if model.kind != "sa":
            raise ContractViolationError(
                "entropy analysis needs the sa comparator's n x n maps; the reuse "
                "model has one attention row per block — use kind 'ram-beta-entropy' "
                "for that extension")
        traces = evalkit.export_sa_maps(model, pairs)
        learned, rows = evalkit.average_entropy(traces)
        baseline, _ = evalkit.uniform_baseline_entropy(
            traces, rng.stream("entropy-baseline"), repeats=args.baseline_repeats)
        out = {"kind": "entropy", "checkpoint_source": args.checkpoint,
               "per_block_entropy": learned, "uniform_baseline": baseline,
               "counted_rows": rows}
        evalkit.write_trace_csv(os.path.join(out_dir, "attention_trace.csv"),
                                model.hyper, traces)
    elif args.kind == "ram-beta-entropy":
        if model.kind == "sa":
            raise ContractViolationError("ram-beta-entropy applies to the reuse model")
        vals, users = evalkit.beta_entropy(model, pairs)
        out = {"kind": "ram-beta-entropy", "per_block_entropy": vals, "users": users,
               "note": "extension: entropy of the reuse model's 1 x n attention rows"}
    elif args.kind == "blocksim":
        out = evalkit.mean_block_similarity(model, pairs)
        out["kind"] = "blocksim"
    elif args.kind == "usersim":
        out = evalkit.user_similarity_histogram(model, pairs, rng.stream("usersim"))
        out["kind"] = "usersim"
        with open(os.path.join(out_dir, "usersim.csv"), "w", encoding="utf-8") as fh:
            fh.write("bin_left,own_count,other_count\n")
            for left, own, other in zip(out["bin_edges"][:-1], out["own_counts"],
                                        out["other_counts"]):
                fh.write(f"{left},{own},{other}\n")
    else:
        raise DataFormatError(f"unknown analysis kind {args.kind!r}")

    path = os.path.join(out_dir, f"{args.kind}.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_bench(args, values):
    out_dir = args.out
    write_manifest(out_dir, "bench", values)
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    n_list = [int(x) for x in args.n_list.split(",")]
    d_list = [int(x) for x in args.d_list.split(",")]
    rng = Rng(values["seed"])
    records = []
    for kind in kinds:
        for d in d_list:
            for n in n_list:
                records.append(bench.measure_block(
                    kind, n, d, args.n_h, repetitions=args.reps,
                    rng_gen=rng.stream("bench", kind, n, d)))
    path = os.path.join(out_dir, "bench.csv")
    bench.write_records_csv(path, records)
    for r in records:
        print(f"{r.kind} n={r.n} d={r.d}: analytic={r.analytic_ops} "
              f"muls={r.measured_muls} median={r.median_ns / 1e6:.3f} ms")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="reuserec",
                                description="sequential recommendation with reused "
                                            "item representations")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key=value config file")
        sp.add_argument("--seed", type=int, help="override config seed")
        sp.add_argument("--threads", type=int,
                        help="worker cap; all paths are deterministic at any value")
        sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("prepare", help="parse and filter a raw interaction log")
    sp.add_argument("raw", help="raw log file")
    sp.add_argument("--format", default="movielens-dat",
                    choices=("movielens-dat", "csv", "tsv"))
    sp.add_argument("--min-user", type=int, default=None)
    sp.add_argument("--min-item", type=int, default=None)
    sp.add_argument("--rating-threshold", type=float, default=None)
    common(sp)
    sp.set_defaults(func=cmd_prepare)

    sp = sub.add_parser("train", help="fit a model on a prepared dataset")
    sp.add_argument("--data", required=True, help="prepared dataset directory")
    sp.add_argument("--resume", help="resume from a last_state checkpoint")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="ranking metrics for a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--split", default="test", choices=("val", "test"))
    sp.add_argument("--cutoffs", help="comma-separated, e.g. 10,20")
    common(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("analyze", help="entropy / similarity diagnostics")
    sp.add_argument("kind", choices=("entropy", "ram-beta-entropy",
                                     "blocksim", "usersim"))
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--limit-users", type=int, default=0)
    sp.add_argument("--baseline-repeats", type=int, default=1)
    common(sp)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("bench", help="per-block cost measurements")
    sp.add_argument("--kinds", default="ram,sa")
    sp.add_argument("--n-list", default="64,128,256,512")
    sp.add_argument("--d-list", default="64")
    sp.add_argument("--n-h", type=int, default=1)
    sp.add_argument("--reps", type=int, default=20)
    common(sp)
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        values = _load_values(args)
    except (DataFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args, values)
    except (ContractViolationError, ValueError) as exc:
        # bad request shape (wrong model kind, invalid grid) is a usage error
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, DegenerateInputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
