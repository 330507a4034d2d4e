"""Command-line entry point.

Subcommands: gen-data | pretrain | eval | theory | gradcheck. Every command
is deterministic given its seed flag; all emitted JSON has sorted keys and
a version stamp. The MOSTATS_OUT environment variable overrides output
directories; --threads caps BLAS worker threads (which also pins the
reduction order for bit-reproducibility across differently-provisioned
machines).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import dataio, datagen, fewshot, gradcheck, model, pretrain, theory
from .config import load_run_config
from .errors import MostatsError


def _out_dir(value: str) -> Path:
    override = os.environ.get("MOSTATS_OUT")
    return Path(override) / Path(value).name if override else Path(value)


def cmd_gen_data(args) -> int:
    shape = tuple(int(v) for v in args.image_shape.split(","))
    out = _out_dir(args.out)
    manifest = datagen.generate_dataset(out, classes=args.classes, per_class=args.per_class,
                                        image_shape=shape, skew=args.skew, seed=args.seed,
                                        name=args.name)
    counts = {s: len(manifest["splits"].get(s, [])) for s in dataio.SPLIT_NAMES}
    print(json.dumps({"version": 1, "manifest": str(Path(manifest["_root"]) / "manifest.json"),
                      "images": sum(counts.values()), "split_sizes": counts}, sort_keys=True))
    return 0


def cmd_pretrain(args) -> int:
    cfg = load_run_config(args.config)
    manifest = dataio.load_manifest(cfg.dataset)
    base = dataio.load_split(manifest, "base")
    model_cfg = cfg.model_config(manifest["image_shape"])
    train_cfg = cfg.train_config()
    out = _out_dir(cfg.out_dir)
    ckpt_path, log = pretrain.pretrain(base, model_cfg, train_cfg, out, resume=args.resume)
    print(json.dumps({"version": 1, "checkpoint": str(ckpt_path),
                      "epochs": len(log) and log[-1].epoch + 1,
                      "final_overall_loss": log[-1].overall if log else None},
                     sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    ckpt = model.load_checkpoint(args.checkpoint)
    manifest = dataio.load_manifest(args.dataset)
    novel = dataio.load_split(manifest, "novel")
    branches = tuple(int(b) for b in args.branches.split(","))
    summary = fewshot.evaluate(
        ckpt, novel, way=args.way, shot=args.shot, query=args.query,
        episodes=args.episodes, enabled_branches=branches, seed=args.seed,
        l2=args.l2, tol=args.tol, max_iter=args.max_iter,
        normalize=not args.no_normalize)
    if args.episode_log:
        with open(args.episode_log, "w") as fp:
            for i, acc in enumerate(summary.per_episode):
                fp.write(json.dumps({"episode": i, "accuracy": acc}, sort_keys=True) + "\n")
    print(summary.to_json())
    return 0


def cmd_theory(args) -> int:
    if args.trials == 0:
        print("warning: 0 trials requested; nothing verified", file=sys.stderr)
        print(json.dumps({"version": 1, "trials": 0, "violations": 0}, sort_keys=True))
        return 0
    sink = open(args.out, "w") if args.out else sys.stdout
    violations = 0
    try:
        for t, _inst, rep_abs, rep_sq, ok in theory.run_suite(
                args.trials, max_m=args.m, max_hypotheses=args.max_hypotheses, seed=args.seed):
            if not ok:
                violations += 1
            sink.write(json.dumps({"version": 1, "trial": t, "ok": ok,
                                   "abs": rep_abs.to_dict(), "sq": rep_sq.to_dict()},
                                  sort_keys=True) + "\n")
    finally:
        if args.out:
            sink.close()
    print(json.dumps({"version": 1, "trials": args.trials, "violations": violations},
                     sort_keys=True))
    return 0 if violations == 0 else 1


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_gradcheck(seed=args.seed)
    failed = [r for r in results if not r.passed]
    for r in sorted(results, key=lambda r: r.name):
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<24s} max_rel_err={r.max_error:.3e}")
    print(json.dumps({"version": 1, "ops": len(results), "failed": len(failed),
                      "threshold": gradcheck.THRESHOLD}, sort_keys=True))
    return 0 if not failed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mostats")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS worker threads")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="synthesize a three-order dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--classes", type=int, default=20)
    g.add_argument("--per-class", type=int, default=100)
    g.add_argument("--image-shape", default="3,24,24")
    g.add_argument("--skew", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--name", default="synthetic")
    g.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", help="stage-1 training from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", default=None)
    p.set_defaults(func=cmd_pretrain)

    e = sub.add_parser("eval", help="episode evaluation of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--way", type=int, default=fewshot.DEFAULT_WAY)
    e.add_argument("--shot", type=int, default=1)
    e.add_argument("--query", type=int, default=fewshot.DEFAULT_QUERY)
    e.add_argument("--episodes", type=int, default=fewshot.DEFAULT_EPISODES)
    e.add_argument("--branches", default="1,2,3")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--l2", type=float, default=1.0)
    e.add_argument("--tol", type=float, default=1e-6)
    e.add_argument("--max-iter", type=int, default=1000)
    e.add_argument("--no-normalize", action="store_true")
    e.add_argument("--episode-log", default=None,
                   help="sidecar ndjson of per-episode accuracies")
    e.set_defaults(func=cmd_eval)

    t = sub.add_parser("theory", help="verify the ensemble bound on random instances")
    t.add_argument("--trials", type=int, default=1000)
    t.add_argument("--m", type=int, default=32)
    t.add_argument("--max-hypotheses", type=int, default=5)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", default=None, help="write the report stream here instead of stdout")
    t.set_defaults(func=cmd_theory)

    c = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads:
        try:
            from threadpoolctl import threadpool_limits
            threadpool_limits(args.threads)
        except ImportError:
            print("warning: threadpoolctl unavailable, --threads ignored", file=sys.stderr)
    try:
        return args.func(args)
    except MostatsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
