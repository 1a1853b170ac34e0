"""Command line entry point: ``hiergcn {split,train,eval,sweep,attack,analyze}``.

Every command writes its outputs plus a ``run.json`` manifest into ``--out``.
Passing that manifest back through ``--config`` reruns the command with the
same parameters (flags given explicitly on the command line still win).

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from typing import Sequence

import numpy as np

from . import __version__
from .evaluation import (AttackConfig, degradation_pct, evaluate, evaluate_under_attack, write_attack_csv,
                         write_metrics_csv)
from .graph import build_adjacency, dump_adjacency, sample_mask
from .interactions import DataError, FieldLayout, SplitConfig, build_split, ingest, read_split, write_split
from .model import CheckpointError, init_params, load_checkpoint
from .spectral import (ConvergenceError, convergence_curve, spectral_summary, write_convergence_csv,
                       write_spectral_csv)
from .synthetic import random_bipartite
from .training import TrainConfig, TrainingDiverged, train

log = logging.getLogger("hiergcn")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str):
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str):
    return [int(x) for x in text.split(",") if x.strip()]


def _add_train_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("model and optimisation")
    g.add_argument("--d", type=int, default=64, help="embedding size")
    g.add_argument("--K", type=int, default=3, help="number of propagation layers (0 = plain MF)")
    g.add_argument("--p", type=float, default=0.9, help="edge keep probability during training")
    g.add_argument("--no-drop", action="store_true", help="train without edge dropout (same as --p 1)")
    g.add_argument("--lr", type=float, default=0.05, help="SGD learning rate")
    g.add_argument("--lambda", dest="reg_lambda", type=float, default=1e-3, help="L2 regularisation weight")
    g.add_argument("--epochs", type=int, default=50, help="passes of |train| sampled triplets")
    g.add_argument("--batch", type=int, default=1024, help="triplets per SGD step")
    g.add_argument("--mask-refresh", choices=["step", "epoch"], default="step",
                   help="draw new edge masks every SGD step or once per epoch")
    g.add_argument("--reduction", choices=["sum", "mean"], default="sum",
                   help="combine per-triplet gradients by sum or mean within a batch")
    g.add_argument("--reg-scope", choices=["batch", "full"], default="batch",
                   help="regularise only embedding rows in the batch, or all of E every step")
    g.add_argument("--preserve-self-loops", action="store_true", help="never drop diagonal entries")
    g.add_argument("--symmetric-mask", action="store_true", help="drop (a,b) and (b,a) together")
    g.add_argument("--w-init", choices=["xavier", "identity"], default="xavier",
                   help="initial layer transforms: Xavier-uniform or identity plus small noise")
    g.add_argument("--dtype", choices=["float64", "float32"], default="float64",
                   help="training precision; checkpoints are always written in float64")


def _train_config(args, K=None, p=None, seed=None) -> TrainConfig:
    keep = 1.0 if args.no_drop else (args.p if p is None else p)
    return TrainConfig(
        learning_rate=args.lr, reg_lambda=args.reg_lambda, keep_prob=keep,
        K=args.K if K is None else K, d=args.d, epochs=args.epochs, batch_size=args.batch,
        seed=args.seed if seed is None else seed, mask_refresh=args.mask_refresh, reduction=args.reduction,
        reg_scope=args.reg_scope, preserve_self_loops=args.preserve_self_loops,
        symmetric_mask=args.symmetric_mask, w_init=args.w_init, dtype=args.dtype,
        eval_every=getattr(args, "eval_every", 0), patience=getattr(args, "patience", 0),
        checkpoint_every=getattr(args, "checkpoint_every", 0),
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hiergcn", description="Hierarchical graph convolution recommender with edge dropout.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--out", required=True, help="output directory (created if missing)")
        p.add_argument("--config", help="run.json manifest or key=value file supplying defaults")
        p.add_argument("--seed", type=int, default=0, help="seed for every random draw of the command")
        p.add_argument("--threads", type=int, default=1, help="threads for evaluation / analysis")

    p = sub.add_parser("split", help="ingest an interaction file and write an 80/20 split")
    p.add_argument("--input", required=True, help="whitespace separated `user item [rating] [timestamp]` file")
    p.add_argument("--ratio", type=float, default=0.8, help="fraction of each user's pairs kept for training")
    p.add_argument("--global-split", action="store_true", help="shuffle all pairs instead of per user")
    p.add_argument("--threshold", type=float, default=0.0, help="keep records whose rating exceeds this")
    common(p)

    p = sub.add_parser("train", help="train a model and write model.ckpt + train_report.csv")
    p.add_argument("--train", required=True, help="train.tsv written by `split`")
    p.add_argument("--test", help="test.tsv, enables --eval-every validation")
    _add_train_flags(p)
    p.add_argument("--eval-every", type=int, default=0, help="validate every N epochs (needs --test)")
    p.add_argument("--patience", type=int, default=0, help="early-stop after N evaluations without gain")
    p.add_argument("--checkpoint-every", type=int, default=0, help="also overwrite model.ckpt every N epochs")
    p.add_argument("--timing", action="store_true",
                   help="fill the seconds column of train_report.csv (wall-clock, so not reproducible); "
                        "per-epoch seconds always go to run.json")
    common(p)

    p = sub.add_parser("eval", help="compute recall@k / ndcg@k into metrics.csv")
    p.add_argument("--checkpoint", required=True, help="model.ckpt written by `train`")
    p.add_argument("--train", required=True, help="train.tsv; its items are excluded from rankings")
    p.add_argument("--test", required=True, help="test.tsv with the held-out pairs")
    p.add_argument("--k", type=_ints, default=[10, 20], help="comma separated cutoffs")
    p.add_argument("--truncated-recall", action="store_true", help="divide hits by min(k, |test|)")
    p.add_argument("--eval-with-mask", type=float, default=None, metavar="P",
                   help="evaluate with one random edge mask per layer at keep probability P (default: full graph)")
    common(p)

    p = sub.add_parser("sweep", help="train and evaluate over a grid of K and p")
    p.add_argument("--train", required=True, help="train.tsv written by `split`")
    p.add_argument("--test", required=True, help="test.tsv written by `split`")
    p.add_argument("--Ks", type=_ints, default=[1, 2, 3], help="comma separated layer counts")
    p.add_argument("--ps", type=_floats, default=[0.8, 0.9], help="comma separated keep probabilities")
    p.add_argument("--seeds", type=_ints, default=None, help="seeds to repeat each cell with (default: --seed)")
    p.add_argument("--k", type=_ints, default=[10, 20], help="comma separated cutoffs")
    _add_train_flags(p)
    common(p)

    p = sub.add_parser("attack", help="evaluate under Gaussian noise and edge sparsification")
    p.add_argument("--checkpoint", required=True, help="model.ckpt written by `train`")
    p.add_argument("--train", required=True, help="train.tsv; defines the graph and excluded items")
    p.add_argument("--test", required=True, help="test.tsv with the held-out pairs")
    p.add_argument("--sigmas", type=_floats, default=[0.0, 0.05, 0.1, 0.2, 0.5],
                   help="std of Gaussian noise added to every layer output")
    p.add_argument("--keep-probs", type=_floats, default=[1.0, 0.9, 0.7, 0.5],
                   help="keep probability of the single edge mask used at all layers")
    p.add_argument("--attack-seeds", type=int, default=20, help="noise draws averaged per grid point")
    p.add_argument("--k", type=_ints, default=[10, 20], help="comma separated cutoffs")
    common(p)

    p = sub.add_parser("analyze", help="spectral facts and convergence-ratio curves")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--train", help="train.tsv written by `split`")
    src.add_argument("--synthetic", help="random connected bipartite graph `users,items,edges[,zipf]`")
    p.add_argument("--ps", type=_floats, default=[1.0, 0.9, 0.7, 0.5], help="keep probabilities to trace")
    p.add_argument("--k-max", type=int, default=20, help="number of propagation steps")
    p.add_argument("--trials", type=int, default=10, help="mask sequences averaged per curve when p < 1")
    p.add_argument("--samples", type=int, default=10_000, help="random Rayleigh quotients")
    p.add_argument("--dense-limit", type=int, default=1000, help="propagate the identity up to this many nodes")
    p.add_argument("--raw-adjacency", action="store_true", help="analyse D^-1/2 A D^-1/2 without self-loops")
    p.add_argument("--dump-adjacency", action="store_true", help="also write adjacency.tsv")
    common(p)
    return parser


def _load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        doc = json.loads(text)
        return dict(doc.get("args", doc))
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def _config_path(argv):
    for n, tok in enumerate(argv):
        if tok == "--config" and n + 1 < len(argv):
            return argv[n + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _command(argv):
    return next((tok for tok in argv if tok in COMMANDS), None)


def _apply_config(sub: argparse.ArgumentParser, path) -> None:
    """Install manifest values as subparser defaults so explicit flags still override."""
    cfg = _load_config(path)
    cfg.pop("command", None)
    cfg.pop("config", None)
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in cfg.items():
        if key not in actions or key == "help":
            raise UsageError(f"unknown key {key!r} in {path}")
        action = actions[key]
        if isinstance(action, argparse._StoreTrueAction):
            if isinstance(value, str):
                value = value.lower() in ("1", "true", "yes")
        elif isinstance(value, str) and action.type is not None:
            value = action.type(value)
        defaults[key] = value
        # a required flag supplied by the manifest is no longer required
        action.required = False
    for group in sub._mutually_exclusive_groups:
        if any(defaults.get(a.dest) is not None for a in group._group_actions):
            group.required = False
    sub.set_defaults(**defaults)


def _write_manifest(args, out_dir, extra=None):
    doc = {"command": args.command, "version": __version__,
           "args": {k: v for k, v in sorted(vars(args).items()) if k not in ("command", "config", "verbose")}}
    if extra:
        doc.update(extra)
    with open(os.path.join(out_dir, "run.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_split(train_path, test_path=None):
    for path in (train_path, test_path):
        if path and not os.path.exists(path):
            raise DataError(f"no such file: {path}")
    return read_split(train_path, test_path)


def cmd_split(args):
    if not os.path.exists(args.input):
        raise DataError(f"no such file: {args.input}")
    records = ingest(args.input, FieldLayout(threshold=args.threshold))
    data = build_split(records, SplitConfig(args.ratio, args.seed, per_user=not args.global_split))
    write_split(data, args.out)
    log.info("%d users, %d items, %d train / %d test pairs", data.num_users, data.num_items,
             len(data.train_pairs), len(data.test_pairs))


def cmd_train(args):
    data = _load_split(args.train, args.test)
    adj = build_adjacency(data)
    cfg = _train_config(args)
    params = init_params(data.num_users, data.num_items, cfg.d, cfg.K, cfg.seed, cfg.w_init)
    validate = None
    if args.test and cfg.eval_every:
        def validate(p):
            m = evaluate(p, adj, data, (10,), threads=args.threads)[10]
            return m.recall, m.ndcg
    ckpt = os.path.join(args.out, "model.ckpt")
    _, report = train(params, adj, data, cfg, checkpoint_path=ckpt, validate=validate)
    report.to_csv(os.path.join(args.out, "train_report.csv"), timing=args.timing)
    return {"epoch_seconds": [round(e.seconds, 4) for e in report.epochs]}


def _check_dims(params, data):
    if (params.n_users, params.n_items) != (data.num_users, data.num_items):
        raise DataError(f"checkpoint covers {params.n_users} users x {params.n_items} items, "
                        f"data has {data.num_users} x {data.num_items}")


def cmd_eval(args):
    data = _load_split(args.train, args.test)
    params = load_checkpoint(args.checkpoint)
    _check_dims(params, data)
    adj = build_adjacency(data)
    masks = None
    if args.eval_with_mask is not None:
        rng = np.random.default_rng(args.seed)
        masks = [sample_mask(adj, args.eval_with_mask, rng) for _ in range(params.K)]
    metrics = evaluate(params, adj, data, args.k, threads=args.threads, truncated_recall=args.truncated_recall,
                       masks=masks)
    write_metrics_csv(metrics, os.path.join(args.out, "metrics.csv"))
    for k, m in sorted(metrics.items()):
        log.info("recall@%d %.4f ndcg@%d %.4f (%d users)", k, m.recall, k, m.ndcg, m.n_users_evaluated)


def cmd_sweep(args):
    data = _load_split(args.train, args.test)
    adj = build_adjacency(data)
    seeds = args.seeds if args.seeds else [args.seed]
    ps = [1.0] if args.no_drop else args.ps
    ks = sorted(args.k)
    cells = []
    path = os.path.join(args.out, "sweep.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["K", "p", "seed", "final_loss"] + [f"{m}{k}" for k in ks for m in ("recall", "ndcg")])
        for K in args.Ks:
            for p in ps:
                for seed in seeds:
                    cfg = _train_config(args, K=K, p=p, seed=seed)
                    params = init_params(data.num_users, data.num_items, cfg.d, K, seed, cfg.w_init)
                    _, report = train(params, adj, data, cfg)
                    metrics = evaluate(params, adj, data, ks, threads=args.threads)
                    loss = report.losses[-1] if report.losses else float("nan")
                    w.writerow([K, repr(float(p)), seed, repr(loss)]
                               + [repr(getattr(metrics[k], m)) for k in ks for m in ("recall", "ndcg")])
                    fh.flush()
                    cells.append({"K": K, "p": p, "seed": seed})
                    log.info("K=%d p=%.2f seed=%d ndcg@%d %.4f", K, p, seed, ks[0], metrics[ks[0]].ndcg)
    return {"cells": cells}


def cmd_attack(args):
    data = _load_split(args.train, args.test)
    params = load_checkpoint(args.checkpoint)
    _check_dims(params, data)
    adj = build_adjacency(data)
    ks = sorted(args.k)
    clean = evaluate(params, adj, data, ks, threads=args.threads)
    rows = []
    grid = [("gaussian_embedding", s) for s in args.sigmas] + [("edge_sparsify", q) for q in args.keep_probs]
    for kind, value in grid:
        draws = {k: ([], []) for k in ks}
        for t in range(args.attack_seeds):
            cfg = AttackConfig(kind, sigma=value if kind == "gaussian_embedding" else 0.0,
                               keep_prob=value if kind == "edge_sparsify" else 1.0, seed=args.seed * 100_003 + t)
            m = evaluate_under_attack(params, adj, data, cfg, ks, threads=args.threads)
            for k in ks:
                draws[k][0].append(m[k].recall)
                draws[k][1].append(m[k].ndcg)
        for k in ks:
            rec, nd = (math.fsum(v) / args.attack_seeds for v in draws[k])
            rows.append((kind, value, k, rec, nd, degradation_pct(clean[k].ndcg, nd)))
    write_attack_csv(rows, os.path.join(args.out, "attack.csv"))


def cmd_analyze(args):
    if args.train:
        data = _load_split(args.train)
    else:
        parts = args.synthetic.split(",")
        if len(parts) not in (3, 4):
            raise UsageError("--synthetic expects users,items,edges[,zipf]")
        data = random_bipartite(int(parts[0]), int(parts[1]), int(parts[2]), seed=args.seed,
                                zipf=float(parts[3]) if len(parts) == 4 else 0.0)
    adj = build_adjacency(data, self_loops=not args.raw_adjacency)
    if args.dump_adjacency:
        dump_adjacency(adj, os.path.join(args.out, "adjacency.tsv"))
    summary = spectral_summary(adj, args.samples, args.seed)
    write_spectral_csv(summary, os.path.join(args.out, "spectral.csv"))
    curves = [convergence_curve(adj, p, args.k_max, args.trials, seed=args.seed, dense_limit=args.dense_limit,
                                threads=args.threads) for p in args.ps]
    write_convergence_csv(curves, os.path.join(args.out, "convergence.csv"))
    for c in curves:
        log.info("p=%.2f ratio@%d %.4f", c.keep_prob, args.k_max, c.ratio_mean[-1])


COMMANDS = {"split": cmd_split, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep,
            "attack": cmd_attack, "analyze": cmd_analyze}


def main(argv: Sequence[str] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        path, command = _config_path(argv), _command(argv)
        if path and command:
            sub = parser._subparsers._group_actions[0].choices[command]
            _apply_config(sub, path)
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, --version or an argparse usage error
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except UsageError as exc:
        print(f"hiergcn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, json.JSONDecodeError) as exc:
        print(f"hiergcn: error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        os.makedirs(args.out, exist_ok=True)
        extra = COMMANDS[args.command](args)
        _write_manifest(args, args.out, extra)
    except UsageError as exc:
        print(f"hiergcn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"hiergcn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, ConvergenceError, FloatingPointError) as exc:
        print(f"hiergcn: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"hiergcn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
