"""Command line entry point: ``stc make-data | train | eval | inspect-graph | bench``.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .data import (STRATEGIES, CorpusFormatError, DropConfig, apply_drop, generate_synthetic,
                   histogram_csv, read_corpus, retention_histogram, write_corpus)
from .graph import export_dot, export_text
from .losses import (EmissionContractError, build_ctc_label, build_selfless_ctc_label,
                     build_stc_label, stc_loss)
from .model import load_checkpoint
from .semiring import log_softmax
from .symbols import Alphabet
from .train import ConfigError, TrainConfig, Trainer, corpus_ter

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


class DataError(Exception):
    pass


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_range(text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got {text!r}") from None
    return lo, hi


def _bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _float_or_inf(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None


# make-data

def cmd_make_data(args) -> int:
    p_drop = args.p_drop
    num_splits = args.num_splits or len(p_drop)
    cfg = DropConfig(args.strategy, p_drop[0] if args.strategy == "uniform" and len(p_drop) == 1 else p_drop,
                     num_splits, args.drop_seed if args.drop_seed is not None else args.seed)
    gen = dict(len_range=args.len_range, frames_per_token=args.frames_per_token, noise=args.noise)
    train = generate_synthetic(args.vocab_size, args.num_train, seed=args.seed, id_prefix="train", **gen)
    valid = generate_synthetic(args.vocab_size, args.num_valid, seed=args.seed + 1_000_003,
                               id_prefix="valid", **gen)
    train = apply_drop(train, cfg)
    if not train:
        raise DataError("every training sample was pruned (empty partial labels); lower --p-drop")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_corpus(train, out / "train.jsonl")
    write_corpus(valid, out / "valid.jsonl")
    hist = retention_histogram(train, args.bins)
    (out / "retention.csv").write_text(histogram_csv(hist))
    kept = sum(len(s.partial_label) for s in train)
    total = sum(len(s.full_label) for s in train)
    meta = {"vocab_size": args.vocab_size, "num_train": len(train), "num_valid": len(valid),
            "pruned": args.num_train - len(train), "retained_fraction": kept / max(1, total),
            "generator": {"seed": args.seed, "len_range": list(args.len_range),
                          "frames_per_token": list(args.frames_per_token), "noise": args.noise},
            "drop": {"strategy": cfg.strategy, "p_drop": list(cfg.probabilities),
                     "num_splits": cfg.num_splits, "seed": cfg.seed}}
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(train)} train / {len(valid)} valid samples to {out} "
          f"({meta['pruned']} pruned, {meta['retained_fraction']:.3f} of tokens kept)")
    return EXIT_OK


# train

def _load_split(path) -> list:
    path = Path(path)
    if not path.exists():
        raise DataError(f"corpus file not found: {path}")
    return read_corpus(path)


def _corpus_paths(args):
    if args.data is not None:
        d = Path(args.data)
        return d / "train.jsonl", d / "valid.jsonl", d / "meta.json"
    if args.train is None:
        raise ConfigError("give --data DIR or --train FILE")
    return Path(args.train), Path(args.valid) if args.valid else None, None


def resolve_train_config(args) -> TrainConfig:
    """Defaults, then the JSON config file, then explicit flags."""
    values = asdict(TrainConfig())
    if args.config is not None:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        values.update(asdict(TrainConfig.from_dict(loaded)))
    for f in fields(TrainConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = flag
    return TrainConfig.from_dict(values).validate()


def cmd_train(args) -> int:
    train_path, valid_path, meta_path = _corpus_paths(args)
    train = _load_split(train_path)
    valid = _load_split(valid_path) if valid_path is not None and valid_path.exists() else []
    if not train:
        raise DataError(f"{train_path} holds no samples")
    out = Path(args.out)
    log = (lambda line: print(line, flush=True)) if not args.quiet else None
    if args.resume:
        trainer = Trainer.resume(out, train, valid, epochs=args.epochs)
    else:
        cfg = resolve_train_config(args)
        if cfg.vocab_size is None and meta_path is not None and meta_path.exists():
            cfg.vocab_size = json.loads(meta_path.read_text())["vocab_size"]
        if (out / "checkpoint.npz").exists() or (out / "metrics.csv").exists():
            raise ConfigError(f"{out} already holds a run; use --resume or another --out")
        trainer = Trainer(cfg, train, valid, out)
    trainer.run(log)
    return EXIT_OK


# eval

def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    if ckpt.is_dir():
        ckpt = ckpt / "checkpoint.npz"
    if not ckpt.exists():
        raise DataError(f"checkpoint not found: {ckpt}")
    model, _, state = load_checkpoint(ckpt)
    mode = args.mode or TrainConfig.from_dict(state["train_config"]).decode_mode
    samples = _load_split(args.corpus)
    ter = corpus_ter(model, samples, mode)
    print("samples,mode,ter")
    print(f"{len(samples)},{mode},{ter!r}")
    return EXIT_OK


# inspect-graph

def cmd_inspect_graph(args) -> int:
    tokens = args.label.split()
    names = args.alphabet.split(",") if args.alphabet else sorted(set(tokens))
    alphabet = Alphabet.from_names(names)
    y = alphabet.encode(tokens)
    if args.kind == "ctc":
        g = build_ctc_label(y, alphabet)
    elif args.kind == "selfless":
        g = build_selfless_ctc_label(y, alphabet)
    else:
        g = build_stc_label(y, alphabet, args.lam)
    sys.stdout.write(export_dot(g, alphabet.name) if args.format == "dot" else export_text(g))
    return EXIT_OK


# bench

def _epoch_times(loss: str, train, args) -> list[float]:
    cfg = TrainConfig(loss=loss, epochs=args.epochs, seed=args.seed, batch_size=args.batch_size,
                      reduced_alphabet=True, vocab_size=args.vocab_size, workers=args.workers)
    trainer = Trainer(cfg, train)
    return [r["seconds"] for r in trainer.run() if r["split"] == "train"]


def _loss_time(log_probs, partial, reduced: bool, repeats: int) -> float:
    start = time.perf_counter()
    for _ in range(repeats):
        stc_loss(log_probs, partial, -0.5, reduced_alphabet=reduced, check=False)
    return (time.perf_counter() - start) / repeats


def cmd_bench(args) -> int:
    if args.epochs < 3:
        raise ConfigError("bench needs at least 3 epochs")
    samples = generate_synthetic(args.vocab_size, args.num_samples, noise=0.3, seed=args.seed)
    train = apply_drop(samples, DropConfig(p_drop=args.p_drop, seed=args.seed))
    if not train:
        raise DataError("no samples left after dropping")
    ctc = _epoch_times("ctc", train, args)
    stc = _epoch_times("stc", train, args)
    rng = np.random.default_rng(args.seed)
    lp = log_softmax(rng.normal(size=(args.micro_frames, args.micro_vocab + 1)), axis=1)
    partial = sorted(rng.choice(args.micro_vocab, size=5, replace=False).tolist())
    reduced = _loss_time(lp, partial, True, args.micro_repeats)
    full = _loss_time(lp, partial, False, args.micro_repeats)
    print("metric,value")
    for i, (a, b) in enumerate(zip(ctc, stc), 1):
        print(f"ctc_epoch_{i}_seconds,{a:.6f}")
        print(f"stc_epoch_{i}_seconds,{b:.6f}")
    print(f"ctc_epoch_mean_seconds,{np.mean(ctc):.6f}")
    print(f"stc_epoch_mean_seconds,{np.mean(stc):.6f}")
    print(f"stc_ctc_ratio,{np.mean(stc) / np.mean(ctc):.4f}")
    print(f"stc_reduced_seconds_vocab{args.micro_vocab},{reduced:.6f}")
    print(f"stc_full_seconds_vocab{args.micro_vocab},{full:.6f}")
    print(f"reduced_full_ratio,{reduced / full:.4f}")
    return EXIT_OK


# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", help="generate a synthetic corpus with partial labels")
    p.add_argument("--out", required=True)
    p.add_argument("--vocab-size", type=int, default=30)
    p.add_argument("--num-train", type=int, default=2000)
    p.add_argument("--num-valid", type=int, default=300)
    p.add_argument("--len-range", type=_int_range, default=(2, 6))
    p.add_argument("--frames-per-token", type=_int_range, default=(1, 3))
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--strategy", choices=STRATEGIES, default="uniform")
    p.add_argument("--p-drop", type=_floats, default=(0.0,))
    p.add_argument("--num-splits", type=int, default=None)
    p.add_argument("--drop-seed", type=int, default=None)
    p.add_argument("--bins", type=int, default=40)
    p.set_defaults(func=cmd_make_data)

    p = sub.add_parser("train", help="train a frame classifier")
    p.add_argument("--data", help="directory written by make-data")
    p.add_argument("--train", help="training corpus (instead of --data)")
    p.add_argument("--valid", help="held-out corpus (instead of --data)")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--config", help="JSON file of training options; flags override it")
    p.add_argument("--resume", action="store_true", help="continue the run in --out")
    p.add_argument("--quiet", action="store_true")
    types = {"loss": str, "label": str, "epochs": int, "batch_size": int, "lr": float, "p0": float,
             "p_max": float, "t_half": float, "reduced_alphabet": _bool, "hidden": int,
             "context": int, "right_context": int, "channel_filters": int, "shared_filters": _bool, "channel_head": _bool, "init_scale": float, "words": _bool,
             "l_max": int, "vocab_size": int, "seed": int, "workers": int}
    for name, typ in types.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="greedy-decode a corpus and report token error rate")
    p.add_argument("--checkpoint", required=True, help="checkpoint file or run directory")
    p.add_argument("--corpus", required=True)
    p.add_argument("--mode", choices=("ctc", "stc"), default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect-graph", help="print a CTC, selfless or STC label graph")
    p.add_argument("--kind", choices=("ctc", "selfless", "stc"), default="stc")
    p.add_argument("--label", required=True, help="space-separated tokens, e.g. 'a b c'")
    p.add_argument("--alphabet", help="comma-separated token names (default: tokens of the label)")
    p.add_argument("--lambda", dest="lam", type=_float_or_inf, default=0.0)
    p.add_argument("--format", choices=("text", "dot"), default="text")
    p.set_defaults(func=cmd_inspect_graph)

    p = sub.add_parser("bench", help="time CTC and STC epochs")
    p.add_argument("--vocab-size", type=int, default=30)
    p.add_argument("--num-samples", type=int, default=500)
    p.add_argument("--p-drop", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--micro-vocab", type=int, default=1000)
    p.add_argument("--micro-frames", type=int, default=20)
    p.add_argument("--micro-repeats", type=int, default=5)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, EmissionContractError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        if isinstance(exc, CorpusFormatError):
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
