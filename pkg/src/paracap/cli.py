"""Command-line orchestration.

Subcommands: gen-data, pretrain-embed, train, finetune-rl, eval, infer,
inspect. All take --config (JSON, unknown keys rejected); --seed,
--delta, --checkpoint and --out override the config where they apply.
Failures print a one-line JSON error object to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import load_run_config, run_config_from_dict, training_view
from .data import (EventGrammar, default_grammar, generate_corpus,
                   load_boundaries, load_split, load_vocabulary)
from .errors import ConfigurationError, ContractViolation
from .evaluate import delta_sweep, evaluate_split, inspect_video, sweep_table
from .training import Trainer, build_reward_context, load_model_from_checkpoint


def _build_parser():
    parser = argparse.ArgumentParser(prog="paracap",
                                     description="one-stage video paragraph captioning")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False, delta=False, out=False):
        p.add_argument("--config", required=True, help="JSON run config")
        p.add_argument("--seed", type=int, default=None)
        if checkpoint:
            p.add_argument("--checkpoint", required=True)
        if delta:
            p.add_argument("--delta", type=float, default=None)
        if out:
            p.add_argument("--out", default=None)

    p = sub.add_parser("gen-data", help="generate the synthetic corpus")
    common(p, out=True)
    p.add_argument("--grammar", default=None, help="optional grammar JSON file")

    p = sub.add_parser("pretrain-embed", help="pretrain the joint embedding")
    common(p, out=True)

    p = sub.add_parser("train", help="run the configured stages")
    common(p, out=True)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")

    p = sub.add_parser("finetune-rl", help="self-critical fine-tuning")
    common(p, checkpoint=True, out=True)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p, checkpoint=True, delta=True, out=True)
    p.add_argument("--selector", choices=("learned", "uniform"), default=None)
    p.add_argument("--sweep", action="store_true",
                   help="also run the delta sweep with both selectors")
    p.add_argument("--split", default="test", choices=("val", "test"))

    p = sub.add_parser("infer", help="caption one feature file")
    common(p, checkpoint=True, delta=True)
    p.add_argument("features", help="whitespace text matrix or .npy, one row per clip")

    p = sub.add_parser("inspect", help="export decode-trace tables for one video")
    common(p, checkpoint=True, delta=True, out=True)
    p.add_argument("video_id")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    return parser


def _config_from_args(args):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None):
        overrides["out_dir"] = args.out
    return load_run_config(args.config, overrides)


def _load_features(path, d_in):
    if path.endswith(".npy"):
        arr = np.load(path)
    else:
        arr = np.loadtxt(path, ndmin=2)
    arr = np.asarray(arr, dtype=np.float64)
    if arr.size == 0:
        raise ContractViolation(f"{path}: empty feature file")
    if arr.ndim != 2 or arr.shape[1] != d_in:
        raise ContractViolation(
            f"{path}: feature shape {arr.shape} does not match d_in={d_in}")
    return arr


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args):
    cfg = _config_from_args(args)
    if args.grammar:
        try:
            with open(args.grammar) as fh:
                grammar = EventGrammar.from_jsonable(json.load(fh))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(
                f"{args.grammar}: invalid JSON at line {exc.lineno}, col {exc.colno}")
    else:
        grammar = default_grammar(cfg.seed, d_in=cfg.d_in)
    counts = {"train": cfg.train_videos, "val": cfg.val_videos,
              "test": cfg.test_videos}
    stats = generate_corpus(grammar, counts, cfg.seed, cfg.dataset_dir)
    print(json.dumps(stats, indent=2, sort_keys=True))
    return 0


def _make_trainer(cfg):
    vocab = load_vocabulary(cfg.dataset_dir)
    records = load_split(cfg.dataset_dir, "train")
    os.makedirs(cfg.out_dir, exist_ok=True)
    return Trainer(cfg, vocab, out_dir=cfg.out_dir), records


def _val_hook(cfg, trainer, stage):
    val = load_split(cfg.dataset_dir, "val")
    train_refs = [r.refs for r in load_split(cfg.dataset_dir, "train")]

    def hook(tr, epoch):
        report, _ = evaluate_split(tr.mp, val, tr.vocab, train_refs,
                                   delta=cfg.delta if cfg.keyframe_gate else 1.0)
        tr.save(os.path.join(cfg.out_dir, f"{stage}_epoch{epoch:03d}.ckpt"),
                stage, epoch)
        return {f"val_{k}": v for k, v in report.means.items() if v is not None}

    return hook


def cmd_pretrain_embed(args):
    cfg = _config_from_args(args)
    trainer, records = _make_trainer(cfg)
    trainer.pretrain_embed(records)
    path = os.path.join(cfg.out_dir, "pretrain.ckpt")
    trainer.save(path, "pretrain", trainer.progress["pretrain"])
    print(path)
    return 0


def cmd_train(args):
    cfg = _config_from_args(args)
    trainer, records = _make_trainer(cfg)
    if args.resume:
        trainer.load(args.resume)
    if "pretrain" in cfg.stages:
        trainer.pretrain_embed(records)
    if "mle" in cfg.stages:
        trainer.train_mle(records, epoch_hook=_val_hook(cfg, trainer, "mle"))
    if "rl" in cfg.stages:
        table, scorer = build_reward_context(records, cfg.ngram_order)
        trainer.finetune_rl(records, table, scorer,
                            epoch_hook=_val_hook(cfg, trainer, "rl"))
    path = os.path.join(cfg.out_dir, "final.ckpt")
    trainer.save(path, cfg.stages[-1], trainer.progress[cfg.stages[-1]])
    print(path)
    return 0


def cmd_finetune_rl(args):
    cfg = _config_from_args(args)
    trainer, records = _make_trainer(cfg)
    trainer.load(args.checkpoint)
    table, scorer = build_reward_context(records, cfg.ngram_order)
    trainer.finetune_rl(records, table, scorer,
                        epoch_hook=_val_hook(cfg, trainer, "rl"))
    path = os.path.join(cfg.out_dir, "final_rl.ckpt")
    trainer.save(path, "rl", trainer.progress["rl"])
    print(path)
    return 0


def cmd_eval(args):
    cfg = _config_from_args(args)
    delta = args.delta if args.delta is not None else cfg.delta
    if not 0.0 < delta <= 1.0:
        raise ConfigurationError(f"--delta {delta} outside (0, 1]")
    selector = args.selector or cfg.selector
    mp, _, vocab = load_model_from_checkpoint(args.checkpoint)
    records = load_split(cfg.dataset_dir, args.split)
    train_refs = [r.refs for r in load_split(cfg.dataset_dir, "train")]
    report, _ = evaluate_split(mp, records, vocab, train_refs, delta, selector,
                               repeats=cfg.eval_repeats)
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "report.txt"), "w") as fh:
        fh.write(report.to_text())
    with open(os.path.join(cfg.out_dir, "report.tsv"), "w") as fh:
        fh.write(report.to_table())
    print(report.to_text(), end="")
    if args.sweep:
        rows = delta_sweep(mp, records, vocab, train_refs, cfg.delta_sweep,
                           selectors=("learned", "uniform"),
                           repeats=cfg.eval_repeats)
        table = sweep_table(rows)
        with open(os.path.join(cfg.out_dir, "sweep.tsv"), "w") as fh:
            fh.write(table)
        print(table, end="")
    return 0


def cmd_infer(args):
    cfg = _config_from_args(args)
    mp, mcfg, vocab = load_model_from_checkpoint(args.checkpoint)
    feats = _load_features(args.features, mcfg.d_in)
    delta = args.delta if args.delta is not None else cfg.delta
    from .evaluate import decode_video
    tokens, _, _ = decode_video(mp, feats, vocab, delta)
    print(" ".join(vocab.decode(tokens)))
    return 0


def cmd_inspect(args):
    cfg = _config_from_args(args)
    mp, _, vocab = load_model_from_checkpoint(args.checkpoint)
    records = load_split(cfg.dataset_dir, args.split)
    by_id = {r.video_id: r for r in records}
    if args.video_id not in by_id:
        raise ContractViolation(
            f"unknown video id {args.video_id!r}; available: "
            + ", ".join(sorted(by_id)[:8]) + (" ..." if len(by_id) > 8 else ""))
    delta = args.delta if args.delta is not None else cfg.delta
    tables = inspect_video(mp, by_id[args.video_id], vocab, delta)
    os.makedirs(cfg.out_dir, exist_ok=True)
    for stem, text in tables.items():
        name = "paragraph.txt" if stem == "paragraph" else f"{stem}.tsv"
        with open(os.path.join(cfg.out_dir, f"{args.video_id}_{name}"), "w") as fh:
            fh.write(text)
    print(cfg.out_dir)
    return 0


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain-embed": cmd_pretrain_embed,
    "train": cmd_train,
    "finetune-rl": cmd_finetune_rl,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "inspect": cmd_inspect,
}


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ContractViolation, ConfigurationError, FileNotFoundError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
