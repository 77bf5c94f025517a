"""Command-line entry point.

Subcommands: gen-data, train-tokenizer, train-lm, adapt-vocab, train-asr,
swap-lm, mwer-finetune, decode, evaluate, run-all, bench-vocab-scaling.
Exit codes: 0 success, 1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import pipeline
from .config import RunConfig


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ftrans", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="path to a JSON run config")
        p.add_argument("--out", default="out", help="artifact directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")

    for name in ("gen-data", "train-tokenizer", "train-lm", "adapt-vocab",
                 "train-asr", "run-all", "bench-vocab-scaling"):
        common(sub.add_parser(name))

    p = sub.add_parser("swap-lm")
    common(p)
    p.add_argument("--predictor", choices=("weak", "small", "strong"), default="strong")

    p = sub.add_parser("mwer-finetune")
    common(p)
    p.add_argument("--checkpoint", default="ft_strong")

    p = sub.add_parser("decode")
    common(p)
    p.add_argument("--split", default="asr_dev")
    p.add_argument("--predictor", choices=("weak", "small", "strong", "checkpoint"),
                   default="weak")
    p.add_argument("--checkpoint", default="ft")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--beam", type=int, default=None)

    p = sub.add_parser("evaluate")
    common(p)
    p.add_argument("--split", default="asr_dev")
    p.add_argument("--tag", required=True, help="decode tag (JSONL basename)")
    return ap


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    try:
        cfg = RunConfig.load(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
    except (OSError, ValueError, json.JSONDecodeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    out = args.out
    try:
        result = _dispatch(args, cfg, out)
    except (ValueError,) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    Path(out).mkdir(parents=True, exist_ok=True)
    stage_report = Path(out) / f"report_{args.command.replace('-', '_')}.json"
    stage_report.write_text(json.dumps(result, indent=2, default=str))
    print(json.dumps(result, indent=2, default=str))
    return 0


def _dispatch(args, cfg: RunConfig, out):
    cmd = args.command
    if cmd == "gen-data":
        return pipeline.gen_data(cfg, out)
    if cmd == "train-tokenizer":
        return pipeline.train_tokenizers(cfg, out)
    if cmd == "train-lm":
        return pipeline.train_lms(cfg, out)
    if cmd == "adapt-vocab":
        return pipeline.adapt_vocab(cfg, out)
    if cmd == "train-asr":
        return pipeline.train_asr(cfg, out)
    if cmd == "swap-lm":
        return pipeline.swap_lm(cfg, out, args.predictor)
    if cmd == "mwer-finetune":
        return pipeline.mwer_finetune(cfg, out, checkpoint=args.checkpoint)
    if cmd == "decode":
        pred = None if args.predictor == "checkpoint" else args.predictor
        return pipeline.decode_split(cfg, out, args.split, predictor=pred,
                                     checkpoint=args.checkpoint, alpha=args.alpha,
                                     beta=args.beta, beam=args.beam)
    if cmd == "evaluate":
        return pipeline.evaluate_decode(out, args.tag, args.split)
    if cmd == "run-all":
        return pipeline.run_all(cfg, out)
    if cmd == "bench-vocab-scaling":
        sizes = (cfg.tokenizer.asr_vocab_size, cfg.tokenizer.lm_vocab_size)
        return pipeline.bench_vocab_scaling(cfg, out, sizes=sizes)
    raise ValueError(f"unknown command {cmd}")


if __name__ == "__main__":
    sys.exit(main())
