#!/usr/bin/env python3
"""Measure transducer training throughput at two vocabulary sizes.

The factorized model keeps the blank head out of the output softmax, so the
per-step cost scales with the non-blank vocabulary; the small vocabulary must
train strictly faster.

Usage:
    python3 scripts/bench_vocab.py [--config configs/tiny.json] [--steps 20]
"""

import argparse
import json
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from ftrans import pipeline  # noqa: E402
from ftrans.config import RunConfig  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(ROOT / "configs" / "tiny.json"))
    ap.add_argument("--sizes", type=int, nargs=2, default=(500, 4000))
    ap.add_argument("--steps", type=int, default=20)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    cfg = RunConfig.load(args.config)
    out = args.out or tempfile.mkdtemp(prefix="bench_vocab_")
    if not (Path(out) / "data" / "asr_train.tsv").exists():
        pipeline.gen_data(cfg, out)
    result = pipeline.bench_vocab_scaling(cfg, out, sizes=tuple(args.sizes),
                                          steps=args.steps)
    print(json.dumps(result, indent=2))
    small, large = (str(s) for s in args.sizes)
    ratio = result["speed_ratio_small_over_large"]
    print(f"\nthroughput ratio |V|={small} vs |V|={large}: {ratio:.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
