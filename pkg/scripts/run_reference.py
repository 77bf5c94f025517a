#!/usr/bin/env python3
"""Run the full reference recipe (data, LMs, transducer, swap, MWER, decode)
and print the headline WER table.

Usage:
    python3 scripts/run_reference.py [--config configs/ref.json] [--out out/ref]
"""

import argparse
import json
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from ftrans import pipeline  # noqa: E402
from ftrans.config import RunConfig  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(ROOT / "configs" / "ref.json"))
    ap.add_argument("--out", default="out/ref")
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args()

    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    t0 = time.perf_counter()
    report = pipeline.run_all(cfg, args.out)
    wall = time.perf_counter() - t0

    dec = report["metrics"]["decode"]
    print(f"\nfinished in {wall / 60.0:.1f} min; report at {args.out}/report.json\n")
    print(f"{'split':10s} {'predictor':12s} {'WER':>7s} {'sub':>5s} {'ins':>5s} {'del':>5s}")
    for split in ("asr_dev", "asr_test"):
        for pred in ("weak", "small", "strong", "strong_mwer"):
            r = dec[split][pred]
            print(f"{split:10s} {pred:12s} {r['wer']:7.4f} {r['sub']:5d} "
                  f"{r['ins']:5d} {r['del']:5d}")
    weak = dec["asr_dev"]["weak"]["wer"]
    strong = dec["asr_dev"]["strong"]["wer"]
    print(f"\nrelative WER reduction, weak -> strong (dev): "
          f"{100.0 * (weak - strong) / weak:.1f}%")
    return 0


if __name__ == "__main__":
    sys.exit(main())
