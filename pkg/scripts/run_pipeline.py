#!/usr/bin/env python3
"""Generate a cohort, prepare it, train, forecast and run a pollution scenario.

Every step goes through the ``exposure-aae`` command line, so each output
directory also gets a replayable manifest.

    python scripts/run_pipeline.py --out runs/demo --epochs 40
"""

import argparse
import json
import sys
from pathlib import Path

from exposure_aae.cli import main as cli


def run(*argv: str) -> None:
    code = cli(list(argv))
    if code != 0:
        sys.exit(code)


def parse_args(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/pipeline", help="root output directory")
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--factor", type=float, default=2.0, help="particulate scenario factor")
    ap.add_argument("--config", help="optional JSON run config")
    return ap.parse_args(argv)


def main(argv=None) -> None:
    args = parse_args(argv)
    root = Path(args.out)
    common = ["--seed", str(args.seed)] + (["--config", args.config] if args.config else [])
    run("gen-data", *common, "--out", str(root / "data"))
    run("prep", *common, "--input", str(root / "data/raw.csv"), "--out", str(root / "prep"))
    run("train", *common, "--data", str(root / "prep"), "--epochs", str(args.epochs), "--out", str(root / "model"))
    ckpt = str(root / "model/model.ckpt")
    run("predict", *common, "--checkpoint", ckpt, "--data", str(root / "prep"), "--out", str(root / "predict"))
    run("simulate", *common, "--checkpoint", ckpt, "--data", str(root / "prep"), "--factor", str(args.factor),
        "--pollutant", "pm2_5", "--pollutant", "pm10", "--out", str(root / "scenario"))
    summary = {
        "eval": json.loads((root / "predict/eval.json").read_text()),
        "scenario": json.loads((root / "scenario/scenario.json").read_text()),
    }
    print(json.dumps(summary, indent=1))


if __name__ == "__main__":
    main()
