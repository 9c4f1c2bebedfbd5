#!/usr/bin/env python3
"""Run every config under scripts/configs and check each summary against its CSV."""

import argparse
import subprocess
import sys
import time
from pathlib import Path

HERE = Path(__file__).resolve().parent


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out", help="parent directory for results")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--only", nargs="*", help="config stems to run (default: all)")
    args = ap.parse_args(argv)
    failed = []
    for cfg in sorted((HERE / "configs").glob("*.toml")):
        if cfg.stem.startswith("bad_") or (args.only and cfg.stem not in args.only):
            continue
        dest = Path(args.out) / cfg.stem
        t0 = time.perf_counter()
        rc = subprocess.call([sys.executable, "-m", "adsim", "run", str(cfg), "--out", str(dest),
                              "--jobs", str(args.jobs)])
        if rc == 0:
            rc = subprocess.call([sys.executable, str(HERE / "recompute_summary.py"), str(dest)])
        print(f"{cfg.stem:20s} exit={rc} {time.perf_counter() - t0:7.1f}s", flush=True)
        if rc:
            failed.append(cfg.stem)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
