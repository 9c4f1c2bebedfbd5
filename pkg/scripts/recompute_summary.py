#!/usr/bin/env python3
"""Recompute summary.json aggregates straight from the raw CSV and compare.

Deliberately avoids the package's own summarizer: plain csv + statistics,
percentiles by linear interpolation between order statistics.
"""

import argparse
import csv
import json
import math
import sys
from pathlib import Path


def percentile(xs, p):
    s = sorted(xs)
    pos = (len(s) - 1) * p / 100.0
    lo, hi = math.floor(pos), math.ceil(pos)
    return s[lo] + (s[hi] - s[lo]) * (pos - lo)


def aggregate(rows, group_by, values):
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r[g] for g in group_by), []).append(r)
    out = {}
    for key, rs in groups.items():
        stats = {}
        for v in values:
            xs = [float(r[v]) for r in rs]
            stats[v] = {"mean": math.fsum(xs) / len(xs), "min": min(xs), "max": max(xs),
                        "p50": percentile(xs, 50), "p90": percentile(xs, 90), "p99": percentile(xs, 99)}
        out[key] = (len(rs), stats)
    return out


def compare(csv_path, block, group_by, values, last_packet_only, tol):
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if last_packet_only and rows:
        last = max(int(r["packet_k"]) for r in rows)
        rows = [r for r in rows if int(r["packet_k"]) == last]
    mine = aggregate(rows, group_by, values)
    worst = 0.0
    if block["rows"] != len(rows) or len(block["groups"]) != len(mine):
        raise SystemExit(f"{csv_path}: row/group count mismatch")
    for g in block["groups"]:
        key = tuple(g["group"][k] for k in group_by)
        n, stats = mine[key]
        if n != g["n"]:
            raise SystemExit(f"{csv_path}: group {key} has {n} rows, summary says {g['n']}")
        for v in values:
            for name, ref in g[v].items():
                a = stats[v][name]
                err = abs(a - ref) / max(1.0, abs(ref))
                worst = max(worst, err)
                if err > tol:
                    raise SystemExit(f"{csv_path}: {key} {v}.{name}: {a} vs {ref}")
    return worst


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_dir")
    ap.add_argument("--tol", type=float, default=1e-9)
    args = ap.parse_args(argv)
    out = Path(args.out_dir)
    summary = json.loads((out / "summary.json").read_text())
    worst = compare(out / f"{summary['experiment']}.csv", summary["aggregates"], summary["group_by"],
                    summary["values"], summary["last_packet_only"], args.tol)
    if "phases" in summary:
        worst = max(worst, compare(out / "scaling_phases.csv", summary["phases"],
                                   ["scenario_id", "x0", "x1"], ["iterations", "health"], False, args.tol))
    print(f"ok: {out} max relative difference {worst:.3g}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
