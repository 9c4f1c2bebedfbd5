"""Run an experiment over its seeds and write CSV plus summary.json."""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ScenarioConfig
from .experiments import EXPERIMENTS, SCALING_PHASE_COLUMNS, run_scaling_phases

log = logging.getLogger("adsim")

PERCENTILES = (50, 90, 99)


def fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def to_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        if len(r) != len(columns):
            raise AssertionError(f"row width {len(r)} does not match schema {columns}")
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def _num(s: str) -> float:
    return float(s)


def summarize(csv_text: str, group_by, values, last_packet_only: bool = False) -> dict:
    """Mean / min / max / percentiles of ``values`` per group, from the CSV text itself."""
    rows = list(csv.DictReader(io.StringIO(csv_text)))
    if last_packet_only and rows:
        last = max(int(r["packet_k"]) for r in rows)
        rows = [r for r in rows if int(r["packet_k"]) == last]
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault(tuple(r[g] for g in group_by), []).append(r)
    out = []
    for key in sorted(groups):
        entry = {"group": dict(zip(group_by, key)), "n": len(groups[key])}
        for v in values:
            xs = np.array([_num(r[v]) for r in groups[key]], dtype=float)
            stats = {"mean": float(np.mean(xs)), "min": float(np.min(xs)), "max": float(np.max(xs))}
            for p in PERCENTILES:
                stats[f"p{p}"] = float(np.percentile(xs, p))
            entry[v] = stats
        out.append(entry)
    return {"rows": len(rows), "groups": out}


def _one_seed(args):
    cfg, seed = args
    exp = EXPERIMENTS[cfg.experiment]
    rows = exp.run(cfg, seed)
    extra = run_scaling_phases(cfg, seed) if cfg.experiment == "scaling" else None
    return seed, rows, extra


def run(cfg: ScenarioConfig, out_dir: str | Path, jobs: int = 1) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    exp = EXPERIMENTS[cfg.experiment]
    tasks = [(cfg, s) for s in cfg.seed_list]
    log.info("running %s over %d seed(s) with %d job(s)", cfg.experiment, len(tasks), jobs)
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_one_seed, tasks))
    else:
        results = [_one_seed(t) for t in tasks]
    # one writer, rows ordered by seed whatever the completion order
    results.sort(key=lambda r: r[0])
    rows = [row for _, rs, _ in results for row in rs]
    text = to_csv(exp.columns, rows)
    (out / f"{cfg.experiment}.csv").write_bytes(text.encode("utf-8"))
    summary = {
        "experiment": cfg.experiment,
        "scenario_id": cfg.scenario_id,
        "seeds": cfg.seed_list,
        "columns": list(exp.columns),
        "group_by": list(exp.group_by),
        "values": list(exp.values),
        "last_packet_only": exp.last_packet_only,
        "aggregates": summarize(text, exp.group_by, exp.values, exp.last_packet_only),
    }
    if cfg.experiment == "scaling":
        ptext = to_csv(SCALING_PHASE_COLUMNS, [row for _, _, ex in results for row in ex])
        (out / "scaling_phases.csv").write_bytes(ptext.encode("utf-8"))
        summary["phases"] = summarize(ptext, ("scenario_id", "x0", "x1"), ("iterations", "health"))
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    log.info("wrote %d rows to %s", len(rows), out)
    return summary
