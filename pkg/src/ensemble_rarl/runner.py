"""Multi-seed experiment orchestration on top of the training harness."""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

from .config import RunConfig
from .export import band, export, line_chart_svg, run_id, write_summary
from .harness import final_adversarial_eval, stability_metric, train
from .sac import save_agent

log = logging.getLogger(__name__)

WORKERS_ENV = "ENSEMBLE_RARL_WORKERS"


def worker_count(default: int = 1) -> int:
    raw = os.environ.get(WORKERS_ENV)
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


def run_seed(config: RunConfig, seed: int, out_dir) -> tuple[dict, list]:
    """Train one seed, checkpoint both agents and measure worst-case return."""
    seed_dir = Path(out_dir) / f"seed_{seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    result = train(config, seed, seed_dir)
    save_agent(result.protagonist, seed_dir / "protagonist.npz")
    save_agent(result.adversary, seed_dir / "adversary.npz")
    series = [r.robustness for r in result.records if r.robustness is not None]
    worst = None
    if config.final_adversary_iterations >= 0:
        worst = final_adversarial_eval(result.protagonist, config, seed).mean_return
    info = {
        "seed": seed,
        "final_robustness": series[-1] if series else None,
        "stability_pct": stability_metric(series) if len(series) >= 2 else 0.0,
        "worst_case_return": worst,
        "final_grid": None if result.final_grid is None else result.final_grid.tolist(),
        "contracts": asdict(result.contracts),
        "wall_clock": result.records[-1].wall_clock,
    }
    return info, result.records


def _run_seed_args(args):
    return run_seed(*args)


def _mean(values):
    vals = [v for v in values if v is not None]
    return sum(vals) / len(vals) if vals else None


def run_experiment(config: RunConfig, out_dir=None, seeds: Sequence[int] | None = None, workers: int | None = None) -> dict:
    """Run every seed (optionally in a process pool) and write all artifacts."""
    out_dir = Path(out_dir or config.out_dir)
    seeds = list(config.seeds if seeds is None else seeds)
    workers = worker_count() if workers is None else workers
    out_dir.mkdir(parents=True, exist_ok=True)
    echo = config.to_json()
    (out_dir / "config.json").write_text(echo)

    jobs = [(config, s, out_dir) for s in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_run_seed_args, jobs))
    else:
        results = [run_seed(*job) for job in jobs]

    per_seed = [info for info, _ in results]
    records = {info["seed"]: recs for info, recs in results}
    finals = [p["final_robustness"] for p in per_seed if p["final_robustness"] is not None]
    summary = {
        "run_id": run_id(echo),
        "config": json.loads(echo),
        "final_robustness": _mean(finals),
        "final_robustness_ci95": band(finals)[1] if finals else None,
        "stability_pct": _mean(p["stability_pct"] for p in per_seed),
        "worst_case_return": _mean(p["worst_case_return"] for p in per_seed),
        "per_seed": per_seed,
        "mass_grid": list(config.mass_grid),
        "friction_grid": list(config.friction_grid),
    }
    export(records, summary, out_dir)
    return summary


def sweep_k(config: RunConfig, out_dir=None, ks: Sequence[int] | None = None, workers: int | None = None) -> dict:
    """Train the configured variant for each ensemble size and tabulate final robustness."""
    out_dir = Path(out_dir or config.out_dir)
    ks = list(config.sweep_k if ks is None else ks)
    rows = []
    for k in ks:
        summary = run_experiment(config.replace(K=k), out_dir / f"K_{k}", workers=workers)
        finals = [p["final_robustness"] for p in summary["per_seed"]]
        mean, half = band(finals)
        rows.append({"K": k, "final_robustness": mean, "ci95": half, "per_seed": finals})
        log.info("K=%d final robustness %.3f ± %.3f", k, mean, half)
    result = {"variant": config.variant, "env": config.env, "results": rows}
    write_summary(result, out_dir / "sweep_k.json")
    svg = line_chart_svg(
        {"final robustness": ([r["K"] for r in rows], [r["final_robustness"] for r in rows], [r["ci95"] for r in rows])},
        "Final robustness vs ensemble size",
        xlabel="K",
    )
    (out_dir / "sweep_k.svg").write_text(svg)
    return result


def final_robustness(config: RunConfig, seed: int) -> float:
    """Last robustness evaluation of a single training run."""
    result = train(config, seed)
    return [r.robustness for r in result.records if r.robustness is not None][-1]


def compare_variants(config: RunConfig, variants: Sequence[str], seeds: Sequence[int] | None = None) -> dict:
    """Final robustness per variant and seed, plus how often the first variant wins.

    A win is a score at least as high as the other variant on the same seed.
    """
    seeds = list(config.seeds if seeds is None else seeds)
    scores: dict[str, dict[int, float]] = {}
    for v in variants:
        cfg = config.replace(variant=v)
        scores[v] = {}
        for s in seeds:
            t0 = time.perf_counter()
            scores[v][s] = final_robustness(cfg, s)
            log.info("%s seed %d: final robustness %.3f (%.0f s)", v, s, scores[v][s], time.perf_counter() - t0)
    lead = variants[0]
    wins = {v: sum(scores[lead][s] >= scores[v][s] for s in seeds) for v in variants[1:]}
    return {"seeds": seeds, "scores": scores, "wins": wins}
