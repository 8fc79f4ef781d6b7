"""Command-line entry point: ``ensemble-rarl <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from .config import RunConfig, load_config
from .envs import make_env
from .errors import ConfigError
from .export import render_plots
from .harness import OracleSpec, final_adversarial_eval, robustness_eval, validate_theorem1
from .runner import run_experiment, sweep_k
from .sac import load_agent
from .tdu import TduSchedule


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seeds"] = (args.seed,)
    if getattr(args, "out", None):
        changes["out_dir"] = args.out
    if getattr(args, "variant", None):
        changes["variant"] = args.variant
    if getattr(args, "env", None):
        changes["env"] = args.env
    if getattr(args, "k", None) is not None:
        changes["K"] = args.k
    return cfg.replace(**changes) if changes else cfg


def _add_common(p: argparse.ArgumentParser, run: bool = True) -> None:
    p.add_argument("--config", help="TOML run config (defaults used when omitted)")
    p.add_argument("--seed", type=int, help="run only this seed")
    p.add_argument("--env", help="environment name (point_mass, pendulum)")
    if run:
        p.add_argument("--out", help="output directory")
        p.add_argument("--variant", help="agent variant, e.g. full, no_ensemble, pessimism_min")
        p.add_argument("--k", type=int, help="ensemble size K")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ensemble-rarl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-iteration progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="alternating adversarial training over the configured seeds")
    _add_common(p)

    p = sub.add_parser("eval-robustness", help="sweep mass/friction without the adversary")
    _add_common(p, run=False)
    p.add_argument("--checkpoint", required=True, help="protagonist .npz checkpoint")

    p = sub.add_parser("eval-worstcase", help="train a fresh adversary against a frozen protagonist")
    _add_common(p, run=False)
    p.add_argument("--checkpoint", required=True, help="protagonist .npz checkpoint")
    p.add_argument("--iterations", type=int, help="adversary training iterations")

    p = sub.add_parser("validate-theorem1", help="Monte-Carlo bias check of the aggregate")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--beta-min", type=float, default=0.15)
    p.add_argument("--decay-lambda", type=float, default=3.0)
    p.add_argument("--q-star", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("sweep-k", help="train for each ensemble size and compare final robustness")
    _add_common(p)
    p.add_argument("--ks", type=int, nargs="+", help="ensemble sizes (default from config)")

    p = sub.add_parser("plot", help="re-render SVG charts for a finished run directory")
    p.add_argument("run_dir", nargs="?", help="run directory")
    p.add_argument("--out", help="run directory (alternative to the positional)")
    return parser


def _dispatch(args) -> int:
    if args.command == "train":
        cfg = _resolve(args)
        summary = run_experiment(cfg)
        print(json.dumps({k: summary[k] for k in ("run_id", "final_robustness", "stability_pct", "worst_case_return")}))
        print(f"wrote {cfg.out_dir}")
        return 0
    if args.command == "eval-robustness":
        cfg = _resolve(args)
        agent = load_agent(args.checkpoint)
        env = make_env(cfg.env, cfg.f_max, cfg.horizon)
        if agent.act_dim != env.spec.dim_p or agent.obs_dim != env.spec.obs_dim:
            raise ConfigError("checkpoint does not match the environment")
        res = robustness_eval(agent, env, (cfg.mass_grid, cfg.friction_grid), cfg.eval_rollouts)
        print(json.dumps({"robustness": res.score, "grid": res.grid.tolist()}))
        return 0
    if args.command == "eval-worstcase":
        cfg = _resolve(args)
        agent = load_agent(args.checkpoint)
        seed = args.seed if args.seed is not None else cfg.seeds[0]
        res = final_adversarial_eval(agent, cfg, seed, args.iterations)
        print(json.dumps({"worst_case_return": res.mean_return, "returns": res.returns}))
        return 0
    if args.command == "validate-theorem1":
        sched = TduSchedule(beta0=1.0 - args.beta_min, beta_min=args.beta_min, decay_lambda=args.decay_lambda)
        oracle = OracleSpec(args.q_star, args.sigma, args.k, sched, args.trials, args.seed)
        print(json.dumps(asdict(validate_theorem1(oracle)), indent=2))
        return 0
    if args.command == "sweep-k":
        cfg = _resolve(args)
        result = sweep_k(cfg, ks=args.ks)
        for row in result["results"]:
            print(f"K={row['K']}: final robustness {row['final_robustness']:.3f} ± {row['ci95']:.3f}")
        return 0
    if args.command == "plot":
        run_dir = args.run_dir or args.out
        if not run_dir:
            raise ConfigError("plot needs a run directory")
        for path in render_plots(run_dir):
            print(path)
        return 0
    raise AssertionError(args.command)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except (OSError, ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
