"""Seed-by-seed final robustness of the full agent against two ablations.

    python scripts/ablation.py --config configs/desk_point_mass.toml --out runs/ablation
"""

from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path

from ensemble_rarl.config import load_config
from ensemble_rarl.export import write_summary
from ensemble_rarl.runner import compare_variants


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/desk_point_mass.toml")
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--variants", nargs="+", default=["full", "no_ensemble", "pessimism_min"])
    ap.add_argument("--seeds", type=int, nargs="+")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    logging.getLogger("ensemble_rarl.harness").setLevel(logging.WARNING)
    result = compare_variants(load_config(args.config), args.variants, args.seeds)
    write_summary(result, Path(args.out) / "ablation.json")
    print(json.dumps(result["wins"]))


if __name__ == "__main__":
    main()
