"""Robust adversarial RL with uncertainty-weighted critic ensembles."""

from .config import RunConfig, load_config
from .envs import AdversarialPendulum, AdversarialPointMass, make_env, rollout
from .harness import (
    OracleSpec,
    RunRecord,
    final_adversarial_eval,
    robustness_eval,
    stability_metric,
    train,
    validate_theorem1,
)
from .nn import Adam, Mlp
from .sac import SacAgent, SacConfig, make_variant
from .tdu import TduSchedule, aggregate, aggregate_batch, beta

__all__ = [
    "Adam",
    "AdversarialPendulum",
    "AdversarialPointMass",
    "Mlp",
    "OracleSpec",
    "RunConfig",
    "RunRecord",
    "SacAgent",
    "SacConfig",
    "TduSchedule",
    "aggregate",
    "aggregate_batch",
    "beta",
    "final_adversarial_eval",
    "load_config",
    "make_env",
    "make_variant",
    "robustness_eval",
    "rollout",
    "stability_metric",
    "train",
    "validate_theorem1",
]
