"""Run configuration: defaults, strict TOML loading and a deterministic echo."""

from __future__ import annotations

import difflib
import json
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .envs import DEFAULT_GRID, ENVIRONMENTS
from .errors import ConfigError
from .sac import VARIANTS, SacConfig
from .tdu import TduSchedule

CONFIG_VERSION = 1

# symbols shown alongside key suggestions
_SYMBOLS = {"beta0": "β0", "beta_min": "β_min", "decay_lambda": "λ", "K": "K", "N": "N", "gamma": "γ", "tau": "τ"}


@dataclass
class RunConfig:
    env: str = "point_mass"
    f_max: float | None = None
    horizon: int = 500
    variant: str = "full"
    K: int = 5
    beta0: float = 0.85
    beta_min: float = 0.15
    decay_lambda: float = 3.0
    N: int = 200
    episodes_per_iteration: int = 5
    eval_rollouts: int = 10
    eval_interval: int = 5
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    mass_grid: tuple[float, ...] = DEFAULT_GRID
    friction_grid: tuple[float, ...] = DEFAULT_GRID
    hidden_layers: int = 3
    hidden_units: int = 256
    gamma: float = 0.99
    batch_size: int = 256
    lr_critic: float = 3e-4
    lr_actor: float = 1e-4
    lr_alpha: float = 3e-4
    initial_alpha: float = 5e-3
    tau: float = 5e-3
    buffer_capacity: int = 1_000_000
    initial_replay_size: int = 3000
    warmup_transitions: int = 5000
    diversity: bool = True
    param_noise_std: float = 0.01
    final_adversary_iterations: int = 50
    sweep_k: tuple[int, ...] = (2, 3, 5, 7, 10)
    out_dir: str = "runs/default"

    def __post_init__(self):
        for f in fields(self):
            setattr(self, f.name, _coerce(f.name, f.type, getattr(self, f.name)))
        if self.K < 1 or self.N < 1 or self.episodes_per_iteration < 1 or self.eval_interval < 1:
            raise ConfigError("K, N, episodes_per_iteration and eval_interval must be positive")
        if not self.seeds:
            raise ConfigError("seeds must list at least one seed")
        if self.env not in ENVIRONMENTS:
            raise ConfigError(f"unknown environment {self.env!r}; choose from {sorted(ENVIRONMENTS)}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown agent variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        self.schedule()  # validates the beta parameters

    def schedule(self) -> TduSchedule:
        try:
            return TduSchedule(self.beta0, self.beta_min, self.decay_lambda, self.N)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def sac_config(self) -> SacConfig:
        return SacConfig(
            hidden=(self.hidden_units,) * self.hidden_layers,
            gamma=self.gamma,
            batch_size=self.batch_size,
            lr_critic=self.lr_critic,
            lr_actor=self.lr_actor,
            lr_alpha=self.lr_alpha,
            initial_alpha=self.initial_alpha,
            tau=self.tau,
            k=self.K,
            diversity=self.diversity,
            param_noise_std=self.param_noise_std,
            initial_replay_size=self.initial_replay_size,
            warmup_transitions=self.warmup_transitions,
            schedule=self.schedule(),
        )

    def replace(self, **changes) -> "RunConfig":
        return RunConfig(**{**asdict(self), **changes})

    def to_json(self) -> str:
        data = {"config_version": CONFIG_VERSION, **asdict(self)}
        return json.dumps(data, indent=2, sort_keys=True) + "\n"


def _coerce(name: str, typ: str, value):
    def bad():
        return ConfigError(f"config key {name!r} has invalid value {value!r} (expected {typ})")

    if typ == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise bad()
        return value
    if typ == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise bad()
        return float(value)
    if typ == "float | None":
        return None if value is None else _coerce(name, "float", value)
    if typ == "bool":
        if not isinstance(value, bool):
            raise bad()
        return value
    if typ == "str":
        if not isinstance(value, str):
            raise bad()
        return value
    if typ.startswith("tuple["):
        inner = "int" if "int" in typ else "float"
        if not isinstance(value, (list, tuple)):
            raise bad()
        return tuple(_coerce(name, inner, v) for v in value)
    raise bad()


KNOWN_KEYS = tuple(f.name for f in fields(RunConfig))


def _suggest(key: str) -> str:
    match = difflib.get_close_matches(key, KNOWN_KEYS, n=1, cutoff=0.6)
    if not match:
        return ""
    sym = _SYMBOLS.get(match[0])
    hint = f"{match[0]!r}" + (f" ({sym})" if sym and sym != match[0] else "")
    return f"; did you mean {hint}?"


def config_from_dict(data: dict) -> RunConfig:
    unknown = [k for k in data if k not in KNOWN_KEYS]
    if unknown:
        k = unknown[0]
        raise ConfigError(f"unknown config key {k!r}{_suggest(k)}")
    return RunConfig(**data)


def load_config(path) -> RunConfig:
    """Read a flat TOML file; missing keys take defaults, unknown keys are rejected."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data)
