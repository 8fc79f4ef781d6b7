"""Two-player zero-sum control tasks with perturbable mass and friction.

Both tasks use explicit Euler integration with ``dt = 0.05``. The adversary's
action in ``[-1, 1]^d_a`` is scaled by ``f_max`` and added to the protagonist's
force (or torque). The environment returns one reward ``r``; the protagonist
maximizes it and the adversary is credited ``-r``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Protocol

import numpy as np

from .errors import ConfigError, StateError

log = logging.getLogger(__name__)

DT = 0.05
DEFAULT_GRID = (0.5, 0.75, 1.0, 1.25, 1.5)


@dataclass
class GameSpec:
    name: str
    obs_dim: int
    dim_p: int
    dim_a: int
    f_max: float
    horizon: int = 500
    gamma: float = 0.99
    mass: float = 1.0
    friction: float = 0.1
    mass_grid: tuple[float, ...] = DEFAULT_GRID
    friction_grid: tuple[float, ...] = DEFAULT_GRID

    def __post_init__(self):
        if self.f_max <= 0:
            raise ConfigError("adversary max force must be positive")
        if self.horizon <= 0:
            raise ConfigError("horizon must be positive")
        if 1.0 not in self.mass_grid or 1.0 not in self.friction_grid:
            raise ConfigError("sweep grids must contain the nominal scale 1.0")


class EpisodeResult(NamedTuple):
    ret: float
    length: int
    mass_scale: float
    friction_scale: float
    adversary_return: float


class Policy(Protocol):
    def act(self, obs, deterministic: bool = False, rng=None) -> np.ndarray: ...


class ConstantPolicy:
    """Emits the same action regardless of the state."""

    def __init__(self, action):
        self.action = np.asarray(action, dtype=np.float64)
        self.act_dim = self.action.size

    def act(self, obs, deterministic=False, rng=None):
        return self.action.copy()


def zero_policy(act_dim: int) -> ConstantPolicy:
    return ConstantPolicy(np.zeros(act_dim))


class AdversarialEnv:
    """Shared stepping, clamping and parameter-sweep logic."""

    def __init__(self, spec: GameSpec):
        self.spec = spec
        self.mass_scale = 1.0
        self.friction_scale = 1.0
        self.adversary_enabled = True
        self.state = self._initial_state()
        self.t = 0
        self.done = False
        self.last_adversary_force = np.zeros(spec.dim_a)

    @property
    def mass(self) -> float:
        return self.spec.mass * self.mass_scale

    @property
    def friction(self) -> float:
        return self.spec.friction * self.friction_scale

    @property
    def truncated(self) -> bool:
        # every episode end in these tasks is a time limit, never a terminal state
        return self.done

    def set_params(self, mass_scale: float = 1.0, friction_scale: float = 1.0, adversary: bool = True) -> "AdversarialEnv":
        if mass_scale <= 0:
            raise ValueError(f"mass_scale must be positive, got {mass_scale}")
        if friction_scale < 0:
            raise ValueError(f"friction_scale must be non-negative, got {friction_scale}")
        self.mass_scale = float(mass_scale)
        self.friction_scale = float(friction_scale)
        self.adversary_enabled = adversary
        return self

    def reset(self, seed: int | None = None) -> np.ndarray:
        # start states are fixed; the seed only matters to stochastic policies
        self.state = self._initial_state()
        self.t = 0
        self.done = False
        return self.observe()

    def _clamp(self, a, dim: int, who: str) -> np.ndarray:
        a = np.asarray(a, dtype=np.float64).reshape(-1)
        if a.shape != (dim,):
            raise ConfigError(f"{who} action has {a.size} entries, expected {dim}")
        if np.any(np.abs(a) > 1.0):
            log.warning("%s action %s outside [-1, 1]; clamping", who, a)
            a = np.clip(a, -1.0, 1.0)
        return a

    def step(self, a_p, a_a) -> tuple[np.ndarray, float, bool]:
        if self.done:
            raise StateError("step called on a finished episode; call reset()")
        a_p = self._clamp(a_p, self.spec.dim_p, "protagonist")
        a_a = self._clamp(a_a, self.spec.dim_a, "adversary")
        force = self.spec.f_max * a_a if self.adversary_enabled else np.zeros(self.spec.dim_a)
        self.last_adversary_force = force
        r = self._advance(a_p, force)
        self.t += 1
        self.done = self.t >= self.spec.horizon
        return self.observe(), r, self.done

    def _initial_state(self) -> np.ndarray:
        raise NotImplementedError

    def observe(self) -> np.ndarray:
        raise NotImplementedError

    def _advance(self, a_p: np.ndarray, force: np.ndarray) -> float:
        raise NotImplementedError


class AdversarialPointMass(AdversarialEnv):
    """2-D double integrator steered toward a goal; the adversary pushes on it.

    State is ``(x1, x2, v1, v2)``, acceleration ``(a_p + f_max a_a - c v) / m``
    and reward ``-|x' - goal|``.
    """

    START = np.array([-1.0, -1.0])
    GOAL = np.array([1.0, 1.0])

    def __init__(self, f_max: float = 0.5, horizon: int = 500, mass: float = 1.0, friction: float = 0.1, **grid):
        super().__init__(GameSpec("point_mass", 4, 2, 2, f_max, horizon, mass=mass, friction=friction, **grid))

    def _initial_state(self):
        return np.concatenate([self.START, np.zeros(2)])

    def observe(self):
        return self.state.copy()

    def _advance(self, a_p, force):
        x, v = self.state[:2], self.state[2:]
        acc = (a_p + force - self.friction * v) / self.mass
        x_new = x + DT * v
        v_new = v + DT * acc
        self.state = np.concatenate([x_new, v_new])
        return -float(np.linalg.norm(x_new - self.GOAL))


class AdversarialPendulum(AdversarialEnv):
    """Pendulum swing-up from hanging rest (``theta = pi``); upright is ``theta = 0``.

    Protagonist torque is ``2 a_p``; the adversary adds ``f_max a_a``. Viscous
    friction ``c`` opposes the angular velocity, which is capped at 8 rad/s.
    """

    GRAVITY = 10.0
    LENGTH = 1.0
    MAX_TORQUE = 2.0
    MAX_SPEED = 8.0

    def __init__(self, f_max: float = 1.0, horizon: int = 500, mass: float = 1.0, friction: float = 0.1, **grid):
        super().__init__(GameSpec("pendulum", 3, 1, 1, f_max, horizon, mass=mass, friction=friction, **grid))

    def _initial_state(self):
        return np.array([math.pi, 0.0])

    def observe(self):
        th, thdot = self.state
        return np.array([math.cos(th), math.sin(th), thdot])

    def _advance(self, a_p, force):
        th, thdot = self.state
        torque = self.MAX_TORQUE * float(a_p[0])
        net = torque + float(force[0]) - self.friction * thdot
        g, l, m = self.GRAVITY, self.LENGTH, self.mass
        angle = (th + math.pi) % (2 * math.pi) - math.pi
        r = -(angle**2 + 0.1 * thdot**2 + 0.001 * torque**2)
        thddot = 3 * g / (2 * l) * math.sin(th) + 3.0 / (m * l**2) * net
        new_thdot = float(np.clip(thdot + DT * thddot, -self.MAX_SPEED, self.MAX_SPEED))
        self.state = np.array([th + DT * thdot, new_thdot])
        return r


ENVIRONMENTS = {"point_mass": AdversarialPointMass, "pendulum": AdversarialPendulum}


def make_env(name: str, f_max: float | None = None, horizon: int = 500) -> AdversarialEnv:
    try:
        cls = ENVIRONMENTS[name]
    except KeyError:
        raise ConfigError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None
    kwargs = {"horizon": horizon}
    if f_max is not None:
        kwargs["f_max"] = f_max
    return cls(**kwargs)


def rollout(
    env: AdversarialEnv,
    protagonist: Policy,
    adversary: Policy | None = None,
    deterministic: bool = True,
    seed: int | None = 0,
) -> EpisodeResult:
    """Play one episode; ``adversary=None`` means the adversary force is zero."""
    for pol, dim, who in ((protagonist, env.spec.dim_p, "protagonist"), (adversary, env.spec.dim_a, "adversary")):
        pdim = getattr(pol, "act_dim", None)
        if pdim is not None and pdim != dim:
            raise ConfigError(f"{who} policy emits {pdim} actions, environment expects {dim}")
    rng = np.random.default_rng(seed)
    obs = env.reset(seed)
    no_force = np.zeros(env.spec.dim_a)
    ret = adv_ret = 0.0
    done = False
    while not done:
        a_p = protagonist.act(obs, deterministic, rng)
        a_a = no_force if adversary is None else adversary.act(obs, deterministic, rng)
        obs, r, done = env.step(a_p, a_a)
        ret += r
        adv_ret += -r
    return EpisodeResult(ret, env.t, env.mass_scale, env.friction_scale, adv_ret)
