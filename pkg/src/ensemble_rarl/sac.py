"""Soft actor-critic agent with a K-critic ensemble.

The same agent class serves as protagonist (reward ``r``) or adversary
(reward ``-r``); only ``role_sign`` and the action slice it reads from the
shared replay buffer differ.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import tdu
from .errors import ConfigError, NumericError, ShapeError, StateError
from .nn import ELU_ALPHA, HIDDEN_ACTIVATIONS, LEAKY_SLOPE, Adam, Mlp

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
# keeps tanh-squashed actions strictly inside (-1, 1)
ACTION_EDGE = 1.0 - 1e-12
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
CHECKPOINT_VERSION = 1


def _log1m_tanh_sq(u: np.ndarray) -> np.ndarray:
    """``log(1 - tanh(u)^2)`` without cancellation for large ``|u|``."""
    return 2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


class PolicySample(NamedTuple):
    action: np.ndarray
    log_prob: np.ndarray
    pre_tanh: np.ndarray
    noise: np.ndarray
    log_std: np.ndarray
    clipped: np.ndarray


class GaussianPolicy:
    """Tanh-squashed diagonal Gaussian policy on top of an MLP trunk."""

    def __init__(self, obs_dim: int, act_dim: int, hidden=(256, 256, 256), lr: float = 1e-4, rng=None):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.net = Mlp([obs_dim, *hidden, 2 * act_dim], rng=rng)
        self.optimizer = Adam(self.net.params(), lr)

    def _heads(self, out: np.ndarray):
        mean = out[..., : self.act_dim]
        raw = out[..., self.act_dim :]
        log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std, (raw < LOG_STD_MIN) | (raw > LOG_STD_MAX)

    def _sample(self, out: np.ndarray, rng: np.random.Generator) -> PolicySample:
        mean, log_std, clipped = self._heads(out)
        eps = rng.standard_normal(mean.shape)
        u = mean + np.exp(log_std) * eps
        logp = (-0.5 * eps**2 - log_std - _HALF_LOG_2PI - _log1m_tanh_sq(u)).sum(axis=-1)
        a = np.clip(np.tanh(u), -ACTION_EDGE, ACTION_EDGE)
        return PolicySample(a, logp, u, eps, log_std, clipped)

    def act(self, obs, deterministic: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        if not np.all(np.isfinite(obs)):
            raise NumericError("non-finite state passed to policy")
        out = self.net.predict(obs)
        if deterministic:
            mean, _, _ = self._heads(out)
            return np.clip(np.tanh(mean), -ACTION_EDGE, ACTION_EDGE)
        if rng is None:
            raise ValueError("stochastic action needs an rng")
        return self._sample(out, rng).action

    def sample(self, obs, rng: np.random.Generator) -> PolicySample:
        """Reparameterized sample without caching (no gradient needed)."""
        return self._sample(self.net.predict(obs), rng)

    def rsample(self, obs, rng: np.random.Generator) -> PolicySample:
        """Reparameterized sample that keeps the trunk cache for :meth:`backward`."""
        return self._sample(self.net.forward(obs), rng)

    def backward(self, s: PolicySample, grad_action: np.ndarray, grad_log_prob: np.ndarray):
        """Parameter gradients given ``dL/da`` (batch, d) and ``dL/dlogp`` (batch,)."""
        a = np.tanh(s.pre_tanh)
        g_lp = np.asarray(grad_log_prob, dtype=np.float64)[..., None]
        g_u = grad_action * (1.0 - a * a) + g_lp * 2.0 * a
        g_log_std = g_u * np.exp(s.log_std) * s.noise - g_lp
        g_log_std = np.where(s.clipped, 0.0, g_log_std)
        grads, _ = self.net.backward(np.concatenate([g_u, g_log_std], axis=-1))
        return grads

    def log_prob(self, obs, action) -> np.ndarray:
        """Density of given squashed actions (used for checks, not training)."""
        mean, log_std, _ = self._heads(self.net.predict(obs))
        a = np.asarray(action, dtype=np.float64)
        u = np.arctanh(a)
        z = (u - mean) / np.exp(log_std)
        return (-0.5 * z**2 - log_std - _HALF_LOG_2PI - _log1m_tanh_sq(u)).sum(axis=-1)


class Temperature:
    """Entropy temperature ``alpha = exp(log_alpha)`` tuned toward ``-act_dim`` entropy."""

    def __init__(self, act_dim: int, initial_alpha: float = 5e-3, lr: float = 3e-4):
        if initial_alpha <= 0:
            raise ValueError("initial_alpha must be positive")
        self.log_alpha = np.array([math.log(initial_alpha)])
        self.target_entropy = -float(act_dim)
        self.optimizer = Adam([self.log_alpha], lr)

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))


class EnsembleCritic:
    """K Q-networks over ``concat(state, action)`` plus Polyak-averaged targets.

    Each critic is an :class:`Mlp` whose weight arrays are views into stacked
    ``(K, out, in)`` tensors, so the whole ensemble runs as one batched pass.
    Critics are initialized independently; with ``diversity`` each hidden layer
    gets a random activation and the weights receive extra Gaussian noise.
    """

    def __init__(
        self,
        obs_dim: int,
        act_dim: int,
        k: int,
        hidden=(256, 256, 256),
        lr: float = 3e-4,
        tau: float = 5e-3,
        diversity: bool = True,
        param_noise_std: float = 0.01,
        rng: np.random.Generator | None = None,
    ):
        if k < 1:
            raise ConfigError("ensemble needs at least one critic")
        rng = rng if rng is not None else np.random.default_rng()
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.tau = tau
        self.diversity = diversity
        dims = [obs_dim + act_dim, *hidden, 1]
        nets = []
        for _ in range(k):
            if diversity:
                acts = [str(rng.choice(HIDDEN_ACTIVATIONS)) for _ in hidden] + ["identity"]
                nets.append(Mlp(dims, acts, rng=rng, param_noise_std=param_noise_std))
            else:
                nets.append(Mlp(dims, rng=rng))
        n_layers = len(dims) - 1
        self.weights = [np.stack([net.weights[i] for net in nets]) for i in range(n_layers)]
        self.biases = [np.stack([net.biases[i] for net in nets]) for i in range(n_layers)]
        self.target_weights = [w.copy() for w in self.weights]
        self.target_biases = [b.copy() for b in self.biases]
        self.online = [self._view(net, self.weights, self.biases, j) for j, net in enumerate(nets)]
        self.targets = [self._view(net.copy(), self.target_weights, self.target_biases, j) for j, net in enumerate(nets)]
        self.set_activations([net.activations for net in nets])
        self.optimizer = Adam(self.params(), lr)

    @staticmethod
    def _view(net: Mlp, weights, biases, j: int) -> Mlp:
        net.weights = [w[j] for w in weights]
        net.biases = [b[j] for b in biases]
        return net

    @property
    def k(self) -> int:
        return len(self.online)

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def target_params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.target_weights, self.target_biases):
            out += [w, b]
        return out

    def set_activations(self, tags_per_critic) -> None:
        for net, tgt, tags in zip(self.online, self.targets, tags_per_critic):
            net.activations = list(tags)
            tgt.activations = list(tags)
        # per layer: identity flag, per-critic negative slope and the ELU critics
        self._layer_acts = []
        for i in range(len(self.weights)):
            tags = [net.activations[i] for net in self.online]
            if all(t == "identity" for t in tags):
                self._layer_acts.append(None)
                continue
            if "identity" in tags:
                raise ConfigError("identity may only be used on whole layers")
            slope = np.array([LEAKY_SLOPE if t == "leaky_relu" else 0.0 for t in tags])[:, None, None]
            elu = np.array([j for j, t in enumerate(tags) if t == "elu"], dtype=int)
            self._layer_acts.append((slope, elu, bool(slope.any())))

    def activation_tags(self) -> list[tuple[str, ...]]:
        return [tuple(net.activations) for net in self.online]

    def is_diverse(self) -> bool:
        """True if some pair of critics differs in activations or initial weights."""
        first = self.online[0]
        for net in self.online[1:]:
            if net.activations != first.activations:
                return True
            if any(not np.array_equal(p, q) for p, q in zip(net.params(), first.params())):
                return True
        return False

    # max(z, 0) + slope * min(z, 0) reproduces relu and leaky_relu exactly, and
    # max(z, 0) + expm1(min(z, 0)) reproduces elu; its derivative is exp(min(z, 0)).
    def _activate(self, i: int, z: np.ndarray) -> np.ndarray:
        spec = self._layer_acts[i]
        if spec is None:
            return z
        slope, elu, leaky = spec
        h = np.maximum(z, 0.0)
        if leaky or len(elu):
            neg = np.minimum(z, 0.0)
            if leaky:
                h += slope * neg
            if len(elu):
                h[elu] += ELU_ALPHA * np.expm1(neg[elu])
        return h

    def _activation_grad(self, i: int, z: np.ndarray) -> np.ndarray | None:
        spec = self._layer_acts[i]
        if spec is None:
            return None
        slope, elu, leaky = spec
        pos = z > 0
        d = np.where(pos, 1.0, slope) if leaky else pos.astype(np.float64)
        if len(elu):
            d[elu] = np.where(pos[elu], 1.0, ELU_ALPHA * np.exp(np.minimum(z[elu], 0.0)))
        return d

    def _run(self, x: np.ndarray, weights, biases, keep: bool):
        inputs, pre = [], []
        h = x[None]
        for i, (w, b) in enumerate(zip(weights, biases)):
            z = h @ w.transpose(0, 2, 1) + b[:, None, :]
            if keep:
                inputs.append(h)
                pre.append(z)
            h = self._activate(i, z)
        return h[..., 0].T, (inputs, pre)

    def values(self, obs, act, target: bool = False) -> np.ndarray:
        """Critic outputs as a ``(batch, K)`` matrix."""
        x = np.concatenate([obs, act], axis=-1)
        if target:
            return self._run(x, self.target_weights, self.target_biases, keep=False)[0]
        return self._run(x, self.weights, self.biases, keep=False)[0]

    def forward(self, x: np.ndarray):
        """Online outputs ``(batch, K)`` and the cache needed by :meth:`backward`."""
        return self._run(x, self.weights, self.biases, keep=True)

    def backward(self, cache, grad_q: np.ndarray, param_grads: bool = True):
        """Gradients for ``dL/dq`` of shape ``(batch, K)``.

        Returns stacked parameter gradients (or None) and ``dL/dx`` summed over
        the ensemble, shape ``(batch, in)``.
        """
        inputs, pre = cache
        g = np.asarray(grad_q, dtype=np.float64).T[..., None]
        grads: list[np.ndarray] = [None] * (2 * len(self.weights))  # type: ignore[list-item]
        for i in reversed(range(len(self.weights))):
            d = self._activation_grad(i, pre[i])
            dz = g if d is None else g * d
            if param_grads:
                grads[2 * i] = dz.transpose(0, 2, 1) @ inputs[i]
                grads[2 * i + 1] = dz.sum(axis=1)
            g = dz @ self.weights[i]
        return (grads if param_grads else None), g.sum(axis=0)

    def update_targets(self) -> None:
        for t, p in zip(self.target_params(), self.params()):
            t *= 1.0 - self.tau
            t += self.tau * p


class Batch(NamedTuple):
    obs: np.ndarray
    act_p: np.ndarray
    act_a: np.ndarray
    reward: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray

    def view(self, role_sign: float):
        """Per-agent ``(obs, own action, R, next_obs, done)`` with ``R = role_sign * r``."""
        if role_sign not in (1, -1):
            raise ValueError("role_sign must be +1 (protagonist) or -1 (adversary)")
        act = self.act_p if role_sign > 0 else self.act_a
        return self.obs, act, role_sign * self.reward, self.next_obs, self.done


@dataclass
class Transition:
    s: np.ndarray
    a_p: np.ndarray
    a_a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool


class ReplayBuffer:
    """Ring buffer of joint protagonist/adversary transitions."""

    def __init__(self, capacity: int, obs_dim: int, dim_p: int, dim_a: int, min_size: int = 1):
        self.capacity = int(capacity)
        self.min_size = int(min_size)
        self.obs = np.zeros((self.capacity, obs_dim))
        self.act_p = np.zeros((self.capacity, dim_p))
        self.act_a = np.zeros((self.capacity, dim_a))
        self.reward = np.zeros(self.capacity)
        self.next_obs = np.zeros((self.capacity, obs_dim))
        self.done = np.zeros(self.capacity)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def add(self, t: Transition) -> None:
        i = self._next
        self.obs[i] = t.s
        self.act_p[i] = t.a_p
        self.act_a[i] = t.a_a
        self.reward[i] = t.r
        self.next_obs[i] = t.s_next
        self.done[i] = float(t.done)
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """Uniform sample, without replacement inside the batch."""
        if self._size < max(self.min_size, batch_size):
            raise StateError(f"buffer holds {self._size} transitions, sampling needs {max(self.min_size, batch_size)}")
        idx = rng.choice(self._size, size=batch_size, replace=False)
        return Batch(self.obs[idx], self.act_p[idx], self.act_a[idx], self.reward[idx], self.next_obs[idx], self.done[idx])


class CriticUpdateInfo(NamedTuple):
    losses: np.ndarray
    target: np.ndarray


class ActorUpdateInfo(NamedTuple):
    loss: float
    log_probs: np.ndarray
    q_e: np.ndarray
    grad_norm: float
    grads: list


def critic_update(
    critics: EnsembleCritic,
    policy: GaussianPolicy,
    alpha: float,
    batch: Batch,
    role_sign: float,
    schedule: tdu.TduSchedule,
    n: int,
    gamma: float,
    rng: np.random.Generator,
) -> CriticUpdateInfo:
    """One Adam step per critic toward a shared soft Bellman target, then Polyak."""
    obs, act, rew, next_obs, done = batch.view(role_sign)
    nxt = policy.sample(next_obs, rng)
    q_next = tdu.aggregate_batch(critics.values(next_obs, nxt.action, target=True), schedule, n).q_e
    y = rew + gamma * (1.0 - done) * (q_next - alpha * nxt.log_prob)
    if not np.all(np.isfinite(y)):
        bad = int(np.argwhere(~np.isfinite(y))[0, 0])
        raise NumericError(f"non-finite critic target at sample {bad}")
    x = np.concatenate([obs, act], axis=-1)
    q, cache = critics.forward(x)
    diff = q - y[:, None]
    losses = np.mean(diff * diff, axis=0)
    grads, _ = critics.backward(cache, (2.0 / len(y)) * diff)
    critics.optimizer.step(grads)
    critics.update_targets()
    return CriticUpdateInfo(losses, y)


def actor_update(
    critics: EnsembleCritic,
    policy: GaussianPolicy,
    alpha: float,
    obs: np.ndarray,
    schedule: tdu.TduSchedule,
    n: int,
    rng: np.random.Generator,
    step: bool = True,
) -> ActorUpdateInfo:
    """Minimize ``mean(alpha * logpi(a|s) - Q_E(s, a))`` over the policy only."""
    bsz = len(obs)
    s = policy.rsample(obs, rng)
    x = np.concatenate([obs, s.action], axis=-1)
    qs, cache = critics.forward(x)
    q_e = tdu.aggregate_batch(qs, schedule, n).q_e
    weights = tdu.aggregate_grad(qs, schedule, n)
    loss = float(np.mean(alpha * s.log_prob - q_e))
    _, gx = critics.backward(cache, -weights / bsz, param_grads=False)
    grad_action = gx[:, critics.obs_dim :]
    grads = policy.backward(s, grad_action, np.full(bsz, alpha / bsz))
    norm = float(math.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if step:
        policy.optimizer.step(grads)
    return ActorUpdateInfo(loss, s.log_prob, q_e, norm, grads)


def temperature_update(temp: Temperature, log_probs: np.ndarray) -> float:
    """Adam step on ``log_alpha`` for the loss ``mean(-alpha * (logpi + target_entropy))``."""
    gap = np.asarray(log_probs, dtype=np.float64) + temp.target_entropy
    alpha = temp.alpha
    loss = float(np.mean(-alpha * gap))
    temp.optimizer.step([np.array([-alpha * np.mean(gap)])])
    return loss


@dataclass
class SacConfig:
    hidden: tuple[int, ...] = (256, 256, 256)
    gamma: float = 0.99
    batch_size: int = 256
    lr_critic: float = 3e-4
    lr_actor: float = 1e-4
    lr_alpha: float = 3e-4
    initial_alpha: float = 5e-3
    tau: float = 5e-3
    k: int = 5
    diversity: bool = True
    param_noise_std: float = 0.01
    initial_replay_size: int = 3000
    warmup_transitions: int = 5000
    schedule: tdu.TduSchedule = field(default_factory=tdu.TduSchedule)


class SacAgent:
    def __init__(self, obs_dim: int, act_dim: int, cfg: SacConfig, rng: np.random.Generator, variant: str = "full"):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.cfg = cfg
        self.variant = variant
        seeds = rng.integers(0, 2**63, size=3)
        self.policy = GaussianPolicy(obs_dim, act_dim, cfg.hidden, cfg.lr_actor, np.random.default_rng(seeds[0]))
        self.critics = EnsembleCritic(
            obs_dim,
            act_dim,
            cfg.k,
            cfg.hidden,
            cfg.lr_critic,
            cfg.tau,
            cfg.diversity,
            cfg.param_noise_std,
            np.random.default_rng(seeds[1]),
        )
        self.temperature = Temperature(act_dim, cfg.initial_alpha, cfg.lr_alpha)
        self.rng = np.random.default_rng(seeds[2])

    @property
    def schedule(self) -> tdu.TduSchedule:
        return self.cfg.schedule

    def act(self, obs, deterministic: bool = False, rng=None) -> np.ndarray:
        return self.policy.act(obs, deterministic, rng if rng is not None else self.rng)

    def update(self, buffer: ReplayBuffer, role_sign: float, n: int) -> dict | None:
        """One gradient step; critic-only until ``warmup_transitions`` are stored."""
        if len(buffer) < max(self.cfg.initial_replay_size, self.cfg.batch_size):
            return None
        batch = buffer.sample(self.cfg.batch_size, self.rng)
        alpha = self.temperature.alpha
        info = critic_update(self.critics, self.policy, alpha, batch, role_sign, self.schedule, n, self.cfg.gamma, self.rng)
        out = {"critic_loss": float(np.mean(info.losses))}
        if len(buffer) >= self.cfg.warmup_transitions:
            ainfo = actor_update(self.critics, self.policy, alpha, batch.obs, self.schedule, n, self.rng)
            out["actor_loss"] = ainfo.loss
            out["alpha_loss"] = temperature_update(self.temperature, ainfo.log_probs)
        return out

    def arrays(self) -> list[np.ndarray]:
        """Every learnable and optimizer array, in a fixed order."""
        out = list(self.policy.net.params()) + self.policy.optimizer.state_arrays()
        out += self.critics.params() + self.critics.target_params() + self.critics.optimizer.state_arrays()
        out += [self.temperature.log_alpha] + self.temperature.optimizer.state_arrays()
        return out

    def _step_counts(self) -> list[int]:
        return [self.policy.optimizer.t, self.temperature.optimizer.t, self.critics.optimizer.t]

    def fingerprint(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        for a in self.arrays():
            h.update(np.ascontiguousarray(a).tobytes())
        h.update(json.dumps(self._step_counts()).encode())
        return h.hexdigest()


@dataclass(frozen=True)
class VariantSettings:
    k: int
    mode: str
    diversity: bool


VARIANTS = (
    "full",
    "no_ensemble",
    "no_tdu",
    "no_diversity",
    "pessimism_dec",
    "pessimism_inc",
    "pessimism_min",
    "uncertainty_agnostic",
    "constant_optimistic",
    "linear_decay",
)


def variant_settings(name: str, k: int = 5, diversity: bool = True) -> VariantSettings:
    """Ensemble size, aggregation mode and diversity switch for a named ablation."""
    if name == "full":
        return VariantSettings(k, "tdu_exponential", diversity)
    if name == "no_ensemble":
        return VariantSettings(2, "min_of_all", diversity)
    if name == "no_tdu":
        return VariantSettings(k, "min_of_all", diversity)
    if name == "no_diversity":
        return VariantSettings(k, "tdu_exponential", False)
    if name in ("pessimism_dec", "pessimism_inc", "pessimism_min", "uncertainty_agnostic", "constant_optimistic", "linear_decay"):
        return VariantSettings(k, name, diversity)
    raise ConfigError(f"unknown agent variant {name!r}; choose from {', '.join(VARIANTS)}")


def make_variant(name: str, obs_dim: int, act_dim: int, cfg: SacConfig, rng: np.random.Generator) -> SacAgent:
    vs = variant_settings(name, cfg.k, cfg.diversity)
    agent_cfg = SacConfig(**{**vars(cfg), "k": vs.k, "diversity": vs.diversity, "schedule": cfg.schedule.with_mode(vs.mode)})
    return SacAgent(obs_dim, act_dim, agent_cfg, rng, variant=name)


def save_agent(agent: SacAgent, path) -> None:
    cfg = asdict(agent.cfg)
    header = {
        "format": "ensemble-sac",
        "version": CHECKPOINT_VERSION,
        "obs_dim": agent.obs_dim,
        "act_dim": agent.act_dim,
        "variant": agent.variant,
        "config": cfg,
        "activations": [list(t) for t in agent.critics.activation_tags()],
        "steps": agent._step_counts(),
    }
    arrays = {f"a{i:04d}": a for i, a in enumerate(agent.arrays())}
    arrays["rng_state"] = np.frombuffer(json.dumps(agent.rng.bit_generator.state).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, header=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8), **arrays)


def load_agent(path) -> SacAgent:
    with np.load(Path(path)) as data:
        header = json.loads(data["header"].tobytes().decode())
        if header.get("format") != "ensemble-sac" or header.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported agent checkpoint header {header.get('format')}/{header.get('version')}")
        cfg = dict(header["config"])
        cfg["hidden"] = tuple(cfg["hidden"])
        cfg["schedule"] = tdu.TduSchedule(**cfg["schedule"])
        agent = SacAgent(header["obs_dim"], header["act_dim"], SacConfig(**cfg), np.random.default_rng(0), header["variant"])
        agent.critics.set_activations(header["activations"])
        mine = agent.arrays()
        stored = [data[f"a{i:04d}"] for i in range(len(mine))]
        for dst, src in zip(mine, stored):
            if dst.shape != src.shape:
                raise ConfigError(f"checkpoint array shape {src.shape} does not match agent {dst.shape}")
            dst[...] = src
        steps = header["steps"]
        agent.policy.optimizer.t, agent.temperature.optimizer.t, agent.critics.optimizer.t = steps
        agent.rng.bit_generator.state = json.loads(data["rng_state"].tobytes().decode())
    return agent
