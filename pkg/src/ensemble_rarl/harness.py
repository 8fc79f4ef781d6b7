"""Alternating adversarial training, evaluation protocols and the bias validator."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import tdu
from .config import RunConfig
from .envs import AdversarialEnv, make_env, rollout
from .errors import ConfigError, ContractViolation, NumericError
from .sac import ReplayBuffer, SacAgent, Transition, make_variant, save_agent

log = logging.getLogger(__name__)


@dataclass
class RunRecord:
    iteration: int
    beta: float
    protagonist_return: float
    adversary_return: float
    robustness: float | None = None
    prot_critic_loss: float | None = None
    prot_actor_loss: float | None = None
    prot_alpha_loss: float | None = None
    adv_critic_loss: float | None = None
    adv_actor_loss: float | None = None
    adv_alpha_loss: float | None = None
    prot_updates: int = 0
    adv_updates: int = 0
    alpha_p: float = 0.0
    alpha_a: float = 0.0
    wall_clock: float = field(default=0.0, compare=False)


class TrainingDiverged(NumericError):
    """A loss or target went non-finite; a diagnostic checkpoint may have been written."""


@dataclass
class ContractLog:
    zero_sum_checks: int = 0
    zero_sum_violations: int = 0
    freeze_checks: int = 0
    freeze_violations: int = 0


@dataclass
class TrainResult:
    protagonist: SacAgent
    adversary: SacAgent
    records: list[RunRecord]
    final_grid: np.ndarray | None
    contracts: ContractLog


class RobustnessResult(NamedTuple):
    score: float
    grid: np.ndarray  # (len(mass_grid), len(friction_grid)) mean returns


def make_agents(config: RunConfig, env: AdversarialEnv, seed: int) -> tuple[SacAgent, SacAgent]:
    prot_seq, adv_seq = np.random.SeedSequence([seed, 0]).spawn(2)
    cfg = config.sac_config()
    prot = make_variant(config.variant, env.spec.obs_dim, env.spec.dim_p, cfg, np.random.default_rng(prot_seq))
    adv = make_variant(config.variant, env.spec.obs_dim, env.spec.dim_a, cfg, np.random.default_rng(adv_seq))
    return prot, adv


class _PhaseStats:
    def __init__(self):
        self.returns: list[float] = []
        self.losses: dict[str, list[float]] = {"critic_loss": [], "actor_loss": [], "alpha_loss": []}
        self.updates = 0

    def mean_loss(self, key: str) -> float | None:
        vals = self.losses[key]
        return float(np.mean(vals)) if vals else None


def _play_training_episode(
    env: AdversarialEnv,
    prot: SacAgent,
    adv: SacAgent,
    learner: SacAgent | None,
    role_sign: float,
    buffer: ReplayBuffer,
    n: int,
    rng: np.random.Generator,
    stats: _PhaseStats,
    contracts: ContractLog,
    prot_deterministic: bool = False,
) -> None:
    obs = env.reset()
    ret = adv_ret = 0.0
    done = False
    while not done:
        a_p = prot.act(obs, prot_deterministic, rng)
        a_a = adv.act(obs, False, rng)
        nxt, r, done = env.step(a_p, a_a)
        buffer.add(Transition(obs, a_p, a_a, r, nxt, done and not env.truncated))
        ret += r
        adv_ret += -r
        obs = nxt
        if learner is not None:
            info = learner.update(buffer, role_sign, n)
            if info is not None:
                stats.updates += 1
                for key, val in info.items():
                    if not math.isfinite(val):
                        raise NumericError(f"{key} became {val} at iteration {n}")
                    stats.losses[key].append(val)
    contracts.zero_sum_checks += 1
    if ret + adv_ret != 0.0:
        contracts.zero_sum_violations += 1
        raise ContractViolation(f"zero-sum accounting broken: {ret} + {adv_ret} != 0")
    stats.returns.append(ret if role_sign > 0 else adv_ret)


def _run_phase(frozen: SacAgent, contracts: ContractLog, play) -> None:
    before = frozen.fingerprint()
    play()
    contracts.freeze_checks += 1
    if frozen.fingerprint() != before:
        contracts.freeze_violations += 1
        raise ContractViolation("frozen agent's parameters changed during the opponent's phase")


def _is_eval_iteration(n: int, config: RunConfig) -> bool:
    return n % config.eval_interval == 0 or n == config.N


def train(config: RunConfig, seed: int, out_dir: str | Path | None = None) -> TrainResult:
    """Alternate adversary and protagonist phases for ``config.N`` iterations.

    Phase A freezes the protagonist while the adversary collects
    ``episodes_per_iteration`` episodes with one gradient step per environment
    step; phase B swaps roles. Both agents share one replay buffer of joint
    transitions. A robustness sweep runs every ``eval_interval`` iterations.
    """
    env = make_env(config.env, config.f_max, config.horizon)
    prot, adv = make_agents(config, env, seed)
    max_steps = config.N * 2 * config.episodes_per_iteration * config.horizon
    buffer = ReplayBuffer(min(config.buffer_capacity, max_steps), env.spec.obs_dim, env.spec.dim_p, env.spec.dim_a)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    schedule = config.schedule().with_mode(prot.schedule.mode)
    contracts = ContractLog()
    records: list[RunRecord] = []
    final_grid = None
    grid = (config.mass_grid, config.friction_grid)
    start = time.perf_counter()

    for n in range(1, config.N + 1):
        adv_stats, prot_stats = _PhaseStats(), _PhaseStats()

        def phase(learner, sign, stats):
            def play():
                for _ in range(config.episodes_per_iteration):
                    _play_training_episode(env, prot, adv, learner, sign, buffer, n, rng, stats, contracts)

            return play

        try:
            _run_phase(prot, contracts, phase(adv, -1.0, adv_stats))
            _run_phase(adv, contracts, phase(prot, 1.0, prot_stats))
        except NumericError as exc:
            if out_dir is not None:
                diag = Path(out_dir)
                diag.mkdir(parents=True, exist_ok=True)
                save_agent(prot, diag / "diagnostic_protagonist.npz")
                save_agent(adv, diag / "diagnostic_adversary.npz")
            raise TrainingDiverged(f"training diverged at iteration {n}: {exc}") from exc

        rec = RunRecord(
            iteration=n,
            beta=tdu.beta(schedule, n),
            protagonist_return=float(np.mean(prot_stats.returns)),
            adversary_return=float(np.mean(adv_stats.returns)),
            prot_critic_loss=prot_stats.mean_loss("critic_loss"),
            prot_actor_loss=prot_stats.mean_loss("actor_loss"),
            prot_alpha_loss=prot_stats.mean_loss("alpha_loss"),
            adv_critic_loss=adv_stats.mean_loss("critic_loss"),
            adv_actor_loss=adv_stats.mean_loss("actor_loss"),
            adv_alpha_loss=adv_stats.mean_loss("alpha_loss"),
            prot_updates=prot_stats.updates,
            adv_updates=adv_stats.updates,
            alpha_p=prot.temperature.alpha,
            alpha_a=adv.temperature.alpha,
        )
        if _is_eval_iteration(n, config):
            res = robustness_eval(prot, env, grid, config.eval_rollouts)
            rec.robustness = res.score
            final_grid = res.grid
        rec.wall_clock = time.perf_counter() - start
        records.append(rec)
        log.info(
            "seed %d iter %d/%d beta=%.4f prot=%.2f adv=%.2f robust=%s",
            seed, n, config.N, rec.beta, rec.protagonist_return, rec.adversary_return, rec.robustness,
        )
    return TrainResult(prot, adv, records, final_grid, contracts)


def grid_mean(values) -> float:
    return float(np.mean(np.asarray(values, dtype=np.float64)))


def robustness_eval(
    protagonist,
    env: AdversarialEnv,
    grid: tuple[Sequence[float], Sequence[float]] | None = None,
    episodes_per_cell: int = 10,
) -> RobustnessResult:
    """Mean deterministic return without the adversary over a mass x friction grid."""
    masses, frictions = grid if grid is not None else (env.spec.mass_grid, env.spec.friction_grid)
    if len(masses) == 0 or len(frictions) == 0:
        raise ValueError("robustness grid must be non-empty")
    saved = (env.mass_scale, env.friction_scale, env.adversary_enabled)
    table = np.empty((len(masses), len(frictions)))
    try:
        for i, m in enumerate(masses):
            for j, c in enumerate(frictions):
                env.set_params(m, c, adversary=False)
                table[i, j] = np.mean(
                    [rollout(env, protagonist, None, deterministic=True, seed=e).ret for e in range(episodes_per_cell)]
                )
    finally:
        env.set_params(*saved)
    return RobustnessResult(grid_mean(table), table)


def stability_metric(series: Sequence[float]) -> float:
    """Mean percentage drop between consecutive robustness evaluations.

    Increases count as a 0% drop. Pairs whose first value is 0 are skipped.
    """
    vals = [float(v) for v in series]
    if len(vals) < 2:
        raise ValueError("stability metric needs at least two evaluations")
    drops = []
    for prev, cur in zip(vals[:-1], vals[1:]):
        if prev == 0.0:
            log.warning("skipping stability pair with zero baseline (%s -> %s)", prev, cur)
            continue
        drops.append(max(0.0, (prev - cur) / abs(prev)) * 100.0)
    if not drops:
        return 0.0
    return float(np.mean(drops))


@dataclass
class WorstCaseResult:
    mean_return: float
    returns: list[float]
    adversary_returns: list[float]
    adversary: SacAgent


def final_adversarial_eval(
    protagonist: SacAgent,
    config: RunConfig,
    seed: int = 0,
    iterations: int | None = None,
) -> WorstCaseResult:
    """Train a fresh adversary against the frozen protagonist, then test against it.

    While the adversary trains, the protagonist acts deterministically, i.e. the
    same policy it is evaluated with.
    """
    iterations = config.final_adversary_iterations if iterations is None else iterations
    env = make_env(config.env, config.f_max, config.horizon)
    if (protagonist.obs_dim, protagonist.act_dim) != (env.spec.obs_dim, env.spec.dim_p):
        raise ConfigError(
            f"protagonist checkpoint ({protagonist.obs_dim} obs, {protagonist.act_dim} act) does not fit {config.env}"
        )
    adv_cfg = config.replace(N=max(iterations, 1))
    adv = make_variant(
        config.variant, env.spec.obs_dim, env.spec.dim_a, adv_cfg.sac_config(),
        np.random.default_rng(np.random.SeedSequence([seed, 2])),
    )
    steps = max(iterations, 1) * config.episodes_per_iteration * config.horizon
    buffer = ReplayBuffer(min(config.buffer_capacity, steps), env.spec.obs_dim, env.spec.dim_p, env.spec.dim_a)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    contracts = ContractLog()

    def play(n):
        stats = _PhaseStats()
        for _ in range(config.episodes_per_iteration):
            _play_training_episode(env, protagonist, adv, adv, -1.0, buffer, n, rng, stats, contracts, prot_deterministic=True)

    for n in range(1, iterations + 1):
        _run_phase(protagonist, contracts, lambda: play(n))

    results = [rollout(env, protagonist, adv, deterministic=True, seed=e) for e in range(config.eval_rollouts)]
    return WorstCaseResult(
        float(np.mean([r.ret for r in results])),
        [r.ret for r in results],
        [r.adversary_return for r in results],
        adv,
    )


@dataclass(frozen=True)
class OracleSpec:
    q_star: float = 0.0
    sigma: float = 1.0
    k: int = 5
    schedule: tdu.TduSchedule = field(default_factory=tdu.TduSchedule)
    trials: int = 100_000
    seed: int = 0


@dataclass
class Theorem1Report:
    trials: int
    k: int
    sigma: float
    beta_end: float
    bias: float
    bias_se: float
    mean_abs_error: float
    mean_std: float
    decomposition_bound: float
    bound_holds: bool
    signed_bias: float
    signed_bias_se: float
    expected_signed_bias: float
    limit_beta: float
    limit_bias: float
    limit_bias_se: float
    folded_normal_reference: float | None
    limit_matches_reference: bool | None
    claimed_limit_bound: float
    claimed_limit_bound_holds: bool


def c4(k: int) -> float:
    """Mean of the Bessel-corrected sample std of ``k`` unit normals."""
    return math.sqrt(2.0 / (k - 1)) * math.exp(math.lgamma(k / 2.0) - math.lgamma((k - 1) / 2.0))


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    return float(np.mean(x)), float(np.std(x, ddof=1) / math.sqrt(len(x)))


def validate_theorem1(oracle: OracleSpec, min_trials: int = 1000) -> Theorem1Report:
    """Monte-Carlo check of the aggregate's bias for i.i.d. unbiased Gaussian critics.

    At ``n = N`` the per-sample triangle inequality
    ``|q_e - q*| <= |mean - q*| + beta(N) std`` is checked in expectation, and
    the signed bias is compared with ``beta(N) * c4(K) * sigma``. The limiting
    coefficient ``beta -> beta_min`` is evaluated on the same draws; for
    ``beta_min = 0`` the bias must match the folded-normal mean
    ``sigma * sqrt(2 / (pi K))`` of the ensemble average.
    """
    if oracle.trials < min_trials:
        raise ValueError(f"refusing a bias estimate from {oracle.trials} trials; need at least {min_trials}")
    if oracle.schedule.mode != "tdu_exponential":
        raise ValueError("the bias validator expects the exponential schedule")
    if oracle.k < 2:
        raise ValueError("need K >= 2 critics")
    rng = np.random.default_rng(oracle.seed)
    draws = rng.normal(oracle.q_star, oracle.sigma, size=(oracle.trials, oracle.k))
    n_end = oracle.schedule.n_total
    agg = tdu.aggregate_batch(draws, oracle.schedule, n_end)
    err = agg.q_e - oracle.q_star
    bias, bias_se = _mean_se(np.abs(err))
    signed, signed_se = _mean_se(err)
    mean_abs = float(np.mean(np.abs(agg.mean - oracle.q_star)))
    mean_std = float(np.mean(agg.std))
    bound = mean_abs + agg.beta * mean_std

    limit_beta = oracle.schedule.beta_min
    limit_err = agg.mean + limit_beta * agg.std - oracle.q_star
    limit_bias, limit_se = _mean_se(np.abs(limit_err))
    reference = matches = None
    if limit_beta == 0.0:
        reference = oracle.sigma * math.sqrt(2.0 / (math.pi * oracle.k))
        matches = abs(limit_bias - reference) <= 3.0 * limit_se
    claimed = limit_beta * oracle.sigma
    return Theorem1Report(
        trials=oracle.trials,
        k=oracle.k,
        sigma=oracle.sigma,
        beta_end=agg.beta,
        bias=bias,
        bias_se=bias_se,
        mean_abs_error=mean_abs,
        mean_std=mean_std,
        decomposition_bound=bound,
        bound_holds=bias <= bound + 3.0 * bias_se,
        signed_bias=signed,
        signed_bias_se=signed_se,
        expected_signed_bias=agg.beta * c4(oracle.k) * oracle.sigma,
        limit_beta=limit_beta,
        limit_bias=limit_bias,
        limit_bias_se=limit_se,
        folded_normal_reference=reference,
        limit_matches_reference=matches,
        claimed_limit_bound=claimed,
        claimed_limit_bound_holds=limit_bias <= claimed + 3.0 * limit_se,
    )
