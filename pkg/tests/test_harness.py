import math

import numpy as np
import pytest

from ensemble_rarl import tdu
from ensemble_rarl.envs import AdversarialPointMass, ConstantPolicy
from ensemble_rarl.errors import ConfigError, ContractViolation
from ensemble_rarl.harness import (
    ContractLog,
    OracleSpec,
    _run_phase,
    c4,
    final_adversarial_eval,
    make_agents,
    robustness_eval,
    stability_metric,
    train,
    validate_theorem1,
)
from ensemble_rarl.sac import save_agent

from conftest import tiny_config

STABILITY_CASES = [
    ([200, 150, 180, 90], 25.0),
    ([100, 100, 100], 0.0),
    ([10, 20, 30, 40], 0.0),
    ([100, 50], 50.0),
    ([100, 0], 100.0),
    ([80, 60, 45], 25.0),
    ([-100, -150], 50.0),
    ([-200, -100, -150], 25.0),
    ([64, 32, 16, 8, 4], 50.0),
    ([1.0, 0.75, 1.5, 0.375], (25.0 + 0.0 + 75.0) / 3),
]


@pytest.mark.parametrize("series,expected", STABILITY_CASES)
def test_stability_metric_examples(series, expected):
    assert stability_metric(series) == expected


def test_stability_skips_zero_baseline(caplog):
    assert stability_metric([0.0, 5.0, 4.0]) == 20.0
    assert "zero baseline" in caplog.text


def test_stability_needs_two_values():
    with pytest.raises(ValueError):
        stability_metric([1.0])


def test_training_smoke_and_contracts():
    cfg = tiny_config()
    res = train(cfg, 0)
    assert [r.iteration for r in res.records] == [1, 2, 3, 4]
    assert [r.robustness is not None for r in res.records] == [False, True, False, True]
    c = res.contracts
    assert c.zero_sum_checks == cfg.N * 2 * cfg.episodes_per_iteration
    assert c.freeze_checks == 2 * cfg.N
    assert c.zero_sum_violations == 0 and c.freeze_violations == 0
    assert res.final_grid.shape == (2, 2)
    assert res.records[-1].beta == tdu.beta(cfg.schedule(), cfg.N)


def test_replay_warmup_gates_updates():
    # each phase stores 40 transitions; critics start learning once 40 are
    # stored, actor and temperature once 80 are stored
    res = train(tiny_config(N=2), 0)
    first, second = res.records
    assert first.adv_updates == 1 and first.adv_actor_loss is None
    assert first.prot_updates == 40
    assert first.prot_actor_loss is not None and first.alpha_p != tiny_config().initial_alpha
    assert second.adv_updates == 40 and second.adv_actor_loss is not None


def test_same_seed_same_records():
    a = train(tiny_config(N=3), 1)
    b = train(tiny_config(N=3), 1)
    assert a.records == b.records
    assert a.protagonist.fingerprint() == b.protagonist.fingerprint()
    c = train(tiny_config(N=3), 2)
    assert c.records != a.records


def test_freeze_violation_is_detected():
    prot, _ = make_agents(tiny_config(), AdversarialPointMass(horizon=5), 0)
    log = ContractLog()

    def cheat():
        prot.policy.net.biases[0][0] += 1.0

    with pytest.raises(ContractViolation, match="frozen"):
        _run_phase(prot, log, cheat)
    assert log.freeze_violations == 1


def test_frozen_phase_keeps_rng_and_weights():
    prot, _ = make_agents(tiny_config(), AdversarialPointMass(horizon=5), 0)
    log = ContractLog()
    _run_phase(prot, log, lambda: prot.act(np.zeros(4), deterministic=True))
    assert log.freeze_checks == 1 and log.freeze_violations == 0


class Goal:
    """Policy pushing straight at the goal with a chosen gain."""

    act_dim = 2

    def __init__(self, gain):
        self.gain = gain

    def act(self, obs, deterministic=False, rng=None):
        return np.clip(self.gain * (AdversarialPointMass.GOAL - obs[:2]) - obs[2:], -1, 1)


def test_robustness_eval_grid_and_restore():
    env = AdversarialPointMass(horizon=30).set_params(1.25, 0.5, adversary=True)
    res = robustness_eval(ConstantPolicy([0.0, 0.0]), env, ((0.5, 1.0), (1.0, 1.5, 2.0)), 2)
    assert res.grid.shape == (2, 3)
    # a motionless body scores the same everywhere
    assert np.all(res.grid == res.grid[0, 0])
    assert res.score == pytest.approx(-30 * math.sqrt(8.0), rel=1e-12)
    assert (env.mass_scale, env.friction_scale, env.adversary_enabled) == (1.25, 0.5, True)


def test_robustness_prefers_better_controller():
    env = AdversarialPointMass(horizon=80)
    grid = ((0.5, 1.0, 1.5), (0.5, 1.0, 1.5))
    good = robustness_eval(Goal(2.0), env, grid, 1).score
    idle = robustness_eval(ConstantPolicy([0.0, 0.0]), env, grid, 1).score
    assert good > idle


def test_robustness_heavier_mass_is_slower():
    env = AdversarialPointMass(horizon=40)
    res = robustness_eval(ConstantPolicy([1.0, 1.0]), env, ((0.5, 1.0, 1.5), (1.0,)), 1)
    assert res.grid[0, 0] > res.grid[1, 0] > res.grid[2, 0]


def test_robustness_needs_grid():
    with pytest.raises(ValueError):
        robustness_eval(ConstantPolicy([0.0, 0.0]), AdversarialPointMass(), ((), (1.0,)))


def test_worst_case_eval_runs_and_keeps_protagonist():
    cfg = tiny_config()
    res = train(cfg, 0)
    fp = res.protagonist.fingerprint()
    worst = final_adversarial_eval(res.protagonist, cfg.replace(warmup_transitions=20, initial_replay_size=20), 0, iterations=2)
    assert res.protagonist.fingerprint() == fp
    assert len(worst.returns) == cfg.eval_rollouts
    assert worst.mean_return == pytest.approx(np.mean(worst.returns))
    assert all(a == -b for a, b in zip(worst.adversary_returns, worst.returns))


def test_worst_case_rejects_mismatched_protagonist(tmp_path):
    res = train(tiny_config(N=1), 0)
    with pytest.raises(ConfigError, match="does not fit"):
        final_adversarial_eval(res.protagonist, tiny_config(env="pendulum"), 0, 1)


def test_diverged_run_writes_diagnostics(tmp_path, monkeypatch):
    from ensemble_rarl import harness
    from ensemble_rarl.errors import NumericError

    calls = {"n": 0}
    real = harness.SacAgent.update

    def flaky(self, buffer, role_sign, n):
        calls["n"] += 1
        if calls["n"] > 5:
            raise NumericError("boom")
        return real(self, buffer, role_sign, n)

    monkeypatch.setattr(harness.SacAgent, "update", flaky)
    with pytest.raises(harness.TrainingDiverged, match="iteration 1"):
        train(tiny_config(), 0, tmp_path)
    assert (tmp_path / "diagnostic_protagonist.npz").exists()


def test_c4_values():
    assert c4(2) == pytest.approx(math.sqrt(2 / math.pi), rel=1e-14)
    assert c4(5) == pytest.approx(0.9399856029866254, rel=1e-12)


def test_theorem_validator_default_case():
    rep = validate_theorem1(OracleSpec(trials=20_000, seed=1))
    assert rep.bound_holds
    assert rep.beta_end == pytest.approx(0.85 * math.exp(-3) + 0.15, abs=1e-15)
    assert abs(rep.signed_bias - rep.expected_signed_bias) <= 4 * rep.signed_bias_se
    assert rep.folded_normal_reference is None


def test_theorem_validator_limit_is_folded_normal():
    sched = tdu.TduSchedule(beta0=1.0, beta_min=0.0)
    rep = validate_theorem1(OracleSpec(sigma=2.0, k=4, schedule=sched, trials=50_000, seed=2))
    assert rep.folded_normal_reference == pytest.approx(2.0 * math.sqrt(2 / (math.pi * 4)))
    assert rep.limit_matches_reference


def test_theorem_validator_refuses_tiny_samples():
    with pytest.raises(ValueError, match="trials"):
        validate_theorem1(OracleSpec(trials=10))
    with pytest.raises(ValueError):
        validate_theorem1(OracleSpec(schedule=tdu.TduSchedule(mode="linear_decay")))


class FlatEnv(AdversarialPointMass):
    """Reward depends only on the mass scale: 10 at nominal, 20 at double mass."""

    offset = 0.0

    def _advance(self, a_p, force):
        super()._advance(a_p, force)
        return (10.0 * self.mass_scale + self.offset) / self.spec.horizon


def test_robustness_two_cells_average():
    env = FlatEnv(horizon=4)
    assert robustness_eval(ConstantPolicy([0.0, 0.0]), env, ((1.0, 2.0), (1.0,)), 3).score == pytest.approx(15.0, rel=1e-15)


def test_robustness_constant_shift():
    env = FlatEnv(horizon=4)
    base = robustness_eval(ConstantPolicy([0.0, 0.0]), env, ((0.5, 1.0, 2.0), (1.0, 1.5)), 1).score
    env.offset = 4.0
    shifted = robustness_eval(ConstantPolicy([0.0, 0.0]), env, ((0.5, 1.0, 2.0), (1.0, 1.5)), 1).score
    assert shifted - base == pytest.approx(4.0, abs=1e-12)


def test_nominal_cell_equals_plain_rollout():
    from ensemble_rarl.envs import rollout

    env = AdversarialPointMass(horizon=30)
    score = robustness_eval(Goal(1.5), env, ((1.0,), (1.0,)), 1).score
    assert score == rollout(AdversarialPointMass(horizon=30), Goal(1.5)).ret


def test_warmup_longer_than_run_means_no_updates():
    cfg = tiny_config(N=1, initial_replay_size=1000, warmup_transitions=1000)
    env = AdversarialPointMass(horizon=cfg.horizon)
    fresh_p, fresh_a = make_agents(cfg, env, 0)
    res = train(cfg, 0)
    rec = res.records[0]
    assert rec.prot_updates == rec.adv_updates == 0
    assert rec.prot_critic_loss is None
    assert res.protagonist.fingerprint() == fresh_p.fingerprint()
    assert res.adversary.fingerprint() == fresh_a.fingerprint()


def test_logged_beta_threads_schedule():
    cfg = tiny_config(N=3)
    res = train(cfg, 0)
    assert [r.beta for r in res.records] == [tdu.beta(cfg.schedule(), n) for n in (1, 2, 3)]


def test_zero_budget_worst_case_uses_untrained_adversary():
    from ensemble_rarl.envs import make_env, rollout
    from ensemble_rarl.sac import make_variant

    cfg = tiny_config()
    prot = train(cfg.replace(N=1), 0).protagonist
    worst = final_adversarial_eval(prot, cfg, 5, iterations=0)
    env = make_env(cfg.env, cfg.f_max, cfg.horizon)
    adv = make_variant(cfg.variant, 4, 2, cfg.replace(N=1).sac_config(), np.random.default_rng(np.random.SeedSequence([5, 2])))
    assert worst.returns == [rollout(env, prot, adv, deterministic=True, seed=e).ret for e in range(cfg.eval_rollouts)]


def test_worst_case_is_repeatable():
    cfg = tiny_config(warmup_transitions=20, initial_replay_size=20)
    prot = train(cfg.replace(N=1), 0).protagonist
    a = final_adversarial_eval(prot, cfg, 1, iterations=2)
    b = final_adversarial_eval(prot, cfg, 1, iterations=2)
    assert a.returns == b.returns


def test_noiseless_oracle_has_zero_bias():
    rep = validate_theorem1(OracleSpec(q_star=3.0, sigma=0.0, trials=2000))
    assert rep.bias == 0.0 and rep.signed_bias == 0.0
