"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
"""

import math
import time
from pathlib import Path

import mpmath
import numpy as np
import pytest

from ensemble_rarl import tdu
from ensemble_rarl.config import load_config
from ensemble_rarl.harness import OracleSpec, stability_metric, train, validate_theorem1
from ensemble_rarl.nn import HIDDEN_ACTIVATIONS, Mlp
from ensemble_rarl.runner import compare_variants, run_experiment, sweep_k

from conftest import ACCEPTANCE_LINES

DESK = Path(__file__).resolve().parent.parent / "configs" / "desk_point_mass.toml"


def report(number: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def block_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


def pre_activations(net, x):
    net.forward(x)
    return net._cache[1]


def test_1_gradient_exactness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    h = 1e-5
    worst = 0.0
    for _ in range(20):
        depth = int(rng.integers(1, 4))
        dims = [int(rng.integers(1, 9))] + [int(rng.integers(1, 17)) for _ in range(depth)] + [int(rng.integers(1, 4))]
        acts = [str(rng.choice(HIDDEN_ACTIVATIONS)) for _ in range(depth)] + ["identity"]
        net = Mlp(dims, acts, rng=rng)
        x = rng.normal(size=(4, dims[0]))
        # finite differences are meaningless across a ReLU kink
        while min(np.abs(z).min() for z in pre_activations(net, x)) < 1e-6:
            x = rng.normal(size=(4, dims[0]))
        w = rng.normal(size=(4, dims[-1]))
        net.forward(x)
        grads, gx = net.backward(w)
        for p, g in zip(net.params(), grads):
            fd = np.zeros_like(p)
            for i in np.ndindex(p.shape):
                old = p[i]
                p[i] = old + h
                up = np.sum(w * net.predict(x))
                p[i] = old - h
                down = np.sum(w * net.predict(x))
                p[i] = old
                fd[i] = (up - down) / (2 * h)
            worst = max(worst, block_rel_err(g, fd))
        fdx = np.zeros_like(x)
        for i in np.ndindex(x.shape):
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            fdx[i] = (np.sum(w * net.predict(xp)) - np.sum(w * net.predict(xm))) / (2 * h)
        worst = max(worst, block_rel_err(gx, fdx))
    elapsed = time.perf_counter() - t0
    report(1, worst < 1e-4 and elapsed < 10.0, f"max relative error {worst:.2e} (< 1e-4) in {elapsed:.2f} s (< 10 s)")


def test_2_tdu_algebra():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    sched = tdu.TduSchedule()
    failures = {"permutation": 0, "translation": 0, "bounds": 0, "variance": 0}
    total = 10_000
    checked = 0
    ks = rng.integers(2, 11, size=total)
    for k in range(2, 11):
        rows = int(np.sum(ks == k))
        scale = 10.0 ** rng.uniform(-3, 3, size=(rows, 1))
        q = rng.normal(size=(rows, k)) * scale + rng.normal(size=(rows, 1)) * scale
        n = int(rng.integers(0, 201))
        base = tdu.aggregate_batch(q, sched, n)

        perm = np.argsort(rng.random((rows, k)), axis=1)
        shuffled = tdu.aggregate_batch(np.take_along_axis(q, perm, axis=1), sched, n)
        failures["permutation"] += int(np.sum((shuffled.q_e != base.q_e) | (shuffled.std != base.std)))

        c = rng.normal(size=(rows, 1)) * scale
        moved = tdu.aggregate_batch(q + c, sched, n)
        tol = 1e-12 * (np.abs(q).max(axis=1) + np.abs(c[:, 0]))
        failures["translation"] += int(np.sum(np.abs(moved.q_e - c[:, 0] - base.q_e) > 8 * tol))

        failures["bounds"] += int(np.sum((base.mean < q.min(axis=1)) | (base.mean > q.max(axis=1))))

        for i in range(rows):
            checked += 1
            row = q[i].tolist()
            mean = math.fsum(row) / k
            var = math.fsum((v - mean) ** 2 for v in row) / (k - 1)
            if abs(base.std[i] ** 2 - var) > 1e-12 * var:
                failures["variance"] += 1
    elapsed = time.perf_counter() - t0
    ok = checked == total and not any(failures.values()) and elapsed < 5.0
    detail = ", ".join(f"{k} violations {v}" for k, v in failures.items())
    report(2, ok, f"{checked} inputs, {detail}, {elapsed:.2f} s (< 5 s)")


def test_3_schedule_endpoints():
    sched = tdu.TduSchedule()
    mpmath.mp.dps = 60
    ref = mpmath.mpf("0.85") * mpmath.exp(-3) + mpmath.mpf("0.15")
    b0, bn = tdu.beta(sched, 0), tdu.beta(sched, sched.n_total)
    err = abs(mpmath.mpf(bn) - ref)
    report(3, b0 == 1.0 and err <= 1e-12, f"beta(0) = {b0!r}, |beta(N) - high precision| = {float(err):.1e} (<= 1e-12)")


def test_4_theorem_monte_carlo():
    t0 = time.perf_counter()
    rep = validate_theorem1(OracleSpec(q_star=0.0, sigma=1.0, k=5, trials=100_000, seed=0))
    limit_sched = tdu.TduSchedule(beta0=1.0, beta_min=0.0)
    lim = validate_theorem1(OracleSpec(q_star=0.0, sigma=1.0, k=5, schedule=limit_sched, trials=100_000, seed=1))
    elapsed = time.perf_counter() - t0
    ok = rep.bound_holds and lim.limit_matches_reference and elapsed < 30.0
    report(
        4,
        ok,
        f"E|Q_E - Q*| = {rep.bias:.4f} <= bound {rep.decomposition_bound:.4f} + 3 SE ({rep.bias_se:.4f}); "
        f"beta -> 0 bias {lim.limit_bias:.4f} vs folded normal {lim.folded_normal_reference:.4f} "
        f"(3 SE = {3 * lim.limit_bias_se:.4f}); {elapsed:.1f} s (< 30 s)",
    )


def test_5_variance_reduction():
    rng = np.random.default_rng(11)
    q_star = 2.0
    noisy = q_star + rng.normal(0.0, 1.0, size=(100_000, 5))
    ens = tdu.aggregate_batch(noisy, tdu.TduSchedule(mode="uncertainty_agnostic"), 0).mean
    ratio = float(np.var(ens) / np.var(noisy[:, 0]))
    report(5, 0.15 <= ratio <= 0.27, f"variance ratio {ratio:.4f} in [0.15, 0.27] (1/K = 0.2)")


def test_6_contracts_smoke():
    t0 = time.perf_counter()
    cfg = load_config(DESK).replace(N=20)
    res = train(cfg, 0)
    c = res.contracts
    elapsed = time.perf_counter() - t0
    expected_episodes = cfg.N * 2 * cfg.episodes_per_iteration
    ok = (
        c.zero_sum_violations == 0
        and c.freeze_violations == 0
        and c.zero_sum_checks == expected_episodes
        and c.freeze_checks == 2 * cfg.N
        and elapsed < 300.0
    )
    report(
        6,
        ok,
        f"{c.zero_sum_checks} zero-sum checks, {c.freeze_checks} freeze checks, "
        f"{c.zero_sum_violations + c.freeze_violations} violations, {elapsed:.0f} s (< 300 s)",
    )


@pytest.mark.slow
def test_7_directional_reproduction():
    t0 = time.perf_counter()
    cfg = load_config(DESK)
    result = compare_variants(cfg, ["full", "no_ensemble", "pessimism_min"], seeds=[0, 1, 2, 3, 4])
    elapsed = time.perf_counter() - t0
    wins = result["wins"]
    scores = result["scores"]
    ok = wins["no_ensemble"] >= 4 and wins["pessimism_min"] >= 4 and elapsed < 7200
    table = "; ".join(f"{v}: " + ", ".join(f"{scores[v][s]:.1f}" for s in result["seeds"]) for v in scores)
    report(
        7,
        ok,
        f"full >= no_ensemble on {wins['no_ensemble']}/5 seeds, full >= pessimism_min on {wins['pessimism_min']}/5 "
        f"(need 4/5 each); {table}; {elapsed / 60:.1f} min (< 120 min)",
    )


def test_8_stability_oracle():
    cases = [
        ([200, 150, 180, 90], 25.0),
        ([100, 100, 100], 0.0),
        ([10, 20, 30, 40], 0.0),
        ([100, 50], 50.0),
        ([100, 0], 100.0),
        ([80, 60, 45], 25.0),
        ([-100, -150], 50.0),
        ([-200, -100, -150], 25.0),
        ([64, 32, 16, 8, 4], 50.0),
        ([1.0, 0.75, 1.5, 0.375], 100.0 / 3),
    ]
    bad = [(s, stability_metric(s), e) for s, e in cases if stability_metric(s) != e]
    report(8, not bad, f"{len(cases) - len(bad)}/{len(cases)} hand-computed series reproduced exactly")


def test_9_determinism(tmp_path):
    cfg = load_config(DESK).replace(N=6, final_adversary_iterations=1, seeds=(3,))
    run_experiment(cfg, tmp_path / "a", workers=1)
    run_experiment(cfg, tmp_path / "b", workers=1)
    a = (tmp_path / "a" / "seed_3" / "metrics.csv").read_bytes()
    b = (tmp_path / "b" / "seed_3" / "metrics.csv").read_bytes()
    report(9, a == b, f"metrics.csv byte-identical across reruns ({len(a)} bytes)")


def test_10_k_sweep(tmp_path):
    cfg = load_config(DESK).replace(N=10, seeds=(0,), final_adversary_iterations=0)
    result = sweep_k(cfg, tmp_path, ks=[2, 3, 5, 7, 10], workers=1)
    rows = result["results"]
    ok = [r["K"] for r in rows] == [2, 3, 5, 7, 10] and all(math.isfinite(r["final_robustness"]) for r in rows)
    ok = ok and (tmp_path / "sweep_k.json").exists()
    detail = ", ".join(f"K={r['K']}: {r['final_robustness']:.1f}" for r in rows)
    report(10, ok, f"sweep completed; {detail}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
