import json

import pytest

from ensemble_rarl.cli import main
from ensemble_rarl.runner import WORKERS_ENV, worker_count

TINY = """
env = "point_mass"
N = 2
horizon = 15
episodes_per_iteration = 2
K = 3
hidden_layers = 1
hidden_units = 8
batch_size = 8
initial_replay_size = 20
warmup_transitions = 30
eval_interval = 1
eval_rollouts = 1
final_adversary_iterations = 1
seeds = [0, 1]
mass_grid = [1.0, 1.5]
friction_grid = [1.0]
"""


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY)
    return path


def test_train_writes_artifacts(cfg_path, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg_path), "--out", str(out)]) == 0
    printed = json.loads(capsys.readouterr().out.splitlines()[0])
    assert set(printed) == {"run_id", "final_robustness", "stability_pct", "worst_case_return"}
    summary = json.loads((out / "summary.json").read_text())
    for key in ("final_robustness", "stability_pct", "worst_case_return", "per_seed", "final_robustness_ci95"):
        assert key in summary
    assert [p["seed"] for p in summary["per_seed"]] == [0, 1]
    for name in ("config.json", "robustness.svg", "heatmap.svg", "seed_0/metrics.csv", "seed_1/protagonist.npz"):
        assert (out / name).exists()


def test_seed_and_variant_flags(cfg_path, tmp_path, capsys):
    out = tmp_path / "one"
    assert main(["train", "--config", str(cfg_path), "--out", str(out), "--seed", "3", "--variant", "no_ensemble", "--k", "4"]) == 0
    echo = json.loads((out / "config.json").read_text())
    assert echo["seeds"] == [3] and echo["variant"] == "no_ensemble" and echo["K"] == 4
    assert (out / "seed_3" / "metrics.csv").exists()


def test_eval_commands_on_checkpoint(cfg_path, tmp_path, capsys):
    out = tmp_path / "run"
    main(["train", "--config", str(cfg_path), "--out", str(out), "--seed", "0"])
    capsys.readouterr()
    ckpt = str(out / "seed_0" / "protagonist.npz")
    assert main(["eval-robustness", "--config", str(cfg_path), "--checkpoint", ckpt]) == 0
    res = json.loads(capsys.readouterr().out)
    assert len(res["grid"]) == 2 and len(res["grid"][0]) == 1
    assert main(["eval-worstcase", "--config", str(cfg_path), "--checkpoint", ckpt, "--iterations", "1"]) == 0
    assert "worst_case_return" in json.loads(capsys.readouterr().out)


def test_eval_rejects_wrong_environment(cfg_path, tmp_path, capsys):
    out = tmp_path / "run"
    main(["train", "--config", str(cfg_path), "--out", str(out), "--seed", "0"])
    ckpt = str(out / "seed_0" / "protagonist.npz")
    assert main(["eval-robustness", "--config", str(cfg_path), "--env", "pendulum", "--checkpoint", ckpt]) == 1
    assert "does not match" in capsys.readouterr().err


def test_validate_theorem(capsys):
    assert main(["validate-theorem1", "--trials", "5000", "--beta-min", "0"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["bound_holds"] and rep["limit_matches_reference"]


def test_sweep_and_plot(cfg_path, tmp_path, capsys):
    out = tmp_path / "sweep"
    assert main(["sweep-k", "--config", str(cfg_path), "--out", str(out), "--seed", "0", "--ks", "2", "3"]) == 0
    text = capsys.readouterr().out
    assert "K=2" in text and "K=3" in text
    assert (out / "sweep_k.json").exists() and (out / "sweep_k.svg").exists()
    assert main(["plot", str(out / "K_2")]) == 0
    assert "robustness.svg" in capsys.readouterr().out


def test_errors_exit_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("horizn = 10\n")
    assert main(["train", "--config", str(bad)]) == 1
    assert "did you mean 'horizon'" in capsys.readouterr().err
    assert main(["train", "--config", str(tmp_path / "missing.toml")]) == 1
    assert main(["plot"]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["fly"])
    assert exc.value.code == 2


def test_worker_env(monkeypatch):
    monkeypatch.delenv(WORKERS_ENV, raising=False)
    assert worker_count() == 1
    monkeypatch.setenv(WORKERS_ENV, "3")
    assert worker_count() == 3
    monkeypatch.setenv(WORKERS_ENV, "many")
    with pytest.raises(ValueError):
        worker_count()


def test_parallel_matches_serial(cfg_path, tmp_path, monkeypatch):
    from ensemble_rarl.config import load_config
    from ensemble_rarl.runner import run_experiment

    cfg = load_config(cfg_path).replace(final_adversary_iterations=0)
    a = run_experiment(cfg, tmp_path / "a", workers=1)
    b = run_experiment(cfg, tmp_path / "b", workers=2)
    assert a["final_robustness"] == b["final_robustness"]
    assert (tmp_path / "a" / "seed_1" / "metrics.csv").read_bytes() == (tmp_path / "b" / "seed_1" / "metrics.csv").read_bytes()


def test_validate_noiseless(capsys):
    assert main(["validate-theorem1", "--sigma", "0", "--trials", "2000"]) == 0
    assert json.loads(capsys.readouterr().out)["bias"] == 0.0


def test_plot_is_idempotent(cfg_path, tmp_path):
    out = tmp_path / "run"
    main(["train", "--config", str(cfg_path), "--out", str(out), "--seed", "0"])
    first = (out / "robustness.svg").read_bytes(), (out / "heatmap.svg").read_bytes()
    assert main(["plot", "--out", str(out)]) == 0
    assert ((out / "robustness.svg").read_bytes(), (out / "heatmap.svg").read_bytes()) == first
