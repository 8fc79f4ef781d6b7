import pytest

from ensemble_rarl.config import RunConfig


def tiny_config(**changes) -> RunConfig:
    """A run small enough for unit tests: a few seconds per seed."""
    base = dict(
        env="point_mass",
        N=4,
        horizon=20,
        episodes_per_iteration=2,
        K=3,
        hidden_layers=1,
        hidden_units=8,
        batch_size=16,
        initial_replay_size=40,
        warmup_transitions=80,
        eval_interval=2,
        eval_rollouts=1,
        final_adversary_iterations=1,
        seeds=(0,),
        mass_grid=(0.5, 1.0),
        friction_grid=(1.0, 1.5),
    )
    base.update(changes)
    return RunConfig(**base)


@pytest.fixture
def tiny():
    return tiny_config


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
