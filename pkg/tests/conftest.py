from __future__ import annotations

import numpy as np
import pytest

from tendency_lab.datagen import GeneratorConfig, generate_dataset
from tendency_lab.decision_model import PRESETS, Theta
from tendency_lab.gridworld import CARDINALS, DirectionFeatures, GameStateFeatures

ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def report_criterion(request):
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(name: str, passed: bool, detail: str) -> None:
        line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
        print(line)
        request.config.stash[ACCEPTANCE_KEY].append(line)

    return record


def random_theta(rng: np.random.Generator) -> Theta:
    return Theta(
        *np.exp(rng.uniform(np.log(0.05), np.log(5.0), size=4)).tolist(),
        *rng.uniform(-20, 120, size=2).tolist(),
    )


def random_state(rng: np.random.Generator, allow_blocked: bool = True) -> GameStateFeatures:
    dirs = {}
    for d in CARDINALS:
        ga = float(rng.integers(0, 30))
        ra = float(rng.integers(0, 30))
        dirs[d] = DirectionFeatures(
            ga=ga,
            ra=ra,
            gd=float(rng.uniform(1, 15)) if ga else 0.0,
            rd=float(rng.uniform(1, 15)) if ra else 0.0,
            oa=int(rng.random() < 0.3) if allow_blocked else 0,
        )
    if all(f.oa for f in dirs.values()):
        d = CARDINALS[rng.integers(4)]
        f = dirs[d]
        dirs[d] = DirectionFeatures(f.ga, f.ra, f.gd, f.rd, 0)
    return GameStateFeatures.from_directions(dirs)


@pytest.fixture(scope="session")
def small_dataset():
    return generate_dataset(PRESETS["rock_agnostic"], GeneratorConfig(n=400, seed=7))


@pytest.fixture(scope="session")
def agnostic_5000():
    return generate_dataset(PRESETS["rock_agnostic"], GeneratorConfig(n=5000, seed=42))


@pytest.fixture(scope="session")
def averse_5000():
    return generate_dataset(PRESETS["rock_averse"], GeneratorConfig(n=5000, seed=42))
