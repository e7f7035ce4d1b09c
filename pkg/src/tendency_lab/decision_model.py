"""Stochastic move / direction decision model.

The move decision is a sigmoid of weighted, thresholded gold and rock counts;
the direction decision is a softmax over open directions of gold-amount to
gold-distance ratios (attractive) and rock ratios (repulsive).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .gridworld import CARDINALS, Direction, GameStateFeatures

PARAM_NAMES = ("w1", "w2", "w3", "w4", "delta1", "delta2")


class BlockedError(ValueError):
    """All four directions are blocked by obstacles."""


@dataclass(frozen=True)
class Theta:
    """Behaviour-tendency parameters.

    ``w1``/``w2`` weigh gold/rock amounts, ``w3``/``w4`` the gold/rock
    distances, and ``delta1``/``delta2`` are the gold/rock thresholds of the
    move decision (tile-count units).
    """

    w1: float
    w2: float
    w3: float
    w4: float
    delta1: float
    delta2: float

    def __post_init__(self):
        for name in PARAM_NAMES:
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ValueError(f"{name} must be a finite real, got {value!r}")
        for name in ("w1", "w2", "w3", "w4"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES], dtype=float)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "Theta":
        return cls(*(float(v) for v in values))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "Theta":
        missing = [n for n in PARAM_NAMES if n not in data]
        if missing:
            raise ValueError(f"theta is missing {', '.join(missing)}")
        return cls(**{n: float(data[n]) for n in PARAM_NAMES})


PRESETS: dict[str, Theta] = {
    "rock_agnostic": Theta(w1=0.90, w2=0.30, w3=1.13, w4=1.00, delta1=20.0, delta2=60.0),
    "rock_averse": Theta(w1=0.95, w2=0.80, w3=3.17, w4=1.14, delta1=50.0, delta2=20.0),
}


def resolve_theta(spec: str | Mapping | Theta) -> Theta:
    """Accept a preset name, a JSON file path, a mapping or a Theta."""
    if isinstance(spec, Theta):
        return spec
    if isinstance(spec, Mapping):
        return Theta.from_dict(spec)
    if spec in PRESETS:
        return PRESETS[spec]
    path = Path(spec)
    if path.is_file():
        return Theta.from_dict(json.loads(path.read_text()))
    raise ValueError(f"unknown preset or theta file {spec!r} (presets: {', '.join(PRESETS)})")


@dataclass(frozen=True)
class Decision:
    move: int
    direction: Direction

    def __post_init__(self):
        if self.move not in (0, 1):
            raise ValueError("move must be 0 or 1")
        if (self.move == 0) != (self.direction is Direction.NONE):
            raise ValueError("move = 0 if and only if direction is NoDirection")


@dataclass(frozen=True)
class ChoiceSpec:
    """Generic weighted-feature choice: one feature row per outcome."""

    weights: Sequence[float]
    thresholds: Sequence[float]
    features: Sequence[Sequence[float]]

    def __post_init__(self):
        if len(self.weights) != len(self.thresholds):
            raise ValueError("weights and thresholds must have equal length")


def softmax(scores) -> np.ndarray:
    scores = np.asarray(scores, dtype=float)
    shifted = np.exp(scores - scores.max())
    return shifted / shifted.sum()


def generic_choice_probabilities(spec: ChoiceSpec) -> np.ndarray:
    """Softmax over per-outcome scores ``sum_r w_r * (g_r - delta_r)``."""
    features = np.asarray(spec.features, dtype=float)
    if features.size == 0 or len(features) == 0:
        raise ValueError("no outcomes")
    if features.ndim != 2 or features.shape[1] != len(spec.weights):
        raise ValueError("each outcome needs one value per feature")
    if not np.all(np.isfinite(features)):
        raise ValueError("features must be finite")
    weights = np.asarray(spec.weights, dtype=float)
    thresholds = np.asarray(spec.thresholds, dtype=float)
    scores = np.array([sum(w * (g - t) for w, g, t in zip(weights, row, thresholds)) for row in features])
    return softmax(scores)


def sigmoid(z: float) -> float:
    # np.exp rather than math.exp so the result matches softmax() bit for bit
    if z >= 0:
        return float(1.0 / (1.0 + np.exp(-z)))
    e = np.exp(z)
    return float(e / (e + 1.0))


def move_logit(theta: Theta, state: GameStateFeatures) -> float:
    if not (math.isfinite(state.ga) and math.isfinite(state.ra)):
        raise ValueError("non-finite features")
    return (-theta.w1) * (state.ga - theta.delta1) + theta.w2 * (state.ra - theta.delta2)


def move_probability(theta: Theta, state: GameStateFeatures) -> float:
    """Probability of moving; falls with gold around, rises with rock around."""
    return sigmoid(move_logit(theta, state))


def ratio(amount: float, distance: float) -> float:
    return amount / distance if amount > 0 and distance > 0 else 0.0


def direction_utilities(theta: Theta, state: GameStateFeatures) -> dict[Direction, float]:
    gold_scale = theta.w1 / theta.w3
    rock_scale = theta.w2 / theta.w4
    return {
        d: gold_scale * ratio(f.ga, f.gd) - rock_scale * ratio(f.ra, f.rd)
        for d, f in ((d, state.dirs[d]) for d in CARDINALS)
    }


def direction_probabilities(theta: Theta, state: GameStateFeatures) -> dict[Direction, float]:
    """Softmax of the utilities over open directions; blocked ones get exactly 0."""
    utilities = direction_utilities(theta, state)
    open_dirs = state.open_directions()
    if not open_dirs:
        raise BlockedError("all directions blocked")
    probs = softmax([utilities[d] for d in open_dirs])
    out = {d: 0.0 for d in CARDINALS}
    out.update(zip(open_dirs, probs.tolist()))
    return out


def sample_decision(theta: Theta, state: GameStateFeatures, rng: np.random.Generator) -> Decision:
    if not state.open_directions():
        raise BlockedError("all directions blocked")
    if rng.random() >= move_probability(theta, state):
        return Decision(0, Direction.NONE)
    probs = direction_probabilities(theta, state)
    weights = np.array([probs[d] for d in CARDINALS])
    idx = rng.choice(len(CARDINALS), p=weights / weights.sum())
    return Decision(1, CARDINALS[idx])
