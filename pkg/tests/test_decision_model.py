import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_state, random_theta
from tendency_lab.decision_model import (
    PRESETS,
    BlockedError,
    ChoiceSpec,
    Decision,
    Theta,
    direction_probabilities,
    direction_utilities,
    generic_choice_probabilities,
    move_logit,
    move_probability,
    resolve_theta,
    sample_decision,
    softmax,
)
from tendency_lab.gridworld import CARDINALS, Direction, DirectionFeatures, GameStateFeatures

N, S, E, W = CARDINALS
AGNOSTIC = PRESETS["rock_agnostic"]


def state(**dirs):
    return GameStateFeatures.from_directions({Direction[k]: v for k, v in dirs.items()})


def totals(ga, ra):
    # global counts concentrated in one open direction
    return state(NORTH=DirectionFeatures(ga=ga, gd=2.0 if ga else 0.0, ra=ra, rd=3.0 if ra else 0.0))


# -- Theta ------------------------------------------------------------------


@pytest.mark.parametrize("bad", [dict(w1=0.0), dict(w3=-1.0), dict(delta1=math.nan), dict(w2=math.inf)])
def test_theta_validation(bad):
    values = AGNOSTIC.to_dict() | bad
    with pytest.raises(ValueError):
        Theta(**values)


def test_presets_hold_published_settings():
    assert AGNOSTIC == Theta(0.90, 0.30, 1.13, 1.00, 20.0, 60.0)
    assert PRESETS["rock_averse"] == Theta(0.95, 0.80, 3.17, 1.14, 50.0, 20.0)


def test_resolve_theta_sources(tmp_path):
    path = tmp_path / "theta.json"
    path.write_text(json.dumps(AGNOSTIC.to_dict()))
    assert resolve_theta("rock_agnostic") == AGNOSTIC
    assert resolve_theta(str(path)) == AGNOSTIC
    assert resolve_theta(AGNOSTIC.to_dict()) == AGNOSTIC
    assert Theta.from_array(AGNOSTIC.as_array()) == AGNOSTIC
    with pytest.raises(ValueError, match="unknown preset"):
        resolve_theta("rock_curious")
    with pytest.raises(ValueError, match="missing"):
        Theta.from_dict({"w1": 1.0})


def test_decision_invariant():
    with pytest.raises(ValueError):
        Decision(0, N)
    with pytest.raises(ValueError):
        Decision(1, Direction.NONE)
    with pytest.raises(ValueError):
        Decision(2, N)


# -- generic choice ---------------------------------------------------------


def test_generic_identical_outcomes():
    spec = ChoiceSpec([1.0, -2.0], [0.5, 0.5], [[1.0, 2.0], [1.0, 2.0]])
    np.testing.assert_array_equal(generic_choice_probabilities(spec), [0.5, 0.5])


def test_generic_single_outcome():
    np.testing.assert_array_equal(generic_choice_probabilities(ChoiceSpec([2.0], [1.0], [[7.0]])), [1.0])


def test_generic_known_scores():
    spec = ChoiceSpec([1.0], [0.0], [[0.0], [math.log(3)]])
    np.testing.assert_allclose(generic_choice_probabilities(spec), [0.25, 0.75], atol=1e-15)


def test_generic_errors():
    with pytest.raises(ValueError, match="no outcomes"):
        generic_choice_probabilities(ChoiceSpec([1.0], [0.0], []))
    with pytest.raises(ValueError):
        ChoiceSpec([1.0, 2.0], [0.0], [[1.0, 1.0]])
    with pytest.raises(ValueError, match="finite"):
        generic_choice_probabilities(ChoiceSpec([1.0], [0.0], [[math.inf]]))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32))
def test_two_outcome_choice_is_the_move_sigmoid(seed):
    rng = np.random.default_rng(seed)
    theta, s = random_theta(rng), random_state(rng)
    # move outcome carries the features; the stay outcome sits at the thresholds
    spec = ChoiceSpec(
        weights=[-theta.w1, theta.w2],
        thresholds=[theta.delta1, theta.delta2],
        features=[[s.ga, s.ra], [theta.delta1, theta.delta2]],
    )
    assert generic_choice_probabilities(spec)[0] == move_probability(theta, s)


# -- move decision ----------------------------------------------------------


def test_move_probability_at_thresholds():
    assert move_probability(AGNOSTIC, totals(20, 60)) == 0.5


def test_move_probability_more_gold():
    assert move_probability(AGNOSTIC, totals(30, 60)) == pytest.approx(1.2339e-4, rel=1e-4)
    assert move_probability(AGNOSTIC, totals(30, 60)) == pytest.approx(1 / (1 + math.exp(9)), rel=1e-12)


def test_move_probability_limit():
    assert move_probability(AGNOSTIC, totals(10**6, 0)) == 0.0


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32), st.floats(0.5, 20))
def test_move_probability_monotone(seed, step):
    rng = np.random.default_rng(seed)
    theta = random_theta(rng)
    ga, ra = rng.uniform(0, 60, size=2)
    # stay away from saturation where the sigmoid rounds to 0 or 1
    z = move_logit(theta, totals(ga, ra))
    if abs(z) > 25 or abs(z - theta.w1 * step) > 25 or abs(z + theta.w2 * step) > 25:
        return
    p = move_probability(theta, totals(ga, ra))
    assert move_probability(theta, totals(ga + step, ra)) < p
    assert move_probability(theta, totals(ga, ra + step)) > p


# -- direction decision -----------------------------------------------------

NORTH_SOUTH = dict(
    NORTH=DirectionFeatures(ga=40, gd=4, ra=10, rd=2),
    SOUTH=DirectionFeatures(ga=10, gd=2, ra=40, rd=4),
)


def test_utilities_zero_for_empty_neighbourhood():
    assert all(u == 0 for u in direction_utilities(AGNOSTIC, state()).values())


def test_utilities_example():
    u = direction_utilities(AGNOSTIC, state(**NORTH_SOUTH))
    assert u[N] == pytest.approx(0.9 / 1.13 * 10 - 0.3 * 5, abs=1e-12)
    assert u[N] == pytest.approx(6.4646, abs=1e-4)
    assert u[S] == pytest.approx(0.9823, abs=1e-4)


def test_utility_ratio_invariance():
    a = direction_utilities(AGNOSTIC, state(EAST=DirectionFeatures(ga=6, gd=3)))
    b = direction_utilities(AGNOSTIC, state(EAST=DirectionFeatures(ga=12, gd=6)))
    assert a[E] == b[E]


def test_symmetric_open_directions():
    probs = direction_probabilities(AGNOSTIC, state())
    assert all(p == 0.25 for p in probs.values())


def test_two_way_example():
    s = state(**NORTH_SOUTH, EAST=DirectionFeatures(oa=1), WEST=DirectionFeatures(oa=1))
    probs = direction_probabilities(AGNOSTIC, s)
    u = direction_utilities(AGNOSTIC, s)
    assert probs[N] == pytest.approx(1 / (1 + math.exp(-(u[N] - u[S]))), abs=1e-12)
    assert probs[N] == pytest.approx(0.99585, abs=1e-5)
    assert probs[S] == pytest.approx(0.00415, abs=1e-5)
    assert probs[E] == 0.0 and probs[W] == 0.0


def test_single_open_direction():
    s = state(NORTH=DirectionFeatures(oa=1), SOUTH=DirectionFeatures(oa=1), EAST=DirectionFeatures(oa=1))
    assert direction_probabilities(AGNOSTIC, s)[W] == 1.0


def test_all_blocked():
    s = state(**{d.name: DirectionFeatures(oa=1) for d in CARDINALS})
    with pytest.raises(BlockedError, match="all directions blocked"):
        direction_probabilities(AGNOSTIC, s)
    with pytest.raises(BlockedError):
        sample_decision(AGNOSTIC, s, np.random.default_rng(0))


def test_normalisation_over_random_pairs():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        theta, s = random_theta(rng), random_state(rng)
        probs = direction_probabilities(theta, s)
        assert abs(sum(probs[d] for d in s.open_directions()) - 1.0) <= 1e-12
        assert all(probs[d] == 0.0 for d in CARDINALS if s.dirs[d].oa == 1)


def test_softmax_overflow_safe():
    np.testing.assert_allclose(softmax([1000.0, 1000.0]), [0.5, 0.5])
    np.testing.assert_allclose(softmax([-1e5, 0.0]), [0.0, 1.0])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=6), st.floats(-100, 100))
def test_softmax_shift_invariance(scores, shift):
    np.testing.assert_allclose(softmax(np.array(scores) + shift), softmax(scores), rtol=0, atol=1e-12)


def _with(s, d, **changes):
    dirs = dict(s.dirs)
    f = dirs[d]
    dirs[d] = DirectionFeatures(**{**f.__dict__, **changes})
    return GameStateFeatures.from_directions(dirs)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32))
def test_direction_monotone(seed):
    rng = np.random.default_rng(seed)
    theta = Theta(*rng.uniform(0.2, 2.0, size=4).tolist(), 0.0, 0.0)
    s = random_state(rng, allow_blocked=False)
    d = CARDINALS[rng.integers(4)]
    s = _with(s, d, ga=5.0, gd=3.0, ra=5.0, rd=3.0)
    p = direction_probabilities(theta, s)[d]
    assert direction_probabilities(theta, _with(s, d, ga=8.0))[d] > p
    assert direction_probabilities(theta, _with(s, d, ra=8.0))[d] < p


# -- sampling ---------------------------------------------------------------


def test_sample_never_moves_when_gold_overwhelms():
    rng = np.random.default_rng(0)
    s = totals(10**5, 0)
    assert {sample_decision(AGNOSTIC, s, rng) for _ in range(200)} == {Decision(0, Direction.NONE)}


def test_sample_always_moves_to_the_only_open_direction():
    rng = np.random.default_rng(0)
    s = state(
        NORTH=DirectionFeatures(oa=1),
        SOUTH=DirectionFeatures(oa=1),
        WEST=DirectionFeatures(oa=1),
        EAST=DirectionFeatures(ra=10**5, rd=1),
    )
    assert {sample_decision(AGNOSTIC, s, rng) for _ in range(200)} == {Decision(1, E)}


def test_sampling_is_deterministic_given_rng():
    s = state(**NORTH_SOUTH)
    a = [sample_decision(AGNOSTIC, s, rng) for rng in [np.random.default_rng(5)] for _ in range(100)]
    b = [sample_decision(AGNOSTIC, s, rng) for rng in [np.random.default_rng(5)] for _ in range(100)]
    assert a == b


def test_empirical_frequencies_match():
    theta = Theta(0.3, 0.2, 1.0, 1.0, 20.0, 30.0)
    s = state(
        NORTH=DirectionFeatures(ga=10, gd=4, ra=5, rd=2),
        SOUTH=DirectionFeatures(ga=5, gd=5),
        EAST=DirectionFeatures(ra=12, rd=3),
        WEST=DirectionFeatures(oa=1),
    )
    rng = np.random.default_rng(99)
    n = 100_000
    outcomes = [sample_decision(theta, s, rng) for _ in range(n)]
    pm = move_probability(theta, s)
    pd = direction_probabilities(theta, s)
    expected = {Direction.NONE: 1 - pm} | {d: pm * pd[d] for d in CARDINALS}
    for d, p in expected.items():
        freq = sum(o.direction is d for o in outcomes) / n
        se = math.sqrt(max(p * (1 - p), 1e-12) / n)
        assert abs(freq - p) <= 3 * se + 1e-12, d
