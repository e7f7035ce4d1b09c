import json
import math

import numpy as np
import pytest
from scipy import stats

from tendency_lab.datagen import (
    Dataset,
    DatasetError,
    GeneratorConfig,
    MapConfig,
    dumps_dataset,
    generate_dataset,
    load_dataset,
    record_to_dict,
    sample_game_state,
    save_dataset,
)
from tendency_lab.decision_model import PRESETS, move_probability
from tendency_lab.gridworld import CARDINALS, Direction

ALPHA = 0.01


def states(config, n, seed=0):
    rng = np.random.default_rng(seed)
    return [sample_game_state(config, rng) for _ in range(n)]


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(n=0),
        dict(mode="grid"),
        dict(count_scope="tile"),
        dict(gold_range=(5, 2)),
        dict(rock_range=(-1, 3)),
        dict(distance_range=(0.5, 3.0)),
        dict(obstacle_prob=1.0),
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        GeneratorConfig(**kwargs)


def test_collapsed_ranges():
    cfg = GeneratorConfig(
        count_scope="direction", gold_range=(5, 5), rock_range=(0, 0),
        distance_range=(2.0, 2.0), obstacle_prob=0.0,
    )
    for s in states(cfg, 50):
        assert (s.ga, s.ra) == (20, 0)
        assert all(s.dirs[d].gd == 2.0 and s.dirs[d].rd == 0.0 for d in CARDINALS)


def test_no_obstacles_means_all_open():
    for s in states(GeneratorConfig(obstacle_prob=0.0), 300):
        assert len(s.open_directions()) == 4


def test_never_fully_blocked():
    for s in states(GeneratorConfig(obstacle_prob=0.9), 300):
        assert s.open_directions()


def test_states_are_deterministic():
    assert states(GeneratorConfig(), 100, seed=3) == states(GeneratorConfig(), 100, seed=3)
    assert states(GeneratorConfig(), 100, seed=3) != states(GeneratorConfig(), 100, seed=4)


def test_single_record():
    ds = generate_dataset(PRESETS["rock_averse"], GeneratorConfig(n=1))
    assert len(ds) == 1 and ds[0].index == 1


def test_indices_and_consistency(small_dataset):
    assert [r.index for r in small_dataset] == list(range(1, len(small_dataset) + 1))
    for r in small_dataset:
        if r.decision.move:
            assert r.state.dirs[r.decision.direction].oa == 0
        else:
            assert r.decision.direction is Direction.NONE


@pytest.mark.parametrize("preset", ["rock_agnostic", "rock_averse"])
def test_move_rate_matches_analytic(preset, agnostic_5000, averse_5000):
    ds = agnostic_5000 if preset == "rock_agnostic" else averse_5000
    theta = PRESETS[preset]
    p = np.array([move_probability(theta, r.state) for r in ds])
    rate = np.mean([r.decision.move for r in ds])
    se = math.sqrt(np.sum(p * (1 - p))) / len(ds)
    assert abs(rate - p.mean()) <= 3 * se


# -- marginal uniformity ----------------------------------------------------


def _chi2_uniform_ints(values, lo, hi):
    counts = np.bincount(np.asarray(values, dtype=int) - lo, minlength=hi - lo + 1)
    return stats.chisquare(counts).pvalue


def _chi2_uniform_reals(values, lo, hi, bins=20):
    counts, _ = np.histogram(values, bins=bins, range=(lo, hi))
    return stats.chisquare(counts).pvalue


def test_global_count_marginals_uniform():
    cfg = GeneratorConfig()
    sample = states(cfg, 10_000, seed=1)
    assert _chi2_uniform_ints([s.ga for s in sample], *cfg.gold_range) > ALPHA
    assert _chi2_uniform_ints([s.ra for s in sample], *cfg.rock_range) > ALPHA


def test_direction_count_marginals_uniform():
    cfg = GeneratorConfig(count_scope="direction", gold_range=(0, 50), rock_range=(0, 50))
    sample = states(cfg, 10_000, seed=2)
    for d in CARDINALS:
        assert _chi2_uniform_ints([s.dirs[d].ga for s in sample], 0, 50) > ALPHA
        assert _chi2_uniform_ints([s.dirs[d].ra for s in sample], 0, 50) > ALPHA


def test_distance_marginals_uniform():
    cfg = GeneratorConfig()
    sample = states(cfg, 10_000, seed=3)
    gd = [s.dirs[d].gd for s in sample for d in CARDINALS if s.dirs[d].ga > 0]
    rd = [s.dirs[d].rd for s in sample for d in CARDINALS if s.dirs[d].ra > 0]
    assert _chi2_uniform_reals(gd[:10_000], *cfg.distance_range) > ALPHA
    assert _chi2_uniform_reals(rd[:10_000], *cfg.distance_range) > ALPHA


def test_global_split_is_uniform_composition():
    # every composition of 3 into 4 parts is equally likely (20 of them)
    cfg = GeneratorConfig(gold_range=(3, 3), rock_range=(0, 0), obstacle_prob=0.0)
    sample = states(cfg, 10_000, seed=4)
    keys = [tuple(int(s.dirs[d].ga) for d in CARDINALS) for s in sample]
    uniq, counts = np.unique(keys, axis=0, return_counts=True)
    assert len(uniq) == 20
    assert stats.chisquare(counts).pvalue > ALPHA


def test_obstacle_rate():
    cfg = GeneratorConfig(obstacle_prob=0.1)
    sample = states(cfg, 10_000, seed=5)
    oa = np.array([[s.dirs[d].oa for d in CARDINALS] for s in sample])
    # rejection of the all-blocked pattern changes the rate by ~1e-4 only
    assert abs(oa.mean() - 0.1) < 3 * math.sqrt(0.09 / oa.size) + 1e-3


def test_map_mode_produces_valid_states():
    cfg = GeneratorConfig(n=30, mode="map", map=MapConfig(width=11, height=11, radius=5))
    ds = generate_dataset(PRESETS["rock_agnostic"], cfg)
    assert len(ds) == 30
    assert all(r.state.open_directions() for r in ds)


# -- JSON lines -------------------------------------------------------------


def test_round_trip(tmp_path, small_dataset):
    path = tmp_path / "d.jsonl"
    save_dataset(small_dataset, path)
    loaded = load_dataset(path)
    assert list(loaded) == list(small_dataset)
    assert dumps_dataset(loaded) == path.read_text()


def test_record_format(small_dataset):
    obj = record_to_dict(small_dataset[0])
    assert set(obj) == {"i", "m", "d", "ga", "ra", "dirs"}
    assert set(obj["dirs"]) == {"N", "S", "E", "W"}
    assert set(obj["dirs"]["N"]) == {"ga", "gd", "ra", "rd", "oa"}


def _write(tmp_path, records):
    path = tmp_path / "bad.jsonl"
    path.write_text("".join(json.dumps(r) + "\n" for r in records))
    return path


def _valid(small_dataset, k):
    return record_to_dict(small_dataset[k])


def _mover(small_dataset):
    return next(r for r in small_dataset if r.decision.move)


@pytest.mark.parametrize(
    "corrupt, message",
    [
        (lambda o: o.update(m=2), "'m'"),
        (lambda o: o.update(d="Q"), "'d'"),
        (lambda o: o["dirs"].pop("N"), "dirs"),
        (lambda o: o["dirs"]["S"].update(ga=-1), "non-negative"),
        (lambda o: o.update(ga=o["ga"] + 1), "global ga"),
        (lambda o: o.update(m=0), "NoDirection"),
        (lambda o: [o["dirs"][k].update(oa=1) for k in "NSEW"], "all directions blocked"),
    ],
)
def test_loader_rejects_with_line_number(tmp_path, small_dataset, corrupt, message):
    mover = record_to_dict(_mover(small_dataset))
    rows = [dict(_valid(small_dataset, 0), i=1), dict(_valid(small_dataset, 1), i=2), dict(mover, i=3)]
    corrupt(rows[2])
    with pytest.raises(DatasetError, match=message) as info:
        load_dataset(_write(tmp_path, rows))
    assert info.value.line == 3
    assert str(info.value).startswith("line 3:")


def test_loader_rejects_blocked_choice(tmp_path, small_dataset):
    mover = record_to_dict(_mover(small_dataset))
    mover["i"] = 1
    mover["dirs"][mover["d"]]["oa"] = 1
    for k in "NSEW":
        if k != mover["d"]:
            mover["dirs"][k]["oa"] = 0
    with pytest.raises(DatasetError, match="chosen direction .* is blocked"):
        load_dataset(_write(tmp_path, [mover]))


def test_loader_rejects_bad_json_and_indices(tmp_path, small_dataset):
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps(_valid(small_dataset, 0)) + "\n{oops\n")
    with pytest.raises(DatasetError, match="line 2"):
        load_dataset(path)
    path.write_text(json.dumps(dict(_valid(small_dataset, 0), i=2)) + "\n")
    with pytest.raises(DatasetError, match="expected index 1"):
        load_dataset(path)
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "missing.jsonl")


def test_dataset_is_an_immutable_sequence(small_dataset):
    assert isinstance(small_dataset[:5], Dataset)
    assert len(small_dataset[:5]) == 5
    with pytest.raises(TypeError):
        small_dataset[0] = small_dataset[1]


def test_packed_cells_cover_all_records(small_dataset):
    packed = small_dataset.packed
    assert packed.n_move.sum() + packed.n_stay.sum() == len(small_dataset)
    assert len(packed.choice) == sum(r.decision.move for r in small_dataset)
    assert np.all(packed.is_open[np.arange(len(packed.choice)), packed.choice] == 1)
