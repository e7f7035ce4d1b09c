"""Synthetic decision datasets.

Game states are i.i.d. draws from a uniform feature prior (``direct`` mode) or
are extracted from randomly generated maps (``map`` mode); decisions are then
sampled from a ground-truth :class:`~tendency_lab.decision_model.Theta`.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from ._io import atomic_write
from .decision_model import Decision, Theta, sample_decision
from .gridworld import (
    CARDINALS,
    Direction,
    DirectionFeatures,
    GameStateFeatures,
    extract_features,
    generate_map,
)

MODES = ("direct", "map")
COUNT_SCOPES = ("global", "direction")


class DatasetError(ValueError):
    """A dataset file or record failed validation."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class MapConfig:
    width: int = 21
    height: int = 21
    density: Mapping[str, float] = field(
        default_factory=lambda: {"road": 0.55, "rock": 0.3, "gold": 0.1, "obstacle": 0.05}
    )
    radius: int = 10


@dataclass(frozen=True)
class GeneratorConfig:
    """Settings of the game-state prior.

    With ``count_scope="global"`` the global gold/rock counts are uniform over
    ``gold_range``/``rock_range`` and each is split uniformly at random over
    the four directions; with ``"direction"`` every directional count is
    uniform over the range on its own. Mean distances are uniform over
    ``distance_range`` wherever the matching count is positive.
    """

    n: int = 5000
    seed: int = 0
    mode: str = "direct"
    count_scope: str = "global"
    gold_range: tuple[int, int] = (0, 60)
    rock_range: tuple[int, int] = (0, 40)
    distance_range: tuple[float, float] = (1.0, 15.0)
    obstacle_prob: float = 0.1
    map: MapConfig = field(default_factory=MapConfig)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be a positive integer")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.count_scope not in COUNT_SCOPES:
            raise ValueError(f"count_scope must be one of {COUNT_SCOPES}")
        for name in ("gold_range", "rock_range"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo or int(lo) != lo or int(hi) != hi:
                raise ValueError(f"{name} must be integers 0 <= lo <= hi")
        lo, hi = self.distance_range
        if lo < 1 or hi < lo:
            raise ValueError("distance_range must satisfy 1 <= lo <= hi")
        if not (0.0 <= self.obstacle_prob < 1.0):
            raise ValueError("obstacle_prob must lie in [0, 1)")

    def to_dict(self) -> dict:
        data = asdict(self)
        data["map"]["density"] = dict(self.map.density)
        for key in ("gold_range", "rock_range", "distance_range"):
            data[key] = list(data[key])
        return data


@dataclass(frozen=True)
class DatasetRecord:
    index: int
    state: GameStateFeatures
    decision: Decision


class Dataset(Sequence[DatasetRecord]):
    """Immutable ordered collection of records with a packed array view."""

    def __init__(self, records: Iterable[DatasetRecord] = ()):
        self._records = tuple(records)

    def __len__(self) -> int:
        return len(self._records)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return Dataset(self._records[idx])
        return self._records[idx]

    def __iter__(self) -> Iterator[DatasetRecord]:
        return iter(self._records)

    def __repr__(self) -> str:
        return f"Dataset(n={len(self)})"

    @cached_property
    def packed(self) -> "PackedData":
        return PackedData.from_records(self._records)


@dataclass(frozen=True)
class PackedData:
    """Column arrays consumed by the likelihood kernels.

    The move term depends on a record only through ``(ga, ra, m)``, so records
    are pooled into unique ``(ga, ra)`` cells with move/stay counts. The
    direction term only involves movers: ``choice`` indexes ``CARDINALS`` and
    ``gold_ratio``/``rock_ratio`` are amount/distance with the zero guard
    already applied.
    """

    cell_ga: np.ndarray
    cell_ra: np.ndarray
    n_move: np.ndarray
    n_stay: np.ndarray
    choice: np.ndarray
    gold_ratio: np.ndarray
    rock_ratio: np.ndarray
    is_open: np.ndarray

    @classmethod
    def from_records(cls, records: Sequence[DatasetRecord]) -> "PackedData":
        n = len(records)
        ga = np.array([r.state.ga for r in records], dtype=float)
        ra = np.array([r.state.ra for r in records], dtype=float)
        move = np.array([r.decision.move for r in records], dtype=float)
        pairs = np.stack([ga, ra], axis=1) if n else np.empty((0, 2))
        cells, inverse = np.unique(pairs, axis=0, return_inverse=True)
        inverse = np.asarray(inverse).reshape(-1)
        n_move = np.bincount(inverse, weights=move, minlength=len(cells))
        n_stay = np.bincount(inverse, weights=1.0 - move, minlength=len(cells))

        movers = [r for r in records if r.decision.move]
        m = len(movers)
        choice = np.empty(m, dtype=np.int32)
        gold = np.zeros((m, 4))
        rock = np.zeros((m, 4))
        is_open = np.zeros((m, 4), dtype=np.int8)
        for i, rec in enumerate(movers):
            choice[i] = CARDINALS.index(rec.decision.direction)
            for j, d in enumerate(CARDINALS):
                f = rec.state.dirs[d]
                gold[i, j] = f.ga / f.gd if f.ga > 0 and f.gd > 0 else 0.0
                rock[i, j] = f.ra / f.rd if f.ra > 0 and f.rd > 0 else 0.0
                is_open[i, j] = 1 - f.oa
        return cls(
            np.ascontiguousarray(cells[:, 0]),
            np.ascontiguousarray(cells[:, 1]),
            n_move,
            n_stay,
            choice,
            gold,
            rock,
            is_open,
        )


def _draw_obstacles(p_obs: float, rng: np.random.Generator) -> list[int]:
    while True:
        oa = [int(rng.random() < p_obs) for _ in CARDINALS]
        if not all(oa):
            return oa


def _split_uniformly(total: int, rng: np.random.Generator) -> list[int]:
    # uniform composition of `total` into 4 non-negative parts (stars and bars)
    bars = np.sort(rng.choice(total + 3, size=3, replace=False))
    edges = [-1, *bars.tolist(), total + 3]
    return [edges[k + 1] - edges[k] - 1 for k in range(4)]


def _draw_counts(lo_hi: tuple[int, int], scope: str, rng: np.random.Generator) -> list[int]:
    lo, hi = int(lo_hi[0]), int(lo_hi[1])
    if scope == "global":
        return _split_uniformly(int(rng.integers(lo, hi + 1)), rng)
    return [int(rng.integers(lo, hi + 1)) for _ in CARDINALS]


def sample_game_state(config: GeneratorConfig, rng: np.random.Generator) -> GameStateFeatures:
    if config.mode == "map":
        mc = config.map
        game_map = generate_map(mc.width, mc.height, mc.density, int(rng.integers(2**63)))
        return extract_features(game_map, mc.radius)

    oa = _draw_obstacles(config.obstacle_prob, rng)
    gold = _draw_counts(config.gold_range, config.count_scope, rng)
    rock = _draw_counts(config.rock_range, config.count_scope, rng)
    dlo, dhi = config.distance_range
    dirs = {}
    for j, d in enumerate(CARDINALS):
        gd = float(rng.uniform(dlo, dhi)) if gold[j] > 0 else 0.0
        rd = float(rng.uniform(dlo, dhi)) if rock[j] > 0 else 0.0
        dirs[d] = DirectionFeatures(ga=float(gold[j]), ra=float(rock[j]), gd=gd, rd=rd, oa=oa[j])
    return GameStateFeatures.from_directions(dirs)


def generate_dataset(theta: Theta, config: GeneratorConfig) -> Dataset:
    rng = np.random.default_rng(config.seed)
    records = []
    for i in range(1, config.n + 1):
        state = sample_game_state(config, rng)
        records.append(DatasetRecord(i, state, sample_decision(theta, state, rng)))
    return Dataset(records)


# -- JSON-lines file format ---------------------------------------------------


def _num(value: float):
    return int(value) if float(value).is_integer() else float(value)


def record_to_dict(record: DatasetRecord) -> dict:
    st = record.state
    return {
        "i": record.index,
        "m": record.decision.move,
        "d": record.decision.direction.value,
        "ga": _num(st.ga),
        "ra": _num(st.ra),
        "dirs": {
            d.value: {
                "ga": _num(st.dirs[d].ga),
                "gd": _num(st.dirs[d].gd),
                "ra": _num(st.dirs[d].ra),
                "rd": _num(st.dirs[d].rd),
                "oa": st.dirs[d].oa,
            }
            for d in CARDINALS
        },
    }


def dumps_dataset(dataset: Iterable[DatasetRecord]) -> str:
    return "".join(json.dumps(record_to_dict(r), separators=(",", ":")) + "\n" for r in dataset)


def save_dataset(dataset: Iterable[DatasetRecord], path: str | Path) -> None:
    atomic_write(path, dumps_dataset(dataset))


def _real(obj: Mapping, key: str, line: int) -> float:
    value = obj.get(key)
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise DatasetError(f"field {key!r} must be a finite number", line)
    return float(value)


def record_from_dict(obj, line: int) -> DatasetRecord:
    if not isinstance(obj, dict):
        raise DatasetError("record must be a JSON object", line)
    index = obj.get("i")
    if isinstance(index, bool) or not isinstance(index, int) or index < 1:
        raise DatasetError("field 'i' must be a positive integer", line)
    move = obj.get("m")
    if move not in (0, 1) or isinstance(move, bool):
        raise DatasetError("field 'm' must be 0 or 1", line)
    try:
        direction = Direction(obj.get("d"))
    except ValueError:
        raise DatasetError("field 'd' must be one of N, S, E, W, X", line) from None
    raw_dirs = obj.get("dirs")
    if not isinstance(raw_dirs, dict) or set(raw_dirs) != {d.value for d in CARDINALS}:
        raise DatasetError("field 'dirs' must have exactly the keys N, S, E, W", line)
    dirs = {}
    for d in CARDINALS:
        entry = raw_dirs[d.value]
        if not isinstance(entry, dict):
            raise DatasetError(f"dirs.{d.value} must be an object", line)
        oa = entry.get("oa")
        if oa not in (0, 1) or isinstance(oa, bool):
            raise DatasetError(f"dirs.{d.value}.oa must be 0 or 1", line)
        try:
            dirs[d] = DirectionFeatures(
                ga=_real(entry, "ga", line),
                ra=_real(entry, "ra", line),
                gd=_real(entry, "gd", line),
                rd=_real(entry, "rd", line),
                oa=oa,
            )
        except ValueError as exc:
            if isinstance(exc, DatasetError):
                raise
            raise DatasetError(f"dirs.{d.value}: {exc}", line) from None
    try:
        state = GameStateFeatures(ga=_real(obj, "ga", line), ra=_real(obj, "ra", line), dirs=dirs)
        decision = Decision(move, direction)
    except DatasetError:
        raise
    except ValueError as exc:
        raise DatasetError(str(exc), line) from None
    if not state.open_directions():
        raise DatasetError("all directions blocked", line)
    if move == 1 and state.dirs[direction].oa == 1:
        raise DatasetError(f"chosen direction {direction.value} is blocked", line)
    return DatasetRecord(index, state, decision)


def load_dataset(path: str | Path) -> Dataset:
    """Read and validate a JSON-lines dataset; errors cite 1-based line numbers."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DatasetError(f"cannot read dataset {path}: {exc}") from exc
    records = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"invalid JSON ({exc.msg})", lineno) from None
        rec = record_from_dict(obj, lineno)
        if rec.index != len(records) + 1:
            raise DatasetError(f"expected index {len(records) + 1}, got {rec.index}", lineno)
        records.append(rec)
    return Dataset(records)
