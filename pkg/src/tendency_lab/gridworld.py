"""Tile maps and the situational features extracted around the player.

Coordinates are ``(x, y)`` with ``x`` the column and ``y`` the row; North is
``y - 1``. Features are computed geometrically: every Gold/Rock tile within a
Chebyshev radius of the player is assigned to exactly one of four 90 degree
cones, with diagonal ties going to the vertical (North/South) cone.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np


class Tile(enum.Enum):
    ROAD = "."
    ROCK = "R"
    GOLD = "G"
    OBSTACLE = "#"


class Direction(enum.Enum):
    NORTH = "N"
    SOUTH = "S"
    EAST = "E"
    WEST = "W"
    NONE = "X"


#: Cardinal directions in the fixed order used for arrays throughout the package.
CARDINALS = (Direction.NORTH, Direction.SOUTH, Direction.EAST, Direction.WEST)

_OFFSETS = {
    Direction.NORTH: (0, -1),
    Direction.SOUTH: (0, 1),
    Direction.EAST: (1, 0),
    Direction.WEST: (-1, 0),
}


class MapError(ValueError):
    """Raised for invalid maps, map files or unsatisfiable generator settings."""


@dataclass(frozen=True)
class DirectionFeatures:
    ga: float = 0.0
    ra: float = 0.0
    gd: float = 0.0
    rd: float = 0.0
    oa: int = 0

    def __post_init__(self):
        for name in ("ga", "ra", "gd", "rd"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {value!r}")
        if self.oa not in (0, 1):
            raise ValueError(f"oa must be 0 or 1, got {self.oa!r}")
        for count, dist, label in ((self.ga, self.gd, "gold"), (self.ra, self.rd, "rock")):
            if count > 0 and dist < 1:
                raise ValueError(f"{label} count > 0 requires mean distance >= 1")
            if count == 0 and dist != 0:
                raise ValueError(f"{label} count 0 requires mean distance 0")


@dataclass(frozen=True)
class GameStateFeatures:
    """Feature vector of one game state.

    ``dirs`` maps each cardinal direction to its :class:`DirectionFeatures`;
    ``ga``/``ra`` are the global gold/rock counts and must equal the sums of
    the directional counts. A fully blocked state is representable; generators
    never produce one and the dataset loader rejects it.
    """

    ga: float
    ra: float
    dirs: Mapping[Direction, DirectionFeatures] = field(default_factory=dict)

    def __post_init__(self):
        if set(self.dirs) != set(CARDINALS):
            raise ValueError("dirs must cover exactly N, S, E, W")
        for name in ("ga", "ra"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {value!r}")
        ga_sum = sum(self.dirs[d].ga for d in CARDINALS)
        ra_sum = sum(self.dirs[d].ra for d in CARDINALS)
        if not math.isclose(self.ga, ga_sum, rel_tol=1e-9, abs_tol=1e-9):
            raise ValueError(f"global ga {self.ga} != sum of directional ga {ga_sum}")
        if not math.isclose(self.ra, ra_sum, rel_tol=1e-9, abs_tol=1e-9):
            raise ValueError(f"global ra {self.ra} != sum of directional ra {ra_sum}")

    @classmethod
    def from_directions(cls, dirs: Mapping[Direction, DirectionFeatures]) -> "GameStateFeatures":
        """Build a state whose global counts are the directional sums."""
        dirs = {d: dirs.get(d, DirectionFeatures()) for d in CARDINALS}
        return cls(
            ga=float(sum(dirs[d].ga for d in CARDINALS)),
            ra=float(sum(dirs[d].ra for d in CARDINALS)),
            dirs=dirs,
        )

    def open_directions(self) -> list[Direction]:
        return [d for d in CARDINALS if self.dirs[d].oa == 0]

    def to_dict(self) -> dict:
        return {
            "ga": self.ga,
            "ra": self.ra,
            "dirs": {
                d.value: {
                    "ga": self.dirs[d].ga,
                    "gd": self.dirs[d].gd,
                    "ra": self.dirs[d].ra,
                    "rd": self.dirs[d].rd,
                    "oa": self.dirs[d].oa,
                }
                for d in CARDINALS
            },
        }


@dataclass(frozen=True)
class GameMap:
    width: int
    height: int
    cells: tuple[tuple[Tile, ...], ...]
    player: tuple[int, int]

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise MapError("width and height must be positive")
        if len(self.cells) != self.height or any(len(row) != self.width for row in self.cells):
            raise MapError(f"cells must be a {self.height}x{self.width} grid")
        x, y = self.player
        if not (0 <= x < self.width and 0 <= y < self.height):
            raise MapError(f"player {self.player} outside the map")
        if self.cells[y][x] is not Tile.ROAD:
            raise MapError("player must stand on a road tile")

    def tile(self, x: int, y: int) -> Tile:
        return self.cells[y][x]

    def rotate_clockwise(self) -> "GameMap":
        """Rotate the map by 90 degrees so that North becomes East."""
        h = self.height
        cells = tuple(
            tuple(self.cells[h - 1 - c][r] for c in range(h)) for r in range(self.width)
        )
        x, y = self.player
        return GameMap(width=h, height=self.width, cells=cells, player=(h - 1 - y, x))

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "player": list(self.player),
            "rows": ["".join(t.value for t in row) for row in self.cells],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "GameMap":
        try:
            width = int(data["width"])
            height = int(data["height"])
            px, py = data["player"]
            rows = data["rows"]
        except (KeyError, TypeError, ValueError) as exc:
            raise MapError(f"malformed map: {exc}") from exc
        try:
            cells = tuple(tuple(Tile(ch) for ch in row) for row in rows)
        except ValueError as exc:
            raise MapError(f"unknown tile symbol: {exc}") from exc
        return cls(width=width, height=height, cells=cells, player=(int(px), int(py)))


def save_map(game_map: GameMap, path: str | Path) -> None:
    Path(path).write_text(json.dumps(game_map.to_dict(), indent=2) + "\n")


def load_map(path: str | Path) -> GameMap:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MapError(f"cannot read map {path}: {exc}") from exc
    return GameMap.from_dict(data)


_KIND_ORDER = (Tile.ROAD, Tile.ROCK, Tile.GOLD, Tile.OBSTACLE)


def generate_map(
    width: int,
    height: int,
    density: Mapping[Tile | str, float],
    rng_seed: int,
    max_attempts: int = 100,
) -> GameMap:
    """Draw a random map with i.i.d. tiles and a player on a non-walled-in road cell.

    ``density`` maps tile kinds (or their symbols / names) to probabilities
    summing to one. Maps are resampled until a valid player cell exists.
    """
    if width < 3 or height < 3:
        raise MapError("width and height must be >= 3")
    probs = _normalise_density(density)
    rng = np.random.default_rng(rng_seed)
    kinds = np.array(_KIND_ORDER, dtype=object)
    for _ in range(max_attempts):
        grid = rng.choice(len(kinds), size=(height, width), p=probs)
        candidates = [
            (x, y)
            for y in range(height)
            for x in range(width)
            if kinds[grid[y, x]] is Tile.ROAD and not _walled_in(grid, x, y)
        ]
        if candidates:
            x, y = candidates[rng.integers(len(candidates))]
            cells = tuple(tuple(kinds[k] for k in row) for row in grid)
            return GameMap(width=width, height=height, cells=cells, player=(x, y))
    raise MapError("unsatisfiable map constraints")


def _walled_in(grid: np.ndarray, x: int, y: int) -> bool:
    obstacle = _KIND_ORDER.index(Tile.OBSTACLE)
    height, width = grid.shape
    for dx, dy in _OFFSETS.values():
        nx, ny = x + dx, y + dy
        # off-map neighbours are not obstacle tiles
        if not (0 <= nx < width and 0 <= ny < height) or grid[ny, nx] != obstacle:
            return False
    return True


def _normalise_density(density: Mapping[Tile | str, float]) -> np.ndarray:
    probs = np.zeros(len(_KIND_ORDER))
    for key, value in density.items():
        tile = _parse_tile(key)
        if not (0.0 <= value <= 1.0):
            raise MapError(f"density for {tile.name} must lie in [0, 1]")
        probs[_KIND_ORDER.index(tile)] = value
    if not math.isclose(probs.sum(), 1.0, abs_tol=1e-9):
        raise MapError(f"densities must sum to 1, got {probs.sum()}")
    return probs / probs.sum()


def _parse_tile(key: Tile | str) -> Tile:
    if isinstance(key, Tile):
        return key
    try:
        return Tile(key)
    except ValueError:
        pass
    try:
        return Tile[key.upper()]
    except KeyError:
        raise MapError(f"unknown tile kind {key!r}") from None


def cone_of(dx: int, dy: int) -> Direction:
    """Direction cone of a displacement; diagonals belong to North/South."""
    if dx == 0 and dy == 0:
        raise ValueError("the player cell has no direction")
    if abs(dx) <= abs(dy):
        return Direction.NORTH if dy < 0 else Direction.SOUTH
    return Direction.EAST if dx > 0 else Direction.WEST


def extract_features(game_map: GameMap, radius: int = 10) -> GameStateFeatures:
    """Count Gold/Rock tiles per direction cone around the player.

    Distances are Manhattan; a direction is blocked (``oa = 1``) iff the
    adjacent cell in that direction is an obstacle.
    """
    if radius < 1:
        raise ValueError("radius must be positive")
    px, py = game_map.player
    counts = {d: {Tile.GOLD: 0, Tile.ROCK: 0} for d in CARDINALS}
    dist_sums = {d: {Tile.GOLD: 0, Tile.ROCK: 0} for d in CARDINALS}
    for y in range(max(0, py - radius), min(game_map.height, py + radius + 1)):
        for x in range(max(0, px - radius), min(game_map.width, px + radius + 1)):
            tile = game_map.cells[y][x]
            if tile is not Tile.GOLD and tile is not Tile.ROCK:
                continue
            dx, dy = x - px, y - py
            if dx == 0 and dy == 0:
                continue
            cone = cone_of(dx, dy)
            counts[cone][tile] += 1
            dist_sums[cone][tile] += abs(dx) + abs(dy)

    dirs = {}
    for d in CARDINALS:
        ng, nr = counts[d][Tile.GOLD], counts[d][Tile.ROCK]
        dx, dy = _OFFSETS[d]
        nx, ny = px + dx, py + dy
        blocked = (
            0 <= nx < game_map.width
            and 0 <= ny < game_map.height
            and game_map.cells[ny][nx] is Tile.OBSTACLE
        )
        dirs[d] = DirectionFeatures(
            ga=float(ng),
            ra=float(nr),
            gd=dist_sums[d][Tile.GOLD] / ng if ng else 0.0,
            rd=dist_sums[d][Tile.ROCK] / nr if nr else 0.0,
            oa=int(blocked),
        )
    return GameStateFeatures.from_directions(dirs)
