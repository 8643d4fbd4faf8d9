"""Problem datum for the edge placement model: grid, users, servers, movement
scenarios and the elementary distance / QoS / energy formulas.

All types are immutable. Randomness goes through numpy's PCG64 bit generator
seeded from an explicit :class:`numpy.random.SeedSequence`, so an instance is a
pure function of its sampling arguments.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Optional, Sequence, Tuple, Union

import numpy as np

SCHEMA_VERSION = 1

# The nine movement modes: stay first, then the eight neighbours row by row.
MOVES: Tuple[Tuple[int, int], ...] = ((0, 0),) + tuple(
    (dx, dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dx, dy) != (0, 0)
)


class ConfigError(ValueError):
    """Raised for invalid problem or pipeline configuration."""


class SpatialMode(str, enum.Enum):
    NORMAL = "normal"
    SPECIAL = "special"
    MIXED = "mixed"

    @classmethod
    def parse(cls, value) -> "SpatialMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(f"unknown spatial mode {value!r}") from None


@dataclass(frozen=True)
class GridConfig:
    width: int = 20
    height: int = 20

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ConfigError(f"grid must be at least 1x1, got {self.width}x{self.height}")

    def contains(self, pos: "Position") -> bool:
        return 0 <= pos.x < self.width and 0 <= pos.y < self.height


@dataclass(frozen=True)
class Position:
    x: int
    y: int


@dataclass(frozen=True)
class User:
    id: int
    pos: Position
    request: int

    def __post_init__(self):
        if self.request < 1:
            raise ConfigError(f"user {self.id}: request must be a positive integer")


@dataclass(frozen=True)
class Server:
    id: int
    pos: Position
    energy_budget: float = 396.0
    capacity: float = 24.0

    def __post_init__(self):
        if self.energy_budget <= 0 or self.capacity <= 0:
            raise ConfigError(f"server {self.id}: energy budget and capacity must be positive")


@dataclass(frozen=True)
class MovementScenario:
    """One displacement per user, each drawn from :data:`MOVES`."""

    moves: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        for mv in self.moves:
            if mv not in MOVES:
                raise ConfigError(f"invalid displacement {mv!r}")


@dataclass(frozen=True)
class ModelConstants:
    """Objective and constraint coefficients.

    ``rho`` is either a scalar migration cost charged for every change of
    server (zero on the diagonal) or a full S x S matrix. ``scenario_prob``
    of ``None`` means uniform weights.
    """

    sigma: float = 396.0
    gamma: float = 100.0
    rho: Union[float, Tuple[Tuple[float, ...], ...]] = 10.0
    scenario_prob: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.sigma <= 0 or self.gamma <= 0:
            raise ConfigError("sigma and gamma must be positive")
        if isinstance(self.rho, (int, float)):
            if self.rho < 0:
                raise ConfigError("migration cost must be non-negative")
        else:
            mat = np.asarray(self.rho, dtype=float)
            if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
                raise ConfigError("migration cost matrix must be square")
            if (mat < 0).any() or np.any(np.diag(mat) != 0):
                raise ConfigError("migration costs must be >= 0 with a zero diagonal")
        if self.scenario_prob is not None:
            p = np.asarray(self.scenario_prob, dtype=float)
            if (p < 0).any() or abs(p.sum() - 1.0) > 1e-9:
                raise ConfigError("scenario probabilities must be non-negative and sum to 1")

    def rho_matrix(self, n_servers: int) -> np.ndarray:
        if isinstance(self.rho, (int, float)):
            mat = np.full((n_servers, n_servers), float(self.rho))
            np.fill_diagonal(mat, 0.0)
            return mat
        mat = np.asarray(self.rho, dtype=float)
        if mat.shape != (n_servers, n_servers):
            raise ConfigError(f"migration matrix is {mat.shape}, expected {(n_servers, n_servers)}")
        return mat.copy()

    def probabilities(self, n_scenarios: int) -> np.ndarray:
        if self.scenario_prob is None:
            return np.full(n_scenarios, 1.0 / n_scenarios)
        if len(self.scenario_prob) != n_scenarios:
            raise ConfigError("scenario probability count does not match scenario count")
        return np.asarray(self.scenario_prob, dtype=float)


def manhattan(p: Position, q: Position) -> int:
    return abs(p.x - q.x) + abs(p.y - q.y)


def effective_distance(p: Position, q: Position) -> int:
    """Manhattan distance floored at 1 so coincident cells keep QoS finite."""
    return max(1, manhattan(p, q))


def qos(request, distance, gamma):
    return gamma * request / distance


def energy_cost(request, capacity, sigma):
    return sigma * request / capacity


def apply_move(pos: Position, move: Tuple[int, int], grid: GridConfig) -> Position:
    x = min(max(pos.x + move[0], 0), grid.width - 1)
    y = min(max(pos.y + move[1], 0), grid.height - 1)
    return Position(x, y)


def exact(value) -> Fraction:
    # str() keeps the decimal the user wrote (0.1 -> 1/10, not the binary float)
    return Fraction(str(value)) if isinstance(value, float) else Fraction(value)


@dataclass(frozen=True)
class Instance:
    grid: GridConfig
    users: Tuple[User, ...]
    servers: Tuple[Server, ...]
    scenarios: Tuple[MovementScenario, ...]
    constants: ModelConstants = field(default_factory=ModelConstants)
    seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "users", tuple(self.users))
        object.__setattr__(self, "servers", tuple(self.servers))
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        if not self.users or not self.servers or not self.scenarios:
            raise ConfigError("an instance needs at least one user, server and scenario")
        for k, sc in enumerate(self.scenarios):
            if len(sc.moves) != len(self.users):
                raise ConfigError(f"scenario {k} has {len(sc.moves)} moves for {len(self.users)} users")
        for obj in self.users + self.servers:
            if not self.grid.contains(obj.pos):
                raise ConfigError(f"position {obj.pos} lies outside the grid")
        self.constants.rho_matrix(len(self.servers))
        self.constants.probabilities(len(self.scenarios))

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_servers(self) -> int:
        return len(self.servers)

    @property
    def n_scenarios(self) -> int:
        return len(self.scenarios)

    @property
    def requests(self) -> np.ndarray:
        return np.array([u.request for u in self.users], dtype=np.int64)

    def moved_positions(self, k: int) -> Tuple[Position, ...]:
        sc = self.scenarios[k]
        return tuple(apply_move(u.pos, mv, self.grid) for u, mv in zip(self.users, sc.moves))

    @cached_property
    def stage1_distance(self) -> np.ndarray:
        """U x S effective distances at the initial positions."""
        return np.array(
            [[effective_distance(u.pos, s.pos) for s in self.servers] for u in self.users],
            dtype=np.int64,
        )

    @cached_property
    def stage2_distance(self) -> np.ndarray:
        """K x U x S effective distances after each scenario's moves."""
        out = np.empty((self.n_scenarios, self.n_users, self.n_servers), dtype=np.int64)
        for k in range(self.n_scenarios):
            for i, pos in enumerate(self.moved_positions(k)):
                for j, s in enumerate(self.servers):
                    out[k, i, j] = effective_distance(pos, s.pos)
        return out

    @cached_property
    def container_capacity(self) -> np.ndarray:
        """Largest integer request mass each server's energy budget admits.

        sum(sigma*R/Q) <= E  <=>  sum(R) <= E*Q/sigma, and requests are integers,
        so flooring the exact rational bound loses nothing.
        """
        sigma = exact(self.constants.sigma)
        return np.array(
            [int((exact(s.energy_budget) * exact(s.capacity)) // sigma) for s in self.servers],
            dtype=np.int64,
        )

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        c = self.constants
        rho = c.rho if isinstance(c.rho, (int, float)) else [list(r) for r in c.rho]
        return {
            "version": SCHEMA_VERSION,
            "grid": {"width": self.grid.width, "height": self.grid.height},
            "users": [
                {"id": u.id, "x": u.pos.x, "y": u.pos.y, "request": u.request} for u in self.users
            ],
            "servers": [
                {
                    "id": s.id,
                    "x": s.pos.x,
                    "y": s.pos.y,
                    "energy_budget": s.energy_budget,
                    "capacity": s.capacity,
                }
                for s in self.servers
            ],
            "scenarios": [[list(mv) for mv in sc.moves] for sc in self.scenarios],
            "constants": {
                "sigma": c.sigma,
                "gamma": c.gamma,
                "rho": rho,
                "scenario_prob": None if c.scenario_prob is None else list(c.scenario_prob),
            },
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Instance":
        if d.get("version") != SCHEMA_VERSION:
            raise ConfigError(f"unsupported instance schema version {d.get('version')!r}")
        c = d["constants"]
        rho = c["rho"]
        if not isinstance(rho, (int, float)):
            rho = tuple(tuple(float(v) for v in row) for row in rho)
        prob = c.get("scenario_prob")
        return cls(
            grid=GridConfig(**d["grid"]),
            users=tuple(
                User(u["id"], Position(u["x"], u["y"]), int(u["request"])) for u in d["users"]
            ),
            servers=tuple(
                Server(s["id"], Position(s["x"], s["y"]), s["energy_budget"], s["capacity"])
                for s in d["servers"]
            ),
            scenarios=tuple(
                MovementScenario(tuple(tuple(mv) for mv in sc)) for sc in d["scenarios"]
            ),
            constants=ModelConstants(
                sigma=c["sigma"],
                gamma=c["gamma"],
                rho=rho,
                scenario_prob=None if prob is None else tuple(prob),
            ),
            seed=d.get("seed"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "Instance":
        return cls.from_dict(json.loads(text))


def make_rng(*seed_words: int) -> np.random.Generator:
    """PCG64 generator keyed by a tuple of non-negative integers."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(seed_words))))


def cluster_bounds(grid: GridConfig, center: Tuple[int, int], side: int) -> Tuple[int, int, int, int]:
    """Inclusive (x0, x1, y0, y1) of the square cluster used by special mode."""
    if side < 1:
        raise ConfigError("cluster side must be >= 1")
    x0 = center[0] - side // 2
    y0 = center[1] - side // 2
    x1, y1 = x0 + side - 1, y0 + side - 1
    if x0 < 0 or y0 < 0 or x1 >= grid.width or y1 >= grid.height:
        raise ConfigError(f"cluster of side {side} at {center} does not fit the grid")
    return x0, x1, y0, y1


def sample_server_layout(
    n_servers: int, grid: GridConfig, rng: np.random.Generator
) -> Tuple[Position, ...]:
    xs = rng.integers(0, grid.width, size=n_servers)
    ys = rng.integers(0, grid.height, size=n_servers)
    return tuple(Position(int(x), int(y)) for x, y in zip(xs, ys))


def sample_instance(
    mode: SpatialMode,
    n_users: int = 20,
    n_servers: int = 5,
    n_scenarios: int = 25,
    grid: GridConfig = GridConfig(),
    constants: ModelConstants = ModelConstants(),
    seed: int = 0,
    server_layout: Optional[Sequence[Position]] = None,
    cluster_center: Optional[Tuple[int, int]] = None,
    cluster_side: int = 6,
    request_range: Tuple[int, int] = (1, 10),
    energy_budget: float = 396.0,
    capacity: float = 24.0,
) -> Instance:
    """Draw one random instance.

    Normal mode places users uniformly over the grid; special mode places them
    uniformly in a ``cluster_side`` square around ``cluster_center`` (default:
    grid centre). Mixed datasets are assembled from the two pure modes by
    :mod:`edge_placer.dataset`, so ``mode`` here must be normal or special.
    """
    mode = SpatialMode.parse(mode)
    if n_users < 1 or n_servers < 1 or n_scenarios < 1:
        raise ConfigError("user, server and scenario counts must be >= 1")
    if mode is SpatialMode.MIXED:
        raise ConfigError("mixed mode is a dataset-level concatenation; sample normal or special")
    rng = make_rng(seed)

    if server_layout is None:
        server_layout = sample_server_layout(n_servers, grid, rng)
    elif len(server_layout) != n_servers:
        raise ConfigError("server layout size does not match server count")
    servers = tuple(
        Server(j, Position(int(p.x), int(p.y)), energy_budget, capacity)
        for j, p in enumerate(server_layout)
    )

    if mode is SpatialMode.NORMAL:
        xs = rng.integers(0, grid.width, size=n_users)
        ys = rng.integers(0, grid.height, size=n_users)
    else:
        center = cluster_center or (grid.width // 2, grid.height // 2)
        x0, x1, y0, y1 = cluster_bounds(grid, center, cluster_side)
        xs = rng.integers(x0, x1 + 1, size=n_users)
        ys = rng.integers(y0, y1 + 1, size=n_users)
    lo, hi = request_range
    reqs = rng.integers(lo, hi + 1, size=n_users)
    users = tuple(
        User(i, Position(int(x), int(y)), int(r)) for i, (x, y, r) in enumerate(zip(xs, ys, reqs))
    )

    move_idx = rng.integers(0, len(MOVES), size=(n_scenarios, n_users))
    scenarios = tuple(MovementScenario(tuple(MOVES[m] for m in row)) for row in move_idx)
    return Instance(grid, users, servers, scenarios, constants, seed)
