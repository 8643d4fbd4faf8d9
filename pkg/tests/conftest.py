import numpy as np
import pytest

from edge_placer.world import (
    GridConfig,
    Instance,
    ModelConstants,
    MovementScenario,
    Position,
    Server,
    SpatialMode,
    User,
    sample_instance,
)


def make_instance(users, servers, scenarios, grid=GridConfig(), constants=ModelConstants()):
    """Build an instance from ``[(x, y, request)]``, ``[(x, y)]`` and per-scenario move lists."""
    return Instance(
        grid,
        tuple(User(i, Position(x, y), r) for i, (x, y, r) in enumerate(users)),
        tuple(Server(j, Position(x, y)) for j, (x, y) in enumerate(servers)),
        tuple(MovementScenario(tuple(m)) for m in scenarios),
        constants,
    )


def tiny_instance(seed, n_users=None, n_servers=None, n_scenarios=None, mode=None):
    """Random instance small enough for the brute-force oracle (U<=4, S<=2, K<=3)."""
    rng = np.random.default_rng(seed)
    U = n_users or int(rng.integers(1, 5))
    S = n_servers or int(rng.integers(1, 3))
    K = n_scenarios or int(rng.integers(1, 4))
    mode = mode or (SpatialMode.NORMAL if seed % 2 == 0 else SpatialMode.SPECIAL)
    grid = GridConfig(8, 8)
    # larger requests make the capacity of 24 bind on tiny instances
    return sample_instance(mode, U, S, K, grid=grid, seed=seed, cluster_side=4, request_range=(4, 16))


@pytest.fixture
def one_user():
    """One user, one server, one scenario: R=6 at distance 3 in both stages."""
    return make_instance([(0, 0, 6)], [(3, 0)], [[(0, 0)]])
