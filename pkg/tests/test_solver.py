import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edge_placer.model import check_feasible, evaluate, qos_tables
from edge_placer.solver import (
    SolveOptions,
    SolveResult,
    Status,
    brute_force,
    relative_gap,
    solve_exact,
    solve_scenario_subproblem,
    upper_bound,
)
from edge_placer.world import GridConfig, SpatialMode, make_rng, sample_instance, sample_server_layout

from conftest import make_instance, tiny_instance


def assert_same(a: SolveResult, b: SolveResult):
    assert a.objective == pytest.approx(b.objective, rel=1e-9, abs=1e-9)
    np.testing.assert_array_equal(a.x1, b.x1)
    np.testing.assert_array_equal(a.x2, b.x2)


def test_one_user_toy(one_user):
    res = solve_exact(one_user)
    assert res.status is Status.OPTIMAL
    assert res.objective == pytest.approx(400.0)
    assert list(res.x1) == [1] and res.x2.tolist() == [[1]]
    assert_same(res, brute_force(one_user))


def test_oversized_requests_give_empty_solution():
    inst = make_instance([(0, 0, 25), (3, 3, 30)], [(1, 1), (5, 5)], [[(0, 0), (1, 1)]] * 2)
    res = solve_exact(inst)
    assert res.status is Status.OPTIMAL and res.objective == 0
    assert not res.x1.any() and not res.x2.any()
    assert brute_force(inst).objective == 0


def test_brute_force_budget():
    inst = sample_instance(SpatialMode.NORMAL, 6, 3, 3, seed=0)
    with pytest.raises(ValueError):
        brute_force(inst)


def test_matches_brute_force_on_random_tiny_instances():
    for seed in range(220):
        inst = tiny_instance(seed)
        assert_same(solve_exact(inst), brute_force(inst))


def test_matches_brute_force_with_ties():
    # two users equidistant from two identical servers: many alternate optima
    inst = make_instance([(2, 2, 5), (2, 2, 5)], [(2, 0), (2, 4)], [[(0, 0), (0, 0)]])
    res = solve_exact(inst)
    assert_same(res, brute_force(inst))
    assert list(res.x1) == [1, 1]


def test_scenario_subproblem_single_server():
    inst = make_instance([(0, 0, 6)], [(2, 0)], [[(0, 0)]])
    choice, value = solve_scenario_subproblem(inst, [1], 0)
    assert list(choice) == [1] and value == pytest.approx(300.0)


def test_scenario_subproblem_migration_breaks_tie():
    # after the move the user is at distance 2 from both servers
    inst = make_instance([(2, 1, 6)], [(2, 0), (2, 4)], [[(0, 1)]])
    assert list(inst.stage2_distance[0, 0]) == [2, 2]
    choice, value = solve_scenario_subproblem(inst, [2], 0)
    assert list(choice) == [2] and value == pytest.approx(300.0)
    choice, _ = solve_scenario_subproblem(inst, [1], 0)
    assert list(choice) == [1]


def brute_force_scenario(inst, x1, k):
    t = qos_tables(inst)
    U, S = inst.n_users, inst.n_servers
    best, arg = -math.inf, None
    # lexicographic order: servers 1..S first, unassigned last
    for combo in itertools.product(list(range(1, S + 1)) + [0], repeat=U):
        x2 = np.zeros((inst.n_scenarios, U), int)
        x2[k] = combo
        if any(x1[i] > 0 and combo[i] == 0 for i in range(U)):
            continue
        load = np.zeros(S, int)
        for i, c in enumerate(combo):
            if c:
                load[c - 1] += t.requests[i]
        if (load > t.cap).any():
            continue
        v = sum(t.q2[k, i, c - 1] - (t.rho[x1[i] - 1, c - 1] if x1[i] else 0.0)
                for i, c in enumerate(combo) if c)
        if arg is None or v > best + 1e-9 * max(1.0, abs(best)):
            best, arg = v, combo
    return arg, best


def test_scenario_subproblem_matches_enumeration():
    rng = np.random.default_rng(4)
    for seed in range(80):
        inst = tiny_instance(seed)
        x1 = brute_force(inst).x1 if seed % 2 else np.zeros(inst.n_users, int)
        k = int(rng.integers(inst.n_scenarios))
        choice, value = solve_scenario_subproblem(inst, x1, k)
        want_choice, want = brute_force_scenario(inst, x1, k)
        assert value == pytest.approx(want, rel=1e-9, abs=1e-9)
        assert tuple(choice) == tuple(want_choice)


def test_scenario_subproblem_unassigned_stage1_is_plain_gap():
    inst = sample_instance(SpatialMode.NORMAL, 8, 3, 2, seed=3)
    _, value = solve_scenario_subproblem(inst, np.zeros(8, int), 1)
    assert value >= 0


def test_results_are_feasible_and_consistent():
    layout = sample_server_layout(5, GridConfig(), make_rng(1))
    for seed in range(6):
        for mode in (SpatialMode.NORMAL, SpatialMode.SPECIAL):
            inst = sample_instance(mode, 12, 4, 8, seed=seed, server_layout=layout[:4])
            res = solve_exact(inst)
            assert res.status is Status.OPTIMAL
            assert check_feasible(inst, res.x1, res.x2).feasible
            assert evaluate(inst, res.x1, res.x2).total == pytest.approx(res.objective, rel=1e-9)
            assert res.best_bound >= res.objective - 1e-9
            assert res.gap == relative_gap(res.best_bound, res.objective)
            assert upper_bound(inst, np.zeros(12, int), 0) >= res.objective - 1e-9


def test_upper_bound_admissible_on_oracle_instances():
    for seed in range(60):
        inst = tiny_instance(seed)
        opt = brute_force(inst)
        assert upper_bound(inst, np.zeros(inst.n_users, int), 0) >= opt.objective - 1e-9
        assert upper_bound(inst, opt.x1, inst.n_users) >= opt.objective - 1e-9


def test_upper_bound_single_user_closed_form(one_user):
    assert upper_bound(one_user, [0], 0) == pytest.approx(solve_exact(one_user).objective)


def test_deterministic():
    inst = sample_instance(SpatialMode.SPECIAL, 14, 4, 10, seed=5)
    a, b = solve_exact(inst), solve_exact(inst)
    assert a.to_json(timing=False) == b.to_json(timing=False)


def hard_instance():
    layout = sample_server_layout(5, GridConfig(), make_rng(1))
    return sample_instance(SpatialMode.SPECIAL, 20, 5, 25, seed=1028, server_layout=layout)


def test_node_limit_degrades_status_and_is_monotone():
    inst = hard_instance()
    prev = -math.inf
    for limit in (10_000, 200_000, 2_000_000):
        res = solve_exact(inst, SolveOptions(node_limit=limit))
        assert res.status is Status.FEASIBLE
        assert res.best_bound >= res.objective
        assert res.gap > 0
        assert check_feasible(inst, res.x1, res.x2).feasible
        assert res.objective >= prev
        prev = res.objective


def test_time_limit_is_monotone():
    inst = hard_instance()
    prev = -math.inf
    for limit in (0.2, 1.0, 3.0):
        res = solve_exact(inst, SolveOptions(time_limit=limit))
        assert res.status is Status.FEASIBLE
        # fixed-budget preprocessing and the final recourse may overrun a tiny limit
        assert res.wall_time < limit + 5.0
        assert res.objective >= prev - 1e-9
        prev = res.objective


def test_gap_tolerance_respected():
    layout = sample_server_layout(5, GridConfig(), make_rng(1))
    for seed in range(3):
        inst = sample_instance(SpatialMode.NORMAL, 15, 5, 10, seed=seed, server_layout=layout)
        exact = solve_exact(inst)
        loose = solve_exact(inst, SolveOptions(gap_tolerance=0.01))
        assert loose.objective >= exact.objective * (1 - 0.01) - 1e-9
        assert loose.best_bound >= exact.objective - 1e-9
        assert loose.gap <= 0.01 + 1e-12


def test_options_validation():
    with pytest.raises(ValueError):
        SolveOptions(gap_tolerance=-0.1)
    with pytest.raises(ValueError):
        SolveOptions(time_limit=0)


def test_result_json_round_trip():
    res = solve_exact(tiny_instance(3))
    back = SolveResult.from_dict(res.to_dict())
    assert back.to_json() == res.to_json()
    assert "wall_time" not in res.to_dict(timing=False)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_property_oracle_equivalence(seed):
    inst = tiny_instance(seed)
    assert_same(solve_exact(inst), brute_force(inst))
