"""Exact solver for the two-stage placement program.

The outer search branches on stage-1 choices user by user; each complete
stage-1 assignment is scored by solving every scenario's recourse problem (a
generalized assignment problem with coverage and migration costs) exactly.
Migration variables never appear as decisions: they follow from the two
assignments.

Ties are broken lexicographically over users in index order, with servers
ranked by index and "unassigned" last. Two objective values are treated as
tied when they differ by at most ``TIE_RTOL * max(1, |value|)``; the solver
returns the lexicographically first assignment tied with the optimum, and so
does :func:`brute_force`.
"""

from __future__ import annotations

import enum
import itertools
import json
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from . import _bnb
from .model import as_stage1, qos_tables
from .world import Instance

TIE_RTOL = 1e-9
DEFAULT_NODE_LIMIT = 2**62
# Fixed budget for the per-scenario bounds and warm starts; their results stay valid when
# cut short. Limits from SolveOptions apply to the search proper, so a longer limit only
# extends the same search and never lowers the returned objective.
PREP_NODE_LIMIT = 1_000_000
BOUND_NODE_LIMIT = 200_000
JOINT_ITERS = 1000
# extra time allowed for the final recourse after a time limit is hit
EXTRACT_GRACE = 0.1
EXTRACT_GRACE_MIN = 0.5
BRUTE_FORCE_BUDGET = 3**4 * 3 * 3**4


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class SolveOptions:
    """Search limits.

    ``node_limit`` counts every branch-and-bound node, outer and per-scenario,
    so it gives a machine-independent budget. ``time_limit`` is wall-clock and
    therefore not reproducible across machines.
    """

    time_limit: Optional[float] = None
    gap_tolerance: float = 0.0
    node_limit: Optional[int] = None

    def __post_init__(self):
        if self.gap_tolerance < 0:
            raise ValueError("gap_tolerance must be >= 0")
        if self.time_limit is not None and self.time_limit <= 0:
            raise ValueError("time_limit must be positive")
        if self.node_limit is not None and self.node_limit < 1:
            raise ValueError("node_limit must be >= 1")


@dataclass
class SolveResult:
    x1: np.ndarray
    x2: np.ndarray
    objective: float
    best_bound: float
    gap: float
    status: Status
    nodes_explored: int = 0
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self, timing: bool = True) -> dict:
        d = {
            "x1": [int(v) for v in self.x1],
            "x2": [[int(v) for v in row] for row in self.x2],
            "objective": self.objective,
            "best_bound": self.best_bound,
            "gap": self.gap,
            "status": self.status.value,
            "nodes_explored": int(self.nodes_explored),
        }
        if timing:
            d["wall_time"] = self.wall_time
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SolveResult":
        return cls(
            x1=np.asarray(d["x1"], dtype=np.int64),
            x2=np.asarray(d["x2"], dtype=np.int64),
            objective=float(d["objective"]),
            best_bound=float(d["best_bound"]),
            gap=float(d["gap"]),
            status=Status(d["status"]),
            nodes_explored=int(d.get("nodes_explored", 0)),
            wall_time=float(d.get("wall_time", 0.0)),
        )

    def to_json(self, timing: bool = True) -> str:
        return json.dumps(self.to_dict(timing), indent=1)


def relative_gap(bound: float, objective: float) -> float:
    return max(0.0, (bound - objective) / max(1.0, abs(bound)))


def _to_choice(a: np.ndarray) -> np.ndarray:
    return np.where(a >= 0, a + 1, 0).astype(np.int64)


def _to_internal(x: np.ndarray) -> np.ndarray:
    return (np.asarray(x, dtype=np.int64) - 1).astype(np.int64)


def _greedy_value(val, req, cap):
    a = _bnb.greedy_gap(val, req, cap, np.zeros(len(req), dtype=np.bool_))
    return _bnb.assignment_value(val, a)


def _multipliers(val, req, cap):
    return _bnb.lagrange_multipliers(val, req, cap, _greedy_value(val, req, cap), 300)


def solve_scenario_subproblem(instance: Instance, x1, scenario_index: int):
    """Optimal recourse for one scenario given a complete stage-1 assignment.

    Returns ``(choices, value)`` with choices in the 0..S encoding, where
    ``value`` is the scenario's stage-2 QoS minus its migration costs, or
    ``(None, -inf)`` when no recourse can keep every stage-1 user served.
    """
    x1 = as_stage1(instance, x1)
    t = qos_tables(instance)
    k = scenario_index
    lam = _multipliers(t.q2[k], t.requests, t.cap)
    a, v, _, st, _ = _bnb.solve_scenario(
        t.q2[k], t.requests, t.cap, t.rho, lam, _to_internal(x1), TIE_RTOL,
        DEFAULT_NODE_LIMIT, math.inf,
    )
    if st == _bnb.STATUS_INFEASIBLE:
        return None, -math.inf
    return _to_choice(a), float(v)


def upper_bound(instance: Instance, partial_x1, depth: int) -> float:
    """Admissible bound for any completion of the first ``depth`` stage-1 choices.

    Decided users contribute their stage-1 QoS; undecided users their best
    stage-1 QoS; every user its best stage-2 QoS in each scenario, weighted
    by scenario probability. Energy budgets and migration costs are ignored.
    """
    t = qos_tables(instance)
    x = np.asarray(partial_x1, dtype=np.int64)
    total = 0.0
    for i in range(instance.n_users):
        if i < depth:
            if x[i] > 0:
                total += t.q1[i, x[i] - 1]
        else:
            total += max(0.0, float(t.q1[i].max()))
    best2 = np.maximum(t.q2.max(axis=2), 0.0).sum(axis=1)
    return total + float(t.prob @ best2)


def solve_exact(instance: Instance, options: SolveOptions = SolveOptions()) -> SolveResult:
    start = time.perf_counter()
    deadline = math.inf if options.time_limit is None else start + options.time_limit
    node_limit = options.node_limit or DEFAULT_NODE_LIMIT
    t = qos_tables(instance)
    q1, q2, req, cap, rho, prob = t.q1, t.q2, t.requests, t.cap, t.rho, t.prob
    K, U, S = q2.shape
    none_required = np.zeros(U, dtype=np.bool_)
    no_init = np.full(U, -2, dtype=np.int64)

    mu = _multipliers(q1, req, cap)
    lam2 = np.stack([_multipliers(q2[k], req, cap) for k in range(K)])
    s2max = np.empty(K)
    nodes = 0
    for k in range(K):
        lower = _greedy_value(q2[k], req, cap)
        v, b, st, nd = _bnb.gap_value_search(
            q2[k], req, cap, none_required, lam2[k], lower, -math.inf,
            BOUND_NODE_LIMIT, math.inf, np.empty(0, dtype=np.int64),
        )
        s2max[k] = b
        nodes += nd
    g = _bnb.stage2_lagrange_terms(q2, req, cap, rho, lam2)

    # warm start: near-optima of stage-1 QoS alone and of stage-1 plus expected stage-2 QoS.
    # Only a starting incumbent, so the searches are capped.
    best_x1, best_val = None, -math.inf
    combined = q1 + np.tensordot(prob, q2, axes=1)
    for val, lam in ((q1, mu), (combined, mu + prob @ lam2)):
        a = _bnb.greedy_gap(val, req, cap, none_required)
        _, _, _, nd = _bnb.gap_value_search(
            val, req, cap, none_required, lam, _bnb.assignment_value(val, a), -math.inf,
            PREP_NODE_LIMIT, math.inf, a,
        )
        nodes += nd
        v, _, st, nd = _bnb.leaf_value(q1, q2, req, cap, rho, prob, lam2, a, PREP_NODE_LIMIT, math.inf)
        nodes += nd
        # v is achieved by the recourse found so far even when the search was cut short
        if v > best_val:
            best_x1, best_val = a, v

    # multipliers tuned for the joint relaxation; the stage-wise ones stay in use for leaves
    mu_j, lam_j, _ = _bnb.joint_multipliers(
        q1, q2, req, cap, rho, prob, mu, lam2, best_val if best_x1 is not None else 0.0, JOINT_ITERS
    )
    h, const2 = _bnb.joint_terms(_bnb.stage2_lagrange_terms(q2, req, cap, rho, lam_j), lam_j, prob, cap)
    x1, value, bound, status, nd, leaves = _bnb.outer_search(
        q1, q2, req, cap, rho, prob, mu, lam2, g, s2max, mu_j, h, const2,
        best_x1 if best_x1 is not None else no_init, best_val,
        TIE_RTOL, float(options.gap_tolerance), node_limit, node_limit, deadline,
    )
    nodes += nd
    if x1[0] == -2:
        x1 = best_x1 if best_x1 is not None else np.full(U, -1, dtype=np.int64)
    # recourse for the returned x1: exact when the search finished, best effort otherwise
    done = status == _bnb.STATUS_DONE
    if done:
        limit, until = DEFAULT_NODE_LIMIT, math.inf
    else:
        limit = node_limit
        until = math.inf if options.time_limit is None else (
            time.perf_counter() + max(EXTRACT_GRACE_MIN, EXTRACT_GRACE * options.time_limit))
    value, x2, _, st, nd = _bnb.evaluate_leaf(
        q1, q2, req, cap, rho, prob, lam2, x1, TIE_RTOL, limit, until
    )
    nodes += nd
    bound = max(float(bound), float(value))
    return SolveResult(
        x1=_to_choice(x1),
        x2=_to_choice(x2),
        objective=float(value),
        best_bound=bound,
        gap=relative_gap(bound, float(value)),
        status=Status.OPTIMAL if done else Status.FEASIBLE,
        nodes_explored=int(nodes),
        wall_time=time.perf_counter() - start,
        extra={"leaves": int(leaves)},
    )


# -- brute force oracle -------------------------------------------------------


def _lex_vectors(n_users: int, n_servers: int) -> np.ndarray:
    """All choice vectors in search order; digit S stands for unassigned."""
    return np.array(list(itertools.product(range(n_servers + 1), repeat=n_users)), dtype=np.int64)


def _lex_first_optimum(values: np.ndarray, feasible: np.ndarray) -> Tuple[int, float]:
    if not feasible.any():
        return -1, -math.inf
    best = values[feasible].max()
    thr = best - TIE_RTOL * max(1.0, abs(best))
    idx = int(np.flatnonzero(feasible & (values >= thr))[0])
    return idx, float(values[idx])


def brute_force(instance: Instance, budget: int = BRUTE_FORCE_BUDGET) -> SolveResult:
    """Exhaustive enumeration oracle for tiny instances."""
    start = time.perf_counter()
    U, S, K = instance.n_users, instance.n_servers, instance.n_scenarios
    work = (S + 1) ** U * K * (S + 1) ** U
    if work > budget:
        raise ValueError(f"instance needs {work} evaluations, over the budget of {budget}")
    t = qos_tables(instance)
    vec = _lex_vectors(U, S)
    users = np.arange(U)
    onehot = vec[:, :, None] == np.arange(S)[None, None, :]
    load = (onehot * t.requests[None, :, None]).sum(axis=1)
    cap_ok = (load <= t.cap[None, :]).all(axis=1)
    assigned = vec < S

    def score(val):
        padded = np.concatenate([val, np.zeros((U, 1))], axis=1)
        out = np.zeros(len(vec))
        for i in range(U):
            out = out + padded[i, vec[:, i]]
        return out

    v1_all = score(t.q1)
    leaf_vals = np.full(len(vec), -math.inf)
    leaf_x2 = {}
    for a in np.flatnonzero(cap_ok):
        x1 = vec[a]
        total = v1_all[a]
        rows = []
        for k in range(K):
            net = t.q2[k].copy()
            for i in range(U):
                if x1[i] < S:
                    net[i] -= t.rho[x1[i]]
            vals = score(net)
            feas = cap_ok & (assigned | ~assigned[a][None, :]).all(axis=1)
            idx, _ = _lex_first_optimum(vals, feas)
            total += t.prob[k] * vals[feas].max()
            rows.append((vec[idx], vals[idx]))
        leaf_vals[a] = total
        leaf_x2[a] = rows
    best, _ = _lex_first_optimum(leaf_vals, cap_ok)
    value = v1_all[best]
    for k, (_, v) in enumerate(leaf_x2[best]):
        value += t.prob[k] * v
    to_choice = lambda v: np.where(v < S, v + 1, 0).astype(np.int64)
    return SolveResult(
        x1=to_choice(vec[best]),
        x2=to_choice(np.array([row for row, _ in leaf_x2[best]])),
        objective=value,
        best_bound=value,
        gap=0.0,
        status=Status.OPTIMAL,
        nodes_explored=len(vec) * (1 + K * int(cap_ok.sum())),
        wall_time=time.perf_counter() - start,
    )
