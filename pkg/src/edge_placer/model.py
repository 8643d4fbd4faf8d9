"""Two-stage placement program: objective evaluation, feasibility checking and
MPS export of the deterministic equivalent.

Assignments use the *choice* encoding: ``0`` means unassigned and ``k`` in
``1..S`` means server ``k - 1``. A stage-1 assignment is a length-U integer
vector, a stage-2 assignment a K x U matrix (one row per scenario).
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Optional, Tuple

import numpy as np

from .world import Instance, exact


class DimensionError(ValueError):
    """Assignment or feature shapes do not match the instance."""


@dataclass(frozen=True)
class QosTables:
    """Dense numeric view of an instance used by the solvers."""

    q1: np.ndarray  # U x S stage-1 QoS
    q2: np.ndarray  # K x U x S stage-2 QoS per scenario
    requests: np.ndarray  # U, int64
    cap: np.ndarray  # S, int64 container mass admitted by each energy budget
    rho: np.ndarray  # S x S migration costs
    prob: np.ndarray  # K


def qos_tables(instance: Instance) -> QosTables:
    gamma = float(instance.constants.gamma)
    req = instance.requests
    q1 = gamma * req[:, None] / instance.stage1_distance
    q2 = gamma * req[None, :, None] / instance.stage2_distance
    return QosTables(
        q1=q1.astype(float),
        q2=q2.astype(float),
        requests=req,
        cap=instance.container_capacity,
        rho=instance.constants.rho_matrix(instance.n_servers),
        prob=instance.constants.probabilities(instance.n_scenarios),
    )


def as_stage1(instance: Instance, x1) -> np.ndarray:
    x1 = np.asarray(x1, dtype=np.int64)
    if x1.shape != (instance.n_users,):
        raise DimensionError(f"stage-1 assignment has shape {x1.shape}, expected ({instance.n_users},)")
    if x1.min() < 0 or x1.max() > instance.n_servers:
        raise DimensionError("stage-1 choices must lie in 0..S")
    return x1


def as_stage2(instance: Instance, x2) -> np.ndarray:
    x2 = np.asarray(x2, dtype=np.int64)
    shape = (instance.n_scenarios, instance.n_users)
    if x2.shape != shape:
        raise DimensionError(f"stage-2 assignment has shape {x2.shape}, expected {shape}")
    if x2.min() < 0 or x2.max() > instance.n_servers:
        raise DimensionError("stage-2 choices must lie in 0..S")
    return x2


@dataclass(frozen=True)
class ObjectiveBreakdown:
    stage1_qos: float
    expected_stage2_qos: float
    expected_migration_cost: float
    total: float


def derive_migrations(x1, x2) -> Dict[Tuple[int, int], Tuple[int, int]]:
    """Tight migration indicators implied by a pair of assignments.

    Returns ``{(scenario, user): (from_choice, to_choice)}`` for every user
    served by one server in stage 1 and a different one in that scenario.
    With non-negative migration costs this is the cheapest setting that
    satisfies the linking constraint.
    """
    x1 = np.asarray(x1)
    x2 = np.asarray(x2)
    moved = {}
    for k in range(x2.shape[0]):
        for i in range(x1.shape[0]):
            a, b = int(x1[i]), int(x2[k, i])
            if a > 0 and b > 0 and a != b:
                moved[(k, i)] = (a, b)
    return moved


def evaluate(instance: Instance, x1, x2) -> ObjectiveBreakdown:
    x1 = as_stage1(instance, x1)
    x2 = as_stage2(instance, x2)
    t = qos_tables(instance)
    users = np.arange(instance.n_users)

    on1 = x1 > 0
    s1 = float(t.q1[users[on1], x1[on1] - 1].sum())

    s2 = 0.0
    for k in range(instance.n_scenarios):
        on2 = x2[k] > 0
        s2 += float(t.prob[k]) * float(t.q2[k, users[on2], x2[k, on2] - 1].sum())

    mig = 0.0
    for (k, _), (a, b) in derive_migrations(x1, x2).items():
        mig += float(t.prob[k]) * float(t.rho[a - 1, b - 1])
    return ObjectiveBreakdown(s1, s2, mig, s1 + s2 - mig)


@dataclass(frozen=True)
class Violation:
    constraint: int
    scenario: Optional[int]
    server: Optional[int]
    user: Optional[int]
    magnitude: float


class ViolationReport(List[Violation]):
    @property
    def feasible(self) -> bool:
        return not self

    def by_constraint(self, number: int) -> List[Violation]:
        return [v for v in self if v.constraint == number]


def _energy_violations(instance, choices, constraint, scenario, report):
    sigma = exact(instance.constants.sigma)
    for j, srv in enumerate(instance.servers):
        q = exact(srv.capacity)
        load = sum(
            (sigma * u.request / q for u, c in zip(instance.users, choices) if c == j + 1),
            Fraction(0),
        )
        excess = load - exact(srv.energy_budget)
        if excess > 0:
            report.append(Violation(constraint, scenario, j, None, float(excess)))


def check_feasible(instance: Instance, x1, x2=None) -> ViolationReport:
    """Report every violated constraint with its magnitude.

    Energy loads are summed as exact rationals so a server filled to exactly
    its budget is feasible. ``x2=None`` checks the stage-1 side only. The
    at-most-one rules and binary domains hold by construction of the choice
    encoding and are enforced by the shape checks.
    """
    x1 = as_stage1(instance, x1)
    report = ViolationReport()
    _energy_violations(instance, x1, 4, None, report)
    if x2 is None:
        return report
    x2 = as_stage2(instance, x2)
    for k in range(instance.n_scenarios):
        _energy_violations(instance, x2[k], 5, k, report)
    for k in range(instance.n_scenarios):
        for i in range(instance.n_users):
            if x1[i] > 0 and x2[k, i] == 0:
                report.append(Violation(8, k, None, i, 1.0))
    return report


def repair_greedy(instance: Instance, x1) -> np.ndarray:
    """Evict users from overloaded servers until every energy budget holds.

    On each overloaded server the user with the lowest stage-1 QoS leaves
    first (ties: higher user index first) and becomes unassigned.
    """
    x = as_stage1(instance, x1).copy()
    q1 = qos_tables(instance).q1
    req = instance.requests
    cap = instance.container_capacity
    for j in range(instance.n_servers):
        on = [i for i in range(instance.n_users) if x[i] == j + 1]
        on.sort(key=lambda i: (q1[i, j], -i))
        load = int(req[on].sum()) if on else 0
        for i in on:
            if load <= cap[j]:
                break
            x[i] = 0
            load -= int(req[i])
    return x


# -- MPS export ---------------------------------------------------------------


def _num(v: float) -> str:
    v = float(v)
    if v == 0:
        v = 0.0  # no "-0"
    return f"{v:.17g}"


def export_mps(instance: Instance, name: str = "EDGEPLACE") -> str:
    """Write the deterministic equivalent as MPS text.

    Columns are ``X1_i_j``, ``X2_s_i_j`` and ``Y_s_i_jp_j`` (0-based indices);
    rows are ``E4_j``, ``E5_s_j``, ``A6_i``, ``A7_s_i``, ``C8_s_i`` and
    ``M9_s_i_jp_j``. The objective row ``QOS`` is maximized via an
    ``OBJSENSE MAX`` section. Names are longer than 8 characters, so readers
    must accept free-format MPS.
    """
    U, S, K = instance.n_users, instance.n_servers, instance.n_scenarios
    t = qos_tables(instance)
    sigma = float(instance.constants.sigma)
    energy = [
        [sigma * instance.users[i].request / float(instance.servers[j].capacity) for j in range(S)]
        for i in range(U)
    ]
    pairs = [(jp, j) for jp in range(S) for j in range(S) if jp != j]

    rows: List[Tuple[str, str]] = []
    rows += [("L", f"E4_{j}") for j in range(S)]
    rows += [("L", f"E5_{s}_{j}") for s in range(K) for j in range(S)]
    rows += [("L", f"A6_{i}") for i in range(U)]
    rows += [("L", f"A7_{s}_{i}") for s in range(K) for i in range(U)]
    rows += [("L", f"C8_{s}_{i}") for s in range(K) for i in range(U)]
    rows += [("L", f"M9_{s}_{i}_{jp}_{j}") for s in range(K) for i in range(U) for jp, j in pairs]
    rhs: List[Tuple[str, float]] = []
    rhs += [(f"E4_{j}", instance.servers[j].energy_budget) for j in range(S)]
    rhs += [(f"E5_{s}_{j}", instance.servers[j].energy_budget) for s in range(K) for j in range(S)]
    rhs += [(f"A6_{i}", 1.0) for i in range(U)]
    rhs += [(f"A7_{s}_{i}", 1.0) for s in range(K) for i in range(U)]
    rhs += [(f"M9_{s}_{i}_{jp}_{j}", 1.0) for s in range(K) for i in range(U) for jp, j in pairs]

    columns: List[Tuple[str, List[Tuple[str, float]]]] = []
    for i in range(U):
        for j in range(S):
            ent = [("QOS", t.q1[i, j]), (f"E4_{j}", energy[i][j]), (f"A6_{i}", 1.0)]
            ent += [(f"C8_{s}_{i}", 1.0) for s in range(K)]
            ent += [(f"M9_{s}_{i}_{j}_{jj}", 1.0) for s in range(K) for jj in range(S) if jj != j]
            columns.append((f"X1_{i}_{j}", ent))
    for s in range(K):
        for i in range(U):
            for j in range(S):
                ent = [
                    ("QOS", t.prob[s] * t.q2[s, i, j]),
                    (f"E5_{s}_{j}", energy[i][j]),
                    (f"A7_{s}_{i}", 1.0),
                    (f"C8_{s}_{i}", -1.0),
                ]
                ent += [(f"M9_{s}_{i}_{jp}_{j}", 1.0) for jp in range(S) if jp != j]
                columns.append((f"X2_{s}_{i}_{j}", ent))
    for s in range(K):
        for i in range(U):
            for jp, j in pairs:
                ent = [("QOS", -t.prob[s] * t.rho[jp, j]), (f"M9_{s}_{i}_{jp}_{j}", -1.0)]
                columns.append((f"Y_{s}_{i}_{jp}_{j}", ent))

    out = io.StringIO()
    out.write(f"NAME          {name}\n")
    out.write("OBJSENSE\n    MAX\n")
    out.write("ROWS\n")
    out.write(" N  QOS\n")
    for kind, row in rows:
        out.write(f" {kind}  {row}\n")
    out.write("COLUMNS\n")
    for col, ent in columns:
        for row, val in ent:
            out.write(f"    {col:<12}  {row:<14}  {_num(val)}\n")
    out.write("RHS\n")
    for row, val in rhs:
        out.write(f"    {'RHS':<12}  {row:<14}  {_num(val)}\n")
    out.write("BOUNDS\n")
    for col, _ in columns:
        out.write(f" BV BND       {col}\n")
    out.write("ENDATA\n")
    return out.getvalue()


def mps_column_names(text: str) -> List[str]:
    """Distinct column names of an MPS document, in order of appearance."""
    names: List[str] = []
    section = None
    for line in text.splitlines():
        if not line.startswith(" "):
            section = line.split()[0]
            continue
        if section == "COLUMNS":
            col = line.split()[0]
            if not names or names[-1] != col:
                names.append(col)
    return names
