"""Compiled branch-and-bound kernels.

Internal encoding: server index ``0..S-1`` or ``-1`` for unassigned. Children
of a node are tried in the order server 0, 1, ..., S-1, unassigned, and users
are branched on in index order, so leaves are visited in lexicographic order.

Every search returns the lexicographically first leaf whose value is within
``tie_tol(opt)`` of the optimum. Pruning discards a subtree only when its
bound falls below ``best - tie_tol(best)``; such a subtree cannot contain an
answer because ``best <= opt``. Leaves that pass the test when visited are
kept as candidates and filtered once the final best value is known.
"""

import time

import numba
import numpy as np

NEG_INF = -np.inf

STATUS_DONE = 0
STATUS_LIMIT = 1
STATUS_INFEASIBLE = 2
STATUS_BELOW = 3

_CHECK_EVERY = 2048


@numba.njit(cache=True)
def tie_tol(value, rtol):
    return rtol * max(1.0, abs(value))


@numba.njit(cache=True)
def _now():
    with numba.objmode(t="float64"):
        t = time.perf_counter()
    return t


@numba.njit(cache=True)
def lagrange_multipliers(val, req, cap, lower, iters):
    """Subgradient search for capacity multipliers of a GAP relaxation.

    Minimizes ``L(lam) = lam.cap + sum_i max(0, max_j val[i,j] - lam_j req_i)``
    over ``lam >= 0``; any non-negative ``lam`` gives a valid upper bound, so
    the routine only has to be good, not exact. ``lower`` is the value of a
    known feasible solution and drives the Polyak step.
    """
    n, m = val.shape
    lam = np.zeros(m)
    best_lam = lam.copy()
    best = np.inf
    theta = 2.0
    stall = 0
    g = np.zeros(m)
    for _ in range(iters):
        total = 0.0
        for j in range(m):
            total += lam[j] * cap[j]
            g[j] = cap[j]
        for i in range(n):
            top = 0.0
            arg = -1
            for j in range(m):
                if req[i] > cap[j]:
                    continue
                v = val[i, j] - lam[j] * req[i]
                if v > top:
                    top = v
                    arg = j
            total += top
            if arg >= 0:
                g[arg] -= req[i]
        if total < best - 1e-12:
            best = total
            best_lam[:] = lam
            stall = 0
        else:
            stall += 1
            if stall >= 15:
                theta *= 0.5
                stall = 0
        norm = 0.0
        for j in range(m):
            if lam[j] <= 0.0 and g[j] > 0.0:
                g[j] = 0.0  # projected direction
            norm += g[j] * g[j]
        if norm == 0.0 or theta < 1e-4:
            break
        step = theta * max(total - lower, 1e-9) / norm
        for j in range(m):
            lam[j] = max(0.0, lam[j] - step * g[j])
    return best_lam


@numba.njit(cache=True)
def joint_multipliers(q1, q2, req, cap, rho, prob, mu0, lam0, lower, iters):
    """Subgradient search over stage-1 and per-scenario multipliers together.

    Relaxing every capacity row of the two-stage problem leaves one small
    problem per user: pick a stage-1 server, then a recourse server in each
    scenario. Starting from the separately tuned ``mu0``/``lam0``, this
    lowers the resulting bound. Returns ``(mu, lam2, bound)``.
    """
    K, n, m = q2.shape
    mu = mu0.copy()
    lam = lam0.copy()
    best_mu = mu.copy()
    best_lam = lam.copy()
    best = np.inf
    theta = 1.0
    stall = 0
    gmu = np.empty(m)
    glam = np.empty((K, m))
    pick = np.empty(K, dtype=np.int64)
    tmp = np.empty(K, dtype=np.int64)
    for _ in range(iters):
        total = 0.0
        for j in range(m):
            total += mu[j] * cap[j]
            gmu[j] = cap[j]
        for k in range(K):
            for j in range(m):
                total += prob[k] * lam[k, j] * cap[j]
                glam[k, j] = prob[k] * cap[j]
        for i in range(n):
            top = NEG_INF
            top_a = m
            for a in range(m + 1):
                if a < m:
                    if req[i] > cap[a]:
                        continue
                    v = q1[i, a] - mu[a] * req[i]
                else:
                    v = 0.0
                for k in range(K):
                    bk = 0.0 if a == m else NEG_INF
                    bj = -1
                    for j in range(m):
                        if req[i] > cap[j]:
                            continue
                        w = q2[k, i, j] - lam[k, j] * req[i]
                        if a < m and a != j:
                            w -= rho[a, j]
                        if w > bk:
                            bk = w
                            bj = j
                    tmp[k] = bj
                    v += prob[k] * bk
                if v > top:
                    top = v
                    top_a = a
                    pick[:] = tmp
            total += top
            if top_a < m:
                gmu[top_a] -= req[i]
            for k in range(K):
                if pick[k] >= 0:
                    glam[k, pick[k]] -= prob[k] * req[i]
        if total < best - 1e-12:
            best = total
            best_mu[:] = mu
            best_lam[:] = lam
            stall = 0
        else:
            stall += 1
            if stall >= 20:
                theta *= 0.5
                stall = 0
        norm = 0.0
        for j in range(m):
            if mu[j] <= 0.0 and gmu[j] > 0.0:
                gmu[j] = 0.0
            norm += gmu[j] * gmu[j]
        for k in range(K):
            for j in range(m):
                if lam[k, j] <= 0.0 and glam[k, j] > 0.0:
                    glam[k, j] = 0.0
                norm += glam[k, j] * glam[k, j]
        if norm == 0.0 or theta < 1e-4:
            break
        step = theta * max(total - lower, 1e-9) / norm
        for j in range(m):
            mu[j] = max(0.0, mu[j] - step * gmu[j])
        for k in range(K):
            for j in range(m):
                lam[k, j] = max(0.0, lam[k, j] - step * glam[k, j])
    return best_mu, best_lam, best


@numba.njit(cache=True)
def greedy_gap(val, req, cap, required):
    """Feasible GAP assignment by descending value density; -1 = unassigned.

    Users flagged ``required`` are placed first on any server with room. The
    result may leave a required user out when capacity is exhausted, in which
    case the caller must treat it as unusable.
    """
    n, m = val.shape
    rc = cap.copy()
    out = -np.ones(n, dtype=np.int64)
    order = np.argsort(-np.array([val[i].max() / req[i] for i in range(n)]))
    for pas in range(2):
        for t in range(n):
            i = order[t]
            if out[i] >= 0 or (pas == 0 and not required[i]):
                continue
            best = -1
            bv = 0.0 if not required[i] else NEG_INF
            for j in range(m):
                if req[i] <= rc[j] and val[i, j] > bv:
                    bv = val[i, j]
                    best = j
            if best >= 0:
                out[i] = best
                rc[best] -= req[i]
    return out


@numba.njit(cache=True)
def assignment_value(val, assign):
    v = 0.0
    for i in range(assign.shape[0]):
        if assign[i] >= 0:
            v += val[i, assign[i]]
    return v


@numba.njit(cache=True)
def _gap_rest_bound(val, req, rc, required, lam, start):
    """Upper bound on users ``start..`` given residual capacities ``rc``.

    Minimum of the capacity-free per-user best and the Lagrangian bound with
    multipliers ``lam``. Returns -inf when a required user fits nowhere.
    """
    n, m = val.shape
    free = 0.0
    lag = 0.0
    for j in range(m):
        lag += lam[j] * rc[j]
    for i in range(start, n):
        bf = NEG_INF if required[i] else 0.0
        bl = bf
        for j in range(m):
            if req[i] <= rc[j]:
                if val[i, j] > bf:
                    bf = val[i, j]
                v = val[i, j] - lam[j] * req[i]
                if v > bl:
                    bl = v
        if bf == NEG_INF:
            return NEG_INF
        free += bf
        lag += bl
    return min(free, lag)


@numba.njit(cache=True)
def gap_search(val, req, cap, required, lam, init, rtol, gap_tol, node_limit, deadline, known_opt=NEG_INF):
    """Exact lexicographic-first GAP optimum by depth-first branch and bound.

    ``init`` is a known assignment (or all -2 for none); if feasible its value
    seeds the pruning threshold. When the optimum value is already known,
    pass it as ``known_opt``: the first leaf reaching it is the answer and the
    search stops there. Returns ``(assign, value, bound, status, nodes)``.
    """
    n, m = val.shape
    rc = cap.copy()
    assign = np.full(n, -2, dtype=np.int64)
    nxt = np.zeros(n + 1, dtype=np.int64)
    pre = np.zeros(n + 1)

    best = NEG_INF
    init_ok = init[0] != -2
    if init_ok:
        load = np.zeros(m, dtype=np.int64)
        for i in range(n):
            if init[i] >= 0:
                load[init[i]] += req[i]
            elif required[i]:
                init_ok = False
        for j in range(m):
            if load[j] > cap[j]:
                init_ok = False
    if init_ok:
        best = assignment_value(val, init)
    if known_opt > best:
        best = known_opt

    cap_c = 16
    cand_val = np.empty(cap_c)
    cand = np.empty((cap_c, n), dtype=np.int64)
    n_cand = 0
    gap_ub = NEG_INF
    open_ub = NEG_INF
    status = STATUS_DONE
    nodes = 0

    depth = 0
    while depth >= 0:
        if depth == n:
            v = pre[n]
            if v > best:
                best = v
                keep = 0
                thr = best - tie_tol(best, rtol)
                for c in range(n_cand):
                    if cand_val[c] >= thr:
                        cand_val[keep] = cand_val[c]
                        cand[keep] = cand[c]
                        keep += 1
                n_cand = keep
            if v >= best - tie_tol(best, rtol):
                if n_cand == cap_c:
                    cap_c *= 2
                    nv = np.empty(cap_c)
                    nv[:n_cand] = cand_val[:n_cand]
                    nc = np.empty((cap_c, n), dtype=np.int64)
                    nc[:n_cand] = cand[:n_cand]
                    cand_val = nv
                    cand = nc
                cand_val[n_cand] = v
                cand[n_cand] = assign[:n]
                n_cand += 1
                if known_opt > NEG_INF and v >= known_opt - tie_tol(known_opt, rtol):
                    break
            depth -= 1
            continue

        if (nodes & (_CHECK_EVERY - 1)) == 0 and nodes > 0:
            if nodes >= node_limit or _now() > deadline:
                status = STATUS_LIMIT
                break

        a = assign[depth]
        if a >= 0:
            rc[a] += req[depth]
        assign[depth] = -2
        ci = nxt[depth]
        if ci > m:
            depth -= 1
            continue
        nxt[depth] = ci + 1
        if ci == m:
            if required[depth]:
                continue
            c = -1
            vc = pre[depth]
        else:
            c = ci
            if req[depth] > rc[c]:
                continue
            vc = pre[depth] + val[depth, c]
        assign[depth] = c
        if c >= 0:
            rc[c] -= req[depth]
        nodes += 1
        ub = vc + _gap_rest_bound(val, req, rc, required, lam, depth + 1)
        if ub < best - tie_tol(best, rtol):
            continue
        if gap_tol > 0.0 and best > NEG_INF and ub - best <= gap_tol * max(1.0, abs(ub)):
            gap_ub = max(gap_ub, ub)
            continue
        pre[depth + 1] = vc
        depth += 1
        nxt[depth] = 0
        if depth < n:
            assign[depth] = -2

    if status == STATUS_LIMIT:
        # bound the unexplored part: remaining siblings along the current path
        d = depth
        while d >= 0:
            a = assign[d]
            if a >= 0:
                rc[a] += req[d]
            assign[d] = -2
            for ci in range(nxt[d], m + 1):
                if ci == m:
                    if required[d]:
                        continue
                    vc = pre[d]
                    ub = vc + _gap_rest_bound(val, req, rc, required, lam, d + 1)
                else:
                    if req[d] > rc[ci]:
                        continue
                    rc[ci] -= req[d]
                    ub = pre[d] + val[d, ci] + _gap_rest_bound(val, req, rc, required, lam, d + 1)
                    rc[ci] += req[d]
                open_ub = max(open_ub, ub)
            d -= 1

    out = np.full(n, -1, dtype=np.int64)
    if n_cand > 0:
        thr = best - tie_tol(best, rtol)
        for c in range(n_cand):
            if cand_val[c] >= thr:
                out[:] = cand[c]
                break
    elif init_ok:
        out[:] = init
    elif status == STATUS_DONE:
        return out, NEG_INF, NEG_INF, STATUS_INFEASIBLE, nodes
    value = assignment_value(val, out) if (n_cand > 0 or init_ok) else NEG_INF
    bound = max(best, max(gap_ub, open_ub))
    return out, value, bound, status, nodes


@numba.njit(cache=True)
def gap_value_search(val, req, cap, required, lam, lower, target, node_limit, deadline, incumbent):
    """Optimal GAP value only, searched in whatever order prunes best.

    Users with the largest requests are branched on first and each user's
    children are tried by decreasing Lagrangian value. ``lower`` is the value
    of a known feasible solution. Subtrees that cannot reach ``target`` are
    cut as well; if the optimum is proven to lie below ``target`` the status
    is STATUS_BELOW. Returns ``(value, bound, status, nodes)``.

    If ``incumbent`` has one slot per user (pass an empty array otherwise), every leaf improving on ``lower``
    is written into it, so it ends up holding the best assignment found.
    """
    n, m = val.shape
    order = np.argsort(-req, kind="mergesort")
    v = np.empty((n, m))
    rq = np.empty(n, dtype=np.int64)
    need = np.empty(n, dtype=np.bool_)
    for t in range(n):
        v[t] = val[order[t]]
        rq[t] = req[order[t]]
        need[t] = required[order[t]]
    kids = np.empty((n, m + 1), dtype=np.int64)
    score = np.empty(m + 1)
    for t in range(n):
        for j in range(m):
            score[j] = v[t, j] - lam[j] * rq[t]
        score[m] = 0.0 if not need[t] else NEG_INF
        ks = np.argsort(-score, kind="mergesort")
        for c in range(m + 1):
            kids[t, c] = ks[c]

    rc = cap.copy()
    assign = np.full(n, -2, dtype=np.int64)
    nxt = np.zeros(n + 1, dtype=np.int64)
    pre = np.zeros(n + 1)
    best = lower
    open_ub = NEG_INF
    status = STATUS_DONE
    nodes = 0
    depth = 0
    while depth >= 0:
        if depth == n:
            if pre[n] > best:
                best = pre[n]
                if incumbent.shape[0] == n:
                    for t in range(n):
                        incumbent[order[t]] = assign[t]
            depth -= 1
            continue
        if (nodes & (_CHECK_EVERY - 1)) == 0 and nodes > 0:
            if nodes >= node_limit or _now() > deadline:
                status = STATUS_LIMIT
                break
        a = assign[depth]
        if a >= 0:
            rc[a] += rq[depth]
        assign[depth] = -2
        ci = nxt[depth]
        if ci > m:
            depth -= 1
            continue
        nxt[depth] = ci + 1
        c = kids[depth, ci]
        if c == m:
            if need[depth]:
                continue
            vc = pre[depth]
            c = -1
        else:
            if rq[depth] > rc[c]:
                continue
            vc = pre[depth] + v[depth, c]
        assign[depth] = c
        if c >= 0:
            rc[c] -= rq[depth]
        nodes += 1
        ub = vc + _gap_rest_bound(v, rq, rc, need, lam, depth + 1)
        if ub <= best or ub < target:
            continue
        pre[depth + 1] = vc
        depth += 1
        nxt[depth] = 0
        if depth < n:
            assign[depth] = -2

    if status == STATUS_LIMIT:
        d = depth
        while d >= 0:
            a = assign[d]
            if a >= 0:
                rc[a] += rq[d]
            assign[d] = -2
            for ci in range(nxt[d], m + 1):
                c = kids[d, ci]
                if c == m:
                    if need[d]:
                        continue
                    ub = pre[d] + _gap_rest_bound(v, rq, rc, need, lam, d + 1)
                else:
                    if rq[d] > rc[c]:
                        continue
                    rc[c] -= rq[d]
                    ub = pre[d] + v[d, c] + _gap_rest_bound(v, rq, rc, need, lam, d + 1)
                    rc[c] += rq[d]
                open_ub = max(open_ub, ub)
            d -= 1
        return best, max(best, open_ub), status, nodes
    if best < target:
        return best, best, STATUS_BELOW, nodes
    return best, best, STATUS_DONE, nodes


@numba.njit(cache=True)
def scenario_values(q2k, rho, x1):
    """Net stage-2 values for one scenario given a full stage-1 assignment."""
    n, m = q2k.shape
    val = np.empty((n, m))
    for i in range(n):
        a = x1[i]
        for j in range(m):
            val[i, j] = q2k[i, j]
            if a >= 0 and a != j:
                val[i, j] -= rho[a, j]
    return val


@numba.njit(cache=True)
def scenario_value(q2k, req, cap, rho, lam, x1, target, node_limit, deadline):
    """Optimal recourse value for one scenario: (value, bound, status, nodes).

    Staying on the stage-1 servers is always feasible (energy use does not
    depend on position), so its value seeds the search.
    """
    val = scenario_values(q2k, rho, x1)
    required = x1 >= 0
    lower = assignment_value(val, x1)
    return gap_value_search(
        val, req, cap, required, lam, lower, target, node_limit, deadline, np.empty(0, dtype=np.int64)
    )


@numba.njit(cache=True)
def solve_scenario(q2k, req, cap, rho, lam, x1, rtol, node_limit, deadline):
    """Lexicographically first optimal recourse: (assign, value, bound, status, nodes)."""
    val = scenario_values(q2k, rho, x1)
    required = x1 >= 0
    feasible = True
    load = np.zeros(cap.shape[0], dtype=np.int64)
    for i in range(x1.shape[0]):
        if x1[i] >= 0:
            load[x1[i]] += req[i]
    for j in range(cap.shape[0]):
        if load[j] > cap[j]:
            feasible = False
    opt = NEG_INF
    nodes = 0
    init = np.full(x1.shape[0], -2, dtype=np.int64)
    if feasible:
        # the value search tracks its best assignment, which then seeds the ordered search
        init = x1.copy()
        opt, b, st, nodes = gap_value_search(
            val, req, cap, required, lam, assignment_value(val, x1), NEG_INF, node_limit, deadline, init
        )
        if st != STATUS_DONE:
            return init, assignment_value(val, init), b, st, nodes
    a, v, b, st, nd = gap_search(
        val, req, cap, required, lam, init, rtol, 0.0, node_limit, deadline, opt
    )
    return a, v, b, st, nodes + nd


@numba.njit(cache=True)
def stage2_lagrange_terms(q2, req, cap, rho, lam2):
    """g[k, i, a]: Lagrangian value of user i in scenario k if its stage-1 choice is a.

    Index ``a == S`` stands for unassigned in stage 1 (then the user may also
    stay unassigned in stage 2 at value 0).
    """
    K, n, m = q2.shape
    g = np.empty((K, n, m + 1))
    for k in range(K):
        for i in range(n):
            for a in range(m + 1):
                best = 0.0 if a == m else NEG_INF
                for j in range(m):
                    if req[i] > cap[j]:
                        continue
                    v = q2[k, i, j] - lam2[k, j] * req[i]
                    if a < m and a != j:
                        v -= rho[a, j]
                    if v > best:
                        best = v
                g[k, i, a] = best
    return g


@numba.njit(cache=True)
def _outer_child_bound(q1, req, rc, mu, mu_j, h, start, v1, hsum, s2tot, const2):
    n, m = q1.shape
    free = 0.0
    lag1 = 0.0
    joint = hsum + const2
    for j in range(m):
        lag1 += mu[j] * rc[j]
        joint += mu_j[j] * rc[j]
    for i in range(start, n):
        bf = 0.0
        bl = 0.0
        bj = h[i, m]
        for j in range(m):
            if req[i] <= rc[j]:
                if q1[i, j] > bf:
                    bf = q1[i, j]
                v = q1[i, j] - mu[j] * req[i]
                if v > bl:
                    bl = v
                v = q1[i, j] - mu_j[j] * req[i] + h[i, j]
                if v > bj:
                    bj = v
        free += bf
        lag1 += bl
        joint += bj
    return v1 + min(min(free, lag1) + s2tot, joint)


@numba.njit(cache=True)
def _leaf_scenario_bounds(g, lam2, cap, s2max, x1):
    K, n, mp1 = g.shape
    m = mp1 - 1
    ub = np.empty(K)
    for k in range(K):
        t = 0.0
        for j in range(m):
            t += lam2[k, j] * cap[j]
        for i in range(n):
            a = x1[i] if x1[i] >= 0 else m
            t += g[k, i, a]
        ub[k] = min(s2max[k], t)
    return ub


@numba.njit(cache=True)
def leaf_value(q1, q2, req, cap, rho, prob, lam2, x1, node_limit, deadline):
    """Objective of a feasible stage-1 assignment under optimal recourse.

    Returns (value, bound, status, nodes).
    """
    K = q2.shape[0]
    total = assignment_value(q1, x1)
    bound = total
    nodes = 0
    status = STATUS_DONE
    for k in range(K):
        v, b, st, nd = scenario_value(q2[k], req, cap, rho, lam2[k], x1, NEG_INF, node_limit, deadline)
        nodes += nd
        total += prob[k] * v
        bound += prob[k] * b
        if st != STATUS_DONE:
            status = st
    return total, bound, status, nodes


@numba.njit(cache=True)
def evaluate_leaf(q1, q2, req, cap, rho, prob, lam2, x1, rtol, node_limit, deadline):
    """Stage-1 assignment with its lexicographically first optimal recourse.

    Returns (value, x2, bound, status, nodes); x2 rows use the internal encoding.
    """
    K, n, m = q2.shape
    x2 = np.empty((K, n), dtype=np.int64)
    total = assignment_value(q1, x1)
    bound = total
    nodes = 0
    status = STATUS_DONE
    for k in range(K):
        a, v, b, st, nd = solve_scenario(q2[k], req, cap, rho, lam2[k], x1, rtol, node_limit, deadline)
        nodes += nd
        x2[k] = a
        total += prob[k] * v
        bound += prob[k] * b
        if st != STATUS_DONE:
            status = st
    return total, x2, bound, status, nodes


@numba.njit(cache=True)
def joint_terms(g, lam2, prob, cap):
    """Expected per-user recourse terms ``h[i, a]`` and the constant of the joint bound."""
    K, n, mp1 = g.shape
    h = np.zeros((n, mp1))
    const2 = 0.0
    for k in range(K):
        for j in range(mp1 - 1):
            const2 += prob[k] * lam2[k, j] * cap[j]
        for i in range(n):
            for a in range(mp1):
                h[i, a] += prob[k] * g[k, i, a]
    return h, const2


@numba.njit(cache=True)
def outer_search(
    q1, q2, req, cap, rho, prob, mu, lam2, g, s2max, mu_j, h, const2, init, init_value,
    rtol, gap_tol, node_limit, inner_node_limit, deadline,
):
    """Depth-first search over stage-1 assignments with recourse at the leaves.

    ``mu``/``lam2``/``g`` are the separately tuned multipliers used for the
    stage-wise bounds; ``mu_j`` with ``h``/``const2`` (from :func:`joint_terms`)
    feed the joint bound. Returns (x1, value, bound, status, nodes, leaves).
    """
    K, n, m = q2.shape
    s2tot = 0.0
    for k in range(K):
        s2tot += prob[k] * s2max[k]

    rc = cap.copy()
    assign = np.full(n, -2, dtype=np.int64)
    nxt = np.zeros(n + 1, dtype=np.int64)
    pre = np.zeros(n + 1)
    hpre = np.zeros(n + 1)

    best = init_value
    cap_c = 16
    cand_val = np.empty(cap_c)
    cand = np.empty((cap_c, n), dtype=np.int64)
    n_cand = 0
    gap_ub = NEG_INF
    open_ub = NEG_INF
    status = STATUS_DONE
    nodes = 0
    leaves = 0
    inner_nodes = 0

    depth = 0
    while depth >= 0:
        if depth == n:
            x1 = assign[:n].copy()
            leaves += 1
            v1 = pre[n]
            ub_k = _leaf_scenario_bounds(g, lam2, cap, s2max, x1)
            running = v1
            for k in range(K):
                running += prob[k] * ub_k[k]
            vals = np.empty(K)
            pruned = False
            for k in range(K):
                floor = best - tie_tol(best, rtol)
                if running < floor:
                    pruned = True
                    break
                rest = running - prob[k] * ub_k[k]
                target = (floor - rest) / prob[k] if prob[k] > 0.0 else NEG_INF
                budget = min(inner_node_limit, max(1, node_limit - nodes - inner_nodes))
                v, b, st, nd = scenario_value(
                    q2[k], req, cap, rho, lam2[k], x1, target, budget, deadline
                )
                inner_nodes += nd
                if st == STATUS_BELOW:
                    pruned = True
                    break
                if st != STATUS_DONE:
                    status = STATUS_LIMIT
                    open_ub = max(open_ub, rest + prob[k] * b)
                    break
                running = rest + prob[k] * v
                vals[k] = v
            value = v1
            if not pruned and status == STATUS_DONE:
                for k in range(K):
                    value += prob[k] * vals[k]
            if status == STATUS_LIMIT:
                break
            if not pruned:
                if value > best:
                    best = value
                    keep = 0
                    thr = best - tie_tol(best, rtol)
                    for c in range(n_cand):
                        if cand_val[c] >= thr:
                            cand_val[keep] = cand_val[c]
                            cand[keep] = cand[c]
                            keep += 1
                    n_cand = keep
                if value >= best - tie_tol(best, rtol):
                    if n_cand == cap_c:
                        cap_c *= 2
                        nv = np.empty(cap_c)
                        nv[:n_cand] = cand_val[:n_cand]
                        nc = np.empty((cap_c, n), dtype=np.int64)
                        nc[:n_cand] = cand[:n_cand]
                        cand_val = nv
                        cand = nc
                    cand_val[n_cand] = value
                    cand[n_cand] = x1
                    n_cand += 1
            depth -= 1
            if nodes + inner_nodes >= node_limit or _now() > deadline:
                status = STATUS_LIMIT
                break
            continue

        if (nodes & 255) == 0 and nodes > 0:
            if nodes + inner_nodes >= node_limit or _now() > deadline:
                status = STATUS_LIMIT
                break

        a = assign[depth]
        if a >= 0:
            rc[a] += req[depth]
        assign[depth] = -2
        ci = nxt[depth]
        if ci > m:
            depth -= 1
            continue
        nxt[depth] = ci + 1
        if ci == m:
            c = -1
            v1 = pre[depth]
            hv = hpre[depth] + h[depth, m]
        else:
            c = ci
            if req[depth] > rc[c]:
                continue
            v1 = pre[depth] + q1[depth, c]
            hv = hpre[depth] + h[depth, c]
        assign[depth] = c
        if c >= 0:
            rc[c] -= req[depth]
        nodes += 1
        ub = _outer_child_bound(q1, req, rc, mu, mu_j, h, depth + 1, v1, hv, s2tot, const2)
        if ub < best - tie_tol(best, rtol):
            continue
        if gap_tol > 0.0 and best > NEG_INF and ub - best <= gap_tol * max(1.0, abs(ub)):
            gap_ub = max(gap_ub, ub)
            continue
        pre[depth + 1] = v1
        hpre[depth + 1] = hv
        depth += 1
        nxt[depth] = 0
        if depth < n:
            assign[depth] = -2

    if status == STATUS_LIMIT:
        d = min(depth, n - 1)
        while d >= 0:
            a = assign[d]
            if a >= 0:
                rc[a] += req[d]
            assign[d] = -2
            for ci in range(nxt[d], m + 1):
                if ci == m:
                    ub = _outer_child_bound(
                        q1, req, rc, mu, mu_j, h, d + 1, pre[d], hpre[d] + h[d, m], s2tot, const2
                    )
                else:
                    if req[d] > rc[ci]:
                        continue
                    rc[ci] -= req[d]
                    ub = _outer_child_bound(
                        q1, req, rc, mu, mu_j, h, d + 1, pre[d] + q1[d, ci], hpre[d] + h[d, ci],
                        s2tot, const2,
                    )
                    rc[ci] += req[d]
                open_ub = max(open_ub, ub)
            d -= 1

    out = np.full(n, -2, dtype=np.int64)
    if n_cand > 0:
        thr = best - tie_tol(best, rtol)
        for c in range(n_cand):
            if cand_val[c] >= thr:
                out[:] = cand[c]
                best = cand_val[c]
                break
    bound = max(best, max(gap_ub, open_ub))
    return out, best, bound, status, nodes + inner_nodes, leaves
