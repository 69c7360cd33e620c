"""Transportation simplex kernel for exact discrete optimal transport.

Solves  min <gamma, cost>  s.t.  gamma @ 1 = a,  gamma.T @ 1 = b,  gamma >= 0
on the dense bipartite transport polytope. The basis is maintained as a
spanning tree over n + m nodes (sources then sinks):

  * initial basic feasible solution: northwest-corner rule
  * entering variable: most negative reduced cost (Dantzig), ties broken
    toward the lexicographically smallest (row-major) cell; after a run of
    consecutive degenerate pivots the rule switches to Bland's rule (first
    improving cell) until flow moves again, which rules out cycling while
    keeping the fast rule on the non-degenerate steps
  * leaving variable: minimum flow on the cycle's minus-edges, ties broken
    toward the lexicographically smallest cell

Every choice above is deterministic, so equal inputs give bit-identical
plans and tie-breaking between equally optimal vertices is reproducible.

Runs under numba when available; the interpreted fallback executes the
identical code path, so both produce bit-identical plans.
"""

import numpy as np

from ._accel import njit


@njit(cache=True)
def transport_simplex(cost, a, b, tol):
    n, m = cost.shape
    nodes = n + m
    ne = nodes - 1
    flow = np.zeros((n, m))
    in_basis = np.zeros((n, m), np.uint8)
    basis_i = np.empty(ne, np.int64)
    basis_j = np.empty(ne, np.int64)

    # Northwest-corner start: walks from (0,0) to (n-1,m-1), one step per
    # allocation, which yields exactly n+m-1 basic cells (zeros included).
    a_rem = a.copy()
    b_rem = b.copy()
    i = 0
    j = 0
    for e in range(ne):
        x = a_rem[i] if a_rem[i] < b_rem[j] else b_rem[j]
        if x < 0.0:
            x = 0.0
        flow[i, j] = x
        in_basis[i, j] = 1
        basis_i[e] = i
        basis_j[e] = j
        a_rem[i] -= x
        b_rem[j] -= x
        if i == n - 1 and j == m - 1:
            break
        if i == n - 1:
            j += 1
        elif j == m - 1:
            i += 1
        elif a_rem[i] <= b_rem[j]:
            i += 1
        else:
            j += 1

    u = np.empty(n)
    v = np.empty(m)
    deg = np.empty(nodes, np.int64)
    adj_off = np.empty(nodes + 1, np.int64)
    adj_edge = np.empty(2 * ne, np.int64)
    known = np.empty(nodes, np.uint8)
    stack = np.empty(nodes, np.int64)
    parent_node = np.empty(nodes, np.int64)
    parent_edge = np.empty(nodes, np.int64)
    path_edges = np.empty(ne, np.int64)

    max_pivots = 200 * (n * m + 16)
    stall_limit = 2 * nodes
    stalled = 0
    bland = False
    for _pivot in range(max_pivots):
        # Adjacency of the current basis tree.
        for t in range(nodes):
            deg[t] = 0
        for e in range(ne):
            deg[basis_i[e]] += 1
            deg[n + basis_j[e]] += 1
        adj_off[0] = 0
        for t in range(nodes):
            adj_off[t + 1] = adj_off[t] + deg[t]
            deg[t] = 0
        for e in range(ne):
            s = basis_i[e]
            t = n + basis_j[e]
            adj_edge[adj_off[s] + deg[s]] = e
            deg[s] += 1
            adj_edge[adj_off[t] + deg[t]] = e
            deg[t] += 1

        # Duals u_i + v_j = c_ij on basic cells, anchored at u_0 = 0.
        for t in range(nodes):
            known[t] = 0
        u[0] = 0.0
        known[0] = 1
        stack[0] = 0
        top = 0
        while top >= 0:
            node = stack[top]
            top -= 1
            for p in range(adj_off[node], adj_off[node + 1]):
                e = adj_edge[p]
                src = basis_i[e]
                snk = n + basis_j[e]
                other = snk if node == src else src
                if known[other] == 1:
                    continue
                if other >= n:
                    v[other - n] = cost[src, other - n] - u[src]
                else:
                    u[other] = cost[other, basis_j[e]] - v[basis_j[e]]
                known[other] = 1
                top += 1
                stack[top] = other

        # Entering cell.
        enter_i = -1
        enter_j = -1
        if bland:
            for r in range(n):
                ur = u[r]
                for c in range(m):
                    if in_basis[r, c] == 0 and cost[r, c] - ur - v[c] < -tol:
                        enter_i = r
                        enter_j = c
                        break
                if enter_i >= 0:
                    break
        else:
            best = -tol
            for r in range(n):
                ur = u[r]
                for c in range(m):
                    if in_basis[r, c] == 0:
                        red = cost[r, c] - ur - v[c]
                        if red < best:
                            best = red
                            enter_i = r
                            enter_j = c
        if enter_i < 0:
            obj = 0.0
            for r in range(n):
                for c in range(m):
                    if flow[r, c] < 0.0:
                        flow[r, c] = 0.0
                    obj += flow[r, c] * cost[r, c]
            return flow, obj, 1

        # Unique tree path from source node enter_i to sink node n+enter_j.
        for t in range(nodes):
            parent_node[t] = -1
        target = n + enter_j
        parent_node[enter_i] = enter_i
        parent_edge[enter_i] = -1
        stack[0] = enter_i
        top = 0
        while top >= 0:
            node = stack[top]
            top -= 1
            if node == target:
                break
            for p in range(adj_off[node], adj_off[node + 1]):
                e = adj_edge[p]
                src = basis_i[e]
                snk = n + basis_j[e]
                other = snk if node == src else src
                if parent_node[other] >= 0:
                    continue
                parent_node[other] = node
                parent_edge[other] = e
                top += 1
                stack[top] = other

        n_path = 0
        node = target
        while node != enter_i:
            path_edges[n_path] = parent_edge[node]
            n_path += 1
            node = parent_node[node]

        # Walking from the sink end, path edges alternate -, +, -, ...
        # relative to +theta on the entering cell; minus-edges sit at even
        # positions. theta = min flow there; lexicographic leaving tie-break.
        theta = np.inf
        leave_pos = -1
        leave_i = -1
        leave_j = -1
        for p in range(0, n_path, 2):
            e = path_edges[p]
            fi = basis_i[e]
            fj = basis_j[e]
            f = flow[fi, fj]
            if f < theta or (
                f == theta and (fi < leave_i or (fi == leave_i and fj < leave_j))
            ):
                theta = f
                leave_pos = p
                leave_i = fi
                leave_j = fj

        if theta > 0.0:
            stalled = 0
            bland = False
        else:
            stalled += 1
            if stalled >= stall_limit:
                bland = True

        flow[enter_i, enter_j] += theta
        sign = -1.0
        for p in range(n_path):
            e = path_edges[p]
            flow[basis_i[e], basis_j[e]] += sign * theta
            sign = -sign

        le = path_edges[leave_pos]
        in_basis[basis_i[le], basis_j[le]] = 0
        flow[basis_i[le], basis_j[le]] = 0.0
        basis_i[le] = enter_i
        basis_j[le] = enter_j
        in_basis[enter_i, enter_j] = 1

    # Pivot budget exhausted; Bland's rule makes this unreachable for
    # well-posed inputs, but report failure rather than a wrong plan.
    obj = 0.0
    for r in range(n):
        for c in range(m):
            obj += flow[r, c] * cost[r, c]
    return flow, obj, 0
