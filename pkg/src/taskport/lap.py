"""Exact square linear assignment with a deterministic tie-break.

The solver is a Jonker-Volgenant style shortest-augmenting-path scheme
(O(n^3)).  Because every optimal assignment is complementary to the optimal
duals, the set of optimal assignments equals the set of perfect matchings on
the zero-reduced-cost ("tight") edges; a second pass walks the rows in order
and greedily commits the smallest tight column that still leaves the rest
matchable, so ties always resolve to the lexicographically smallest optimal
permutation.
"""

from __future__ import annotations

import numpy as np

from .perms import Perm

_TIGHT_RTOL = 1e-10


def _check_cost(c) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] < 1:
        raise ValueError(f"cost matrix must be square and non-empty, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix contains non-finite entries")
    return c


def _shortest_augmenting_paths(cost: np.ndarray):
    """Solve min-cost assignment; return (col_of_row, u, v) with optimal duals."""
    n = cost.shape[0]
    u = np.zeros(n)
    v = np.zeros(n)
    col_of_row = np.full(n, -1, dtype=np.int64)
    row_of_col = np.full(n, -1, dtype=np.int64)

    for cur in range(n):
        # Dijkstra over columns, growing an alternating tree from row `cur`.
        dist = np.full(n, np.inf)
        pred = np.full(n, cur, dtype=np.int64)
        remaining = np.ones(n, dtype=bool)
        scanned_rows = [cur]
        min_val = 0.0
        i = cur
        sink = -1
        while sink < 0:
            idx = np.flatnonzero(remaining)
            cand = min_val + cost[i, idx] - u[i] - v[idx]
            better = cand < dist[idx]
            dist[idx[better]] = cand[better]
            pred[idx[better]] = i

            pos = int(np.argmin(dist[idx]))
            j = int(idx[pos])
            min_val = dist[j]
            remaining[j] = False
            if row_of_col[j] < 0:
                sink = j
            else:
                i = int(row_of_col[j])
                scanned_rows.append(i)

        # Dual update keeps reduced costs non-negative and tight on the tree.
        u[cur] += min_val
        for r in scanned_rows[1:]:
            u[r] += min_val - dist[col_of_row[r]]
        scanned_cols = np.flatnonzero(~remaining)
        v[scanned_cols] -= min_val - dist[scanned_cols]

        # Augment backwards along the predecessor chain.
        j = sink
        while True:
            i = int(pred[j])
            row_of_col[j] = i
            col_of_row[i], j = j, int(col_of_row[i])
            if i == cur:
                break

    return col_of_row, u, v


def _lex_smallest_on_tight(cost: np.ndarray, col_of_row: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Refine an optimal assignment to the lexicographically smallest one.

    Operates on the bipartite graph of tight edges (reduced cost ~ 0); any
    perfect matching there is optimal, so committing the smallest feasible
    column per row, in row order, yields the lexicographic minimum.
    """
    n = cost.shape[0]
    reduced = cost - u[:, None] - v[None, :]
    scale = max(1.0, float(np.abs(cost).max()))
    tight = [np.flatnonzero(reduced[i] <= _TIGHT_RTOL * scale) for i in range(n)]

    col_of = col_of_row.copy()
    row_of = np.full(n, -1, dtype=np.int64)
    row_of[col_of] = np.arange(n)
    frozen = np.zeros(n, dtype=bool)  # columns committed to rows already walked

    def reaugment(start_row: int, banned: np.ndarray) -> bool:
        # Kuhn-style alternating path over tight edges; mutates the matching
        # only along a successful path.
        visited = np.zeros(n, dtype=bool)

        def dfs(r: int) -> bool:
            for j2 in tight[r]:
                j2 = int(j2)
                if banned[j2] or visited[j2]:
                    continue
                visited[j2] = True
                holder = int(row_of[j2])
                if holder < 0 or dfs(holder):
                    row_of[j2] = r
                    col_of[r] = j2
                    return True
            return False

        return dfs(start_row)

    for i in range(n):
        current = int(col_of[i])
        for j in tight[i]:
            j = int(j)
            if j >= current:
                break  # ascending scan; the current column wins from here on
            if frozen[j]:
                continue
            holder = int(row_of[j])
            # Tentatively hand j to row i; the displaced row must re-augment.
            col_of[i] = j
            row_of[j] = i
            row_of[current] = -1
            col_of[holder] = -1
            banned = frozen.copy()
            banned[j] = True
            if reaugment(holder, banned):
                current = j
                break
            # Roll back.
            col_of[i] = current
            row_of[current] = i
            row_of[j] = holder
            col_of[holder] = j
        frozen[current] = True

    return col_of


def solve_min(cost) -> tuple[Perm, float]:
    """Minimize sum_i cost[i, p[i]] over permutations p.

    Returns the lexicographically smallest optimal permutation and its total
    cost.  Optimality ties are recognized at a relative resolution of about
    1e-10: permutations whose totals coincide to that level resolve by
    lexicographic order, never by sub-ulp float summation accidents (which
    depend on evaluation order and carry no information).  Raises ValueError
    on non-square or non-finite input.
    """
    c = _check_cost(cost)
    col_of_row, u, v = _shortest_augmenting_paths(c)
    p = _lex_smallest_on_tight(c, col_of_row, u, v)
    total = float(np.sum(c[np.arange(c.shape[0]), p]))
    return p.astype(np.int64), total


def solve_max(values) -> tuple[Perm, float]:
    """Maximize sum_i values[i, p[i]]; same determinism contract as solve_min."""
    c = _check_cost(values)
    p, neg_total = solve_min(-c)
    return p, -neg_total
