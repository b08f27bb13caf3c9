"""Pure-Python/NumPy versions of the assignment kernels.

Same signatures and results as the compiled ``ltw2._core`` module. The
shortest-augmenting-path search is vectorised over columns, so each
augmentation costs O(n) NumPy calls rather than O(n^2) interpreted steps.
"""
import numpy as np


def _augment(c, f, x, y, v):
    # Dijkstra from free row f over reduced costs; returns updated v in place.
    n = c.shape[0]
    d = c[f] - v
    pred = np.full(n, f, dtype=np.int64)
    done = np.zeros(n, dtype=bool)
    mn = 0.0
    while True:
        masked = np.where(done, np.inf, d)
        j = int(np.argmin(masked))
        mn = masked[j]
        # prefer a free column among the current minima
        ties = np.flatnonzero(masked == mn)
        free = ties[y[ties] < 0]
        if free.size:
            j = int(free[0])
            break
        done[j] = True
        i = y[j]
        h = c[i] - v - (c[i, j] - v[j] - mn)
        better = (~done) & (h < d)
        d[better] = h[better]
        pred[better] = i
    v[done] += d[done] - mn
    end = j
    while True:
        i = pred[end]
        y[end] = i
        x[i], end = end, x[i]
        if i == f:
            break


def _column_reduction(c, x, y, v):
    v[:] = c.min(axis=0)
    imin = c.argmin(axis=0)
    for j, i in enumerate(imin):
        if x[i] < 0:
            x[i] = j
            y[j] = i


def _kuhn(c, u, v, tol, r, target, fixed_upto, banned, x, y, seen):
    tight = np.flatnonzero(c[r] - u[r] - v <= tol)
    for cc in tight:
        if cc == banned or seen[cc]:
            continue
        if cc == target:
            x[r] = cc
            y[cc] = r
            return True
        owner = y[cc]
        if owner <= fixed_upto:
            continue
        seen[cc] = True
        if _kuhn(c, u, v, tol, owner, target, fixed_upto, banned, x, y, seen):
            x[r] = cc
            y[cc] = r
            return True
    return False


def _dual_reduction(c, x, y, u, v):
    # row duals from given column duals; a row takes its cheapest column if free
    red = c - v
    am = red.argmin(axis=1)
    for i in range(c.shape[0]):
        u[i] = red[i, am[i]]
        if y[am[i]] < 0:
            x[i] = am[i]
            y[am[i]] = i


def _lexmin(c, x, y, u, v, tol):
    n = c.shape[0]
    u[:] = c[np.arange(n), x] - v[x]
    for i in range(n):
        cur = x[i]
        cand = np.flatnonzero(c[i, :cur] - u[i] - v[:cur] <= tol)
        for j in cand:
            r = y[j]
            if r <= i:
                continue
            seen = np.zeros(n, dtype=bool)
            seen[j] = True
            x[i] = j
            y[j] = i
            y[cur] = -1
            if _kuhn(c, u, v, tol, r, cur, i, j, x, y, seen):
                break
            x[i] = cur
            y[cur] = i
            y[j] = r


def _solve(c, x, y, v, u, lexmin, rtol):
    n = c.shape[0]
    for i in range(n):
        if x[i] < 0:
            _augment(c, i, x, y, v)
    if lexmin:
        tol = rtol * float(np.abs(c).max()) if c.size else 0.0
        _lexmin(c, x, y, u, v, tol)
    else:
        u[:] = c[np.arange(n), x] - v[x]


def lsa(cost, lexmin=True, rtol=1e-12):
    """Minimum-cost perfect matching of a dense square cost matrix.

    Returns ``(row_to_col, u, v)`` with optimal row/column duals.
    """
    c = np.ascontiguousarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError("cost matrix must be square")
    n = c.shape[0]
    x = np.full(n, -1, dtype=np.int64)
    y = np.full(n, -1, dtype=np.int64)
    u = np.zeros(n)
    v = np.zeros(n)
    if n == 0:
        return x, u, v
    _column_reduction(c, x, y, v)
    _solve(c, x, y, v, u, lexmin, rtol)
    return x, u, v


def group_plans(A, B, indptr, indices, order, lexmin=True, warm=True, rtol=1e-12,
                v_in=None, v_out=None):
    """Solve one assignment per group of the local loss at a single time.

    See ``ltw2._core.group_plans``; results are identical.
    """
    A = np.ascontiguousarray(A, dtype=np.float64)
    B = np.ascontiguousarray(B, dtype=np.float64)
    indptr = np.asarray(indptr, dtype=np.int64)
    indices = np.asarray(indices, dtype=np.int64)
    order = np.asarray(order, dtype=np.int64)
    if A.shape != B.shape:
        raise ValueError("observed and predicted clouds must have equal shapes")
    N, dim = A.shape
    if v_in is not None:
        v_in = np.asarray(v_in, dtype=np.float64)
        if v_in.shape != (N,):
            raise ValueError("v_in must have one price per point")
    costs = np.zeros(indptr.shape[0] - 1)
    match = np.empty(indices.shape[0], dtype=np.int64)
    if dim == 1:
        rank_a = np.empty(N, dtype=np.int64)
        rank_a[np.argsort(A[:, 0], kind="stable")] = np.arange(N)
        rank_b = np.empty(N, dtype=np.int64)
        rank_b[np.argsort(B[:, 0], kind="stable")] = np.arange(N)
    prev_x = np.zeros(N, dtype=np.int64)
    prev_v = np.zeros(N)
    inprev = np.zeros(N, dtype=bool)
    have_prev = False
    seen = np.zeros(N, dtype=bool)
    for g in order:
        ids = indices[indptr[g]:indptr[g + 1]]
        n = ids.size
        if n == 0:
            continue
        if dim == 1:
            obs = ids[np.argsort(rank_a[ids])]
            pos = np.argsort(np.argsort(rank_b[ids]))
            matched = obs[pos]
            match[indptr[g]:indptr[g + 1]] = matched
            costs[g] = float(np.sum((A[matched, 0] - B[ids, 0]) ** 2)) / n
            continue
        diff = A[ids][:, None, :] - B[ids][None, :, :]
        c = np.einsum("abk,abk->ab", diff, diff)
        x = np.full(n, -1, dtype=np.int64)
        y = np.full(n, -1, dtype=np.int64)
        u = np.zeros(n)
        v = np.zeros(n)
        if warm and have_prev:
            loc = {int(p): k for k, p in enumerate(ids)}
            known = inprev[ids]
            v[known] = prev_v[ids[known]]
            for a in range(n):
                r = ids[a]
                if inprev[r]:
                    b = loc.get(int(prev_x[r]), -1)
                    if b >= 0:
                        x[a] = b
                        y[b] = a
                        u[a] = c[a, b] - v[b]
            assigned = x >= 0
            for b in np.flatnonzero(~known):
                if assigned.any():
                    v[b] = np.min(c[assigned, b] - u[assigned])
                else:
                    v[b] = c[:, b].min()
        elif v_in is not None:
            v[:] = v_in[ids]
            _dual_reduction(c, x, y, u, v)
        else:
            _column_reduction(c, x, y, v)
        _solve(c, x, y, v, u, lexmin, rtol)
        costs[g] = float(c[np.arange(n), x].sum()) / n
        match[indptr[g]:indptr[g + 1]] = ids[y]
        inprev[:] = False
        inprev[ids] = True
        prev_x[ids] = ids[x]
        prev_v[ids] = v
        have_prev = True
        seen[ids] = True
    if v_out is not None:
        v_out[seen] = prev_v[seen]
    return costs, match
