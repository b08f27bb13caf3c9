# cython: language_level=3
"""Compiled assignment kernels.

Dense shortest-augmenting-path solver (Jonker-Volgenant augmentation with
column-reduction start), a lexicographic canonicalisation pass over the
tight subgraph of the optimal duals, and the grouped solver used by the
local loss, which chains neighbouring groups and warm-starts each solve
from the previous group's matching and column prices.

``ltw2._core_py`` mirrors every function here in pure Python/NumPy.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, fabs
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef void _augment(const double* c, Py_ssize_t ld, const int* m, int n, int f, int* x,
                   int* y, double* v, double* d, int* pred, int* col) noexcept nogil:
    # Dijkstra from free row f over reduced costs C[i, j] - v[j], where
    # C[i, j] = c[m[i] * ld + m[j]]; stops at the first free column reached
    # at the current minimum distance. Working arrays are kept in scan
    # position order (col[k] is the column at position k) so the relaxation
    # loop reads them contiguously. d and pred are indexed by position;
    # pred is scattered back to column order at the end. d, pred and col
    # each need room for 2n entries.
    cdef int j, k, low = 0, up = 0, last = 0, i, j1, endofpath = -1, tmp, lt
    cdef double mn = 0.0, h, u1, dk
    cdef int* gm = col + n
    cdef double* vp = d + n
    cdef int* pp = pred + n
    cdef const double* row = c + <Py_ssize_t>m[f] * ld
    for j in range(n):
        col[j] = j
        gm[j] = m[j]
        vp[j] = v[j]
        d[j] = row[m[j]] - v[j]
        pp[j] = f
    while True:
        if up == low:
            last = low
            mn = d[up]
            up += 1
            for k in range(up, n):
                h = d[k]
                if h <= mn:
                    if h < mn:
                        up = low
                        mn = h
                    _swap(col, gm, vp, d, pp, k, up)
                    up += 1
            for k in range(low, up):
                if y[col[k]] < 0:
                    endofpath = k
                    break
            if endofpath >= 0:
                break
        j1 = low
        low += 1
        i = y[col[j1]]
        row = c + <Py_ssize_t>m[i] * ld
        u1 = row[gm[j1]] - vp[j1] - mn
        for k in range(up, n):
            h = row[gm[k]] - vp[k] - u1
            dk = d[k]
            lt = h < dk
            d[k] = h if lt else dk
            pp[k] = i if lt else pp[k]
            if lt and h == mn:
                if y[col[k]] < 0:
                    endofpath = k
                    break
                _swap(col, gm, vp, d, pp, k, up)
                up += 1
        if endofpath >= 0:
            break
    for k in range(last):
        j = col[k]
        v[j] = v[j] + d[k] - mn
    for k in range(n):
        pred[col[k]] = pp[k]
    endofpath = col[endofpath]
    while True:
        i = pred[endofpath]
        y[endofpath] = i
        tmp = endofpath
        endofpath = x[i]
        x[i] = tmp
        if i == f:
            break


cdef inline void _swap(int* col, int* gm, double* vp, double* d, int* pp, int a,
                       int b) noexcept nogil:
    cdef int ti
    cdef double td
    ti = col[a]; col[a] = col[b]; col[b] = ti
    ti = gm[a]; gm[a] = gm[b]; gm[b] = ti
    ti = pp[a]; pp[a] = pp[b]; pp[b] = ti
    td = vp[a]; vp[a] = vp[b]; vp[b] = td
    td = d[a]; d[a] = d[b]; d[b] = td


cdef void _column_reduction(const double* c, Py_ssize_t ld, const int* m, int n, int* x,
                            int* y, double* v) noexcept nogil:
    cdef int i, j, imin
    cdef double best, h
    for j in range(n):
        best = INFINITY
        imin = 0
        for i in range(n):
            h = c[<Py_ssize_t>m[i] * ld + m[j]]
            if h < best:
                best = h
                imin = i
        v[j] = best
        if x[imin] < 0:
            x[imin] = j
            y[j] = imin


cdef void _dual_reduction(const double* c, Py_ssize_t ld, const int* m, int n, int* x,
                          int* y, double* u, const double* v) noexcept nogil:
    # row duals from given column duals; a row takes its cheapest column if free
    cdef int i, j, jmin
    cdef double best, h
    cdef const double* row
    for i in range(n):
        row = c + <Py_ssize_t>m[i] * ld
        best = INFINITY
        jmin = 0
        for j in range(n):
            h = row[m[j]] - v[j]
            if h < best:
                best = h
                jmin = j
        u[i] = best
        if y[jmin] < 0:
            x[i] = jmin
            y[jmin] = i


cdef int _kuhn(const double* c, Py_ssize_t ld, const int* m, int n, const double* u,
               const double* v, double tol, int r, int target, int fixed_upto, int banned,
               int* x, int* y, char* seen) noexcept nogil:
    # Alternating path from row r to column `target` over tight edges, using
    # only rows > fixed_upto. Rewires x/y along the path on success.
    cdef int cc, owner
    cdef const double* row = c + <Py_ssize_t>m[r] * ld
    for cc in range(n):
        if cc == banned or seen[cc]:
            continue
        if row[m[cc]] - u[r] - v[cc] > tol:
            continue
        if cc == target:
            x[r] = cc
            y[cc] = r
            return 1
        owner = y[cc]
        if owner <= fixed_upto:
            continue
        seen[cc] = 1
        if _kuhn(c, ld, m, n, u, v, tol, owner, target, fixed_upto, banned, x, y, seen):
            x[r] = cc
            y[cc] = r
            return 1
    return 0


cdef void _lexmin(const double* c, Py_ssize_t ld, const int* m, int n, int* x, int* y,
                  double* u, const double* v, double tol, char* seen) noexcept nogil:
    # Every optimal matching lies in the tight subgraph of an optimal dual, so
    # greedily fixing the smallest feasible column per row yields the
    # lexicographically smallest optimal permutation.
    cdef int i, j, cur, r, k
    cdef const double* row
    for i in range(n):
        u[i] = c[<Py_ssize_t>m[i] * ld + m[x[i]]] - v[x[i]]
    for i in range(n):
        cur = x[i]
        row = c + <Py_ssize_t>m[i] * ld
        for j in range(cur):
            if row[m[j]] - u[i] - v[j] > tol:
                continue
            r = y[j]
            if r <= i:
                continue
            for k in range(n):
                seen[k] = 0
            seen[j] = 1
            # row i takes j; row r must reach the column i releases
            x[i] = j
            y[j] = i
            y[cur] = -1
            if _kuhn(c, ld, m, n, u, v, tol, r, cur, i, j, x, y, seen):
                break
            x[i] = cur
            y[cur] = i
            y[j] = r


cdef double _max_abs(const double* c, Py_ssize_t ld, const int* m, int n) noexcept nogil:
    cdef int i, j
    cdef double best = 0.0
    cdef const double* row
    for i in range(n):
        row = c + <Py_ssize_t>m[i] * ld
        for j in range(n):
            if fabs(row[m[j]]) > best:
                best = fabs(row[m[j]])
    return best


def lsa(cost, bint lexmin=True, double rtol=1e-12):
    """Minimum-cost perfect matching of a dense square cost matrix.

    Returns ``(row_to_col, u, v)`` with optimal row/column duals.
    """
    cdef cnp.ndarray[double, ndim=2, mode="c"] cm = np.ascontiguousarray(cost, dtype=np.float64)
    cdef int n = cm.shape[0]
    if cm.shape[1] != n:
        raise ValueError("cost matrix must be square")
    x = np.full(n, -1, dtype=np.int32)
    y = np.full(n, -1, dtype=np.int32)
    u = np.zeros(n)
    v = np.zeros(n)
    if n == 0:
        return x.astype(np.int64), u, v
    ident = np.arange(n, dtype=np.int32)
    cdef int[::1] mv = ident
    cdef int[::1] xv = x
    cdef int[::1] yv = y
    cdef double[::1] uv = u
    cdef double[::1] vv = v
    cdef double* dbuf = <double*>malloc(2 * n * sizeof(double))
    cdef int* ibuf = <int*>malloc(4 * n * sizeof(int))
    cdef char* seen = <char*>malloc(n * sizeof(char))
    cdef const double* cp = &cm[0, 0]
    cdef const int* m = &mv[0]
    cdef int i
    cdef double tol
    try:
        with nogil:
            _column_reduction(cp, n, m, n, &xv[0], &yv[0], &vv[0])
            for i in range(n):
                if xv[i] < 0:
                    _augment(cp, n, m, n, i, &xv[0], &yv[0], &vv[0], dbuf, ibuf, ibuf + 2 * n)
            if lexmin:
                tol = rtol * _max_abs(cp, n, m, n)
                _lexmin(cp, n, m, n, &xv[0], &yv[0], &uv[0], &vv[0], tol, seen)
            else:
                for i in range(n):
                    uv[i] = cp[<Py_ssize_t>i * n + xv[i]] - vv[xv[i]]
    finally:
        free(dbuf)
        free(ibuf)
        free(seen)
    return x.astype(np.int64), u, v


def group_plans(A, B, indptr, indices, order, bint lexmin=True, bint warm=True,
                double rtol=1e-12, v_in=None, v_out=None):
    """Solve one assignment per group of the local loss at a single time.

    Group ``g`` holds point ids ``indices[indptr[g]:indptr[g+1]]``; rows are
    observed points ``A[ids]`` and columns predicted points ``B[ids]``.
    Groups are solved in ``order``, each warm-started from its predecessor's
    matching and column prices. The full ``N x N`` cost matrix is formed
    once and shared by every group.

    ``v_in`` (length ``N``, keyed by predicted id) seeds the column prices
    of every group that would otherwise start cold, typically the prices
    from the previous time step. ``v_out``, when given, receives the final
    price of every predicted point that was solved. Neither is used by the
    scalar sorting path.

    Returns ``(costs, match)``: ``costs[g]`` is the mean matched squared
    distance of group ``g`` and ``match[k]`` the observed id matched to the
    predicted point ``indices[k]``.
    """
    cdef cnp.ndarray[double, ndim=2, mode="c"] Am = np.ascontiguousarray(A, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] Bm = np.ascontiguousarray(B, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] ip = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef cnp.ndarray[int, ndim=1, mode="c"] ix = np.ascontiguousarray(indices, dtype=np.int32)
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] od = np.ascontiguousarray(order, dtype=np.int64)
    cdef int N = Am.shape[0], dim = Am.shape[1], G = od.shape[0]
    if Bm.shape[0] != N or Bm.shape[1] != dim:
        raise ValueError("observed and predicted clouds must have equal shapes")
    costs = np.zeros(ip.shape[0] - 1)
    match = np.empty(ix.shape[0], dtype=np.int64)
    if G == 0 or ix.shape[0] == 0:
        return costs, match
    cdef double[::1] cv = costs
    cdef cnp.int64_t[::1] mv = match
    cdef int nmax = 0, g, gi, s, e, n, a, b, k, r, cg, nassigned, ps = 0, pe = 0
    for gi in range(G):
        g = od[gi]
        if ip[g + 1] - ip[g] > nmax:
            nmax = ip[g + 1] - ip[g]
    cdef cnp.ndarray[double, ndim=2, mode="c"] Cm
    cdef const double* C = NULL
    if dim > 1:
        # squared distances via the expansion would lose exactness; use differences
        Cm = np.empty((N, N))
        for k in range(dim):
            diff = Am[:, k, None] - Bm[None, :, k]
            if k == 0:
                np.multiply(diff, diff, out=Cm)
            else:
                Cm += diff * diff
        C = &Cm[0, 0]
    cdef double[::1] vin_v
    cdef bint have_vin = v_in is not None
    if have_vin:
        vin_arr = np.ascontiguousarray(v_in, dtype=np.float64)
        if vin_arr.ndim != 1 or vin_arr.shape[0] != N:
            raise ValueError("v_in must have one price per point")
        vin_v = vin_arr
    cdef double* v = <double*>malloc(nmax * sizeof(double))
    cdef double* u = <double*>malloc(nmax * sizeof(double))
    cdef double* dbuf = <double*>malloc(2 * nmax * sizeof(double))
    cdef int* x = <int*>malloc(nmax * sizeof(int))
    cdef int* y = <int*>malloc(nmax * sizeof(int))
    cdef int* known = <int*>malloc(nmax * sizeof(int))
    cdef int* ibuf = <int*>malloc(4 * nmax * sizeof(int))
    cdef char* seen = <char*>malloc(nmax * sizeof(char))
    cdef int* loc = <int*>malloc(N * sizeof(int))
    cdef char* inprev = <char*>malloc(N * sizeof(char))
    cdef int* prev_x = <int*>malloc(N * sizeof(int))
    cdef double* prev_v = <double*>malloc(N * sizeof(double))
    cdef int* ord_a = <int*>malloc(N * sizeof(int))
    cdef int* ord_b = <int*>malloc(N * sizeof(int))
    cdef int* buf_a = <int*>malloc(N * sizeof(int))
    cdef char* solved = <char*>malloc(N * sizeof(char))
    cdef double h, best, tol, total
    cdef const double* ap = &Am[0, 0]
    cdef const double* bp = &Bm[0, 0]
    cdef const double* row
    cdef const cnp.int64_t* ipp = &ip[0]
    cdef const int* ixp = &ix[0]
    cdef const int* m
    cdef const cnp.int64_t* odp = &od[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] sa, sb
    if dim == 1:
        sa = np.argsort(Am[:, 0], kind="stable").astype(np.int64)
        sb = np.argsort(Bm[:, 0], kind="stable").astype(np.int64)
        for k in range(N):
            ord_a[k] = sa[k]
            ord_b[k] = sb[k]
    try:
        with nogil:
            for k in range(N):
                loc[k] = -1
                inprev[k] = 0
                solved[k] = 0
            for gi in range(G):
                g = odp[gi]
                s = ipp[g]
                e = ipp[g + 1]
                n = e - s
                if n == 0:
                    continue
                m = ixp + s
                for a in range(n):
                    loc[m[a]] = a
                if dim == 1:
                    # monotone rearrangement: k-th smallest obs <-> k-th smallest pred
                    r = 0
                    for k in range(N):
                        if loc[ord_a[k]] >= 0:
                            buf_a[r] = ord_a[k]
                            r += 1
                    r = 0
                    total = 0.0
                    for k in range(N):
                        b = ord_b[k]
                        if loc[b] >= 0:
                            mv[s + loc[b]] = buf_a[r]
                            h = ap[buf_a[r]] - bp[b]
                            total += h * h
                            r += 1
                    cv[g] = total / n
                    for a in range(n):
                        loc[m[a]] = -1
                    continue
                for a in range(n):
                    x[a] = -1
                    y[a] = -1
                nassigned = 0
                if warm and pe > ps:
                    for b in range(n):
                        cg = m[b]
                        known[b] = inprev[cg]
                        if known[b]:
                            v[b] = prev_v[cg]
                    for a in range(n):
                        r = m[a]
                        if inprev[r]:
                            cg = prev_x[r]
                            if loc[cg] >= 0:
                                b = loc[cg]
                                x[a] = b
                                y[b] = a
                                u[a] = C[<Py_ssize_t>r * N + cg] - v[b]
                                nassigned += 1
                    for b in range(n):
                        if known[b]:
                            continue
                        best = INFINITY
                        cg = m[b]
                        if nassigned > 0:
                            for a in range(n):
                                if x[a] >= 0:
                                    h = C[<Py_ssize_t>m[a] * N + cg] - u[a]
                                    if h < best:
                                        best = h
                        else:
                            for a in range(n):
                                h = C[<Py_ssize_t>m[a] * N + cg]
                                if h < best:
                                    best = h
                        v[b] = best
                elif have_vin:
                    for b in range(n):
                        v[b] = vin_v[m[b]]
                    _dual_reduction(C, N, m, n, x, y, u, v)
                else:
                    _column_reduction(C, N, m, n, x, y, v)
                for a in range(n):
                    if x[a] < 0:
                        _augment(C, N, m, n, a, x, y, v, dbuf, ibuf, ibuf + 2 * nmax)
                if lexmin:
                    tol = rtol * _max_abs(C, N, m, n)
                    _lexmin(C, N, m, n, x, y, u, v, tol, seen)
                total = 0.0
                for a in range(n):
                    total += C[<Py_ssize_t>m[a] * N + m[x[a]]]
                cv[g] = total / n
                for b in range(n):
                    mv[s + b] = m[y[b]]
                for k in range(ps, pe):
                    inprev[ixp[k]] = 0
                ps = s
                pe = e
                for a in range(n):
                    r = m[a]
                    inprev[r] = 1
                    prev_x[r] = m[x[a]]
                    prev_v[r] = v[a]
                    solved[r] = 1
                for a in range(n):
                    loc[m[a]] = -1
        if v_out is not None:
            for k in range(N):
                if solved[k]:
                    v_out[k] = prev_v[k]
    finally:
        free(v); free(u); free(dbuf); free(x); free(y); free(known)
        free(ibuf); free(seen); free(loc); free(inprev); free(prev_x); free(prev_v)
        free(ord_a); free(ord_b); free(buf_a); free(solved)
    return costs, match
