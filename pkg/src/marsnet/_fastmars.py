"""Compiled kernels for the incremental MARS fit.

``forward_path`` scores the residual sum of squares of every candidate
reflection pair with one sweep per dimension over the sorted column, using an
incrementally grown orthonormal basis of the current design. ``backward_path`` runs the deletion
search on the triangular factor of the design, so pruning never touches the
N rows again.
"""

import numpy as np
from numba import njit


@njit(cache=True, fastmath=True)
def _gram_schmidt(qt, r, v, tol):
    """Orthonormalise ``v`` against rows ``qt[:r]`` into row ``r``; returns False if dependent.

    A second projection pass runs only when the first removed most of the norm.
    """
    n = v.shape[0]
    norm0 = np.sqrt(np.sum(v * v))
    nv = norm0
    for _ in range(2):
        before = nv
        for c in range(r):
            acc = 0.0
            for i in range(n):
                acc += qt[c, i] * v[i]
            for i in range(n):
                v[i] -= acc * qt[c, i]
        nv = np.sqrt(np.sum(v * v))
        if nv > 0.5 * before:
            break
    if nv == 0.0 or nv <= tol * norm0:
        return False
    for i in range(n):
        qt[r, i] = v[i] / nv
    return True


@njit(cache=True)
def _knot_suffix(v, xs, orders, knots, nknots, out_s, out_sx):
    """``out_s[j, k] = sum(v_i : x_ij > t_jk)`` and the same weighted by ``x_ij``.

    ``xs[j]`` is column ``j`` of the inputs in ascending order, ``orders[j]`` the permutation.
    """
    d, n = xs.shape
    for j in range(d):
        order = orders[j]
        xcol = xs[j]
        s = 0.0
        sx = 0.0
        p = n - 1
        for k in range(nknots[j] - 1, -1, -1):
            t = knots[j, k]
            while p >= 0 and xcol[p] > t:
                vi = v[order[p]]
                s += vi
                sx += xcol[p] * vi
                p -= 1
            out_s[j, k] = s
            out_sx[j, k] = sx


@njit(cache=True)
def forward_path(x, y, orders, knots, nknots, count, max_terms, penalty, tie_rtol, null_gcv):
    """Greedy pair selection. Returns chosen (dim, knot index) and the RSS after each step.

    Knot-suffix sums of each orthonormal basis column are computed once, when the
    column enters, so a step costs O(N d) plus O(K d r) for the knot scan.
    """
    n, d = x.shape
    kmax = knots.shape[1]
    rmax = max_terms + 1
    xs = np.empty((d, n))
    xt = np.empty((d, n))
    for j in range(d):
        for p in range(n):
            xs[j, p] = x[orders[j, p], j]
            xt[j, p] = x[p, j]
    qt = np.zeros((rmax, n))
    sq = np.zeros((d, kmax, rmax))
    sxq = np.zeros((d, kmax, rmax))
    qx = np.zeros((rmax, d))
    cnt = np.zeros((d, kmax))
    sx = np.zeros((d, kmax))
    sxx = np.zeros((d, kmax))
    s_res = np.zeros((d, kmax))
    sx_res = np.zeros((d, kmax))
    a_s = np.zeros((d, kmax))
    a_sx = np.zeros((d, kmax))
    xx = np.zeros(d)
    for j in range(d):
        xcol = xs[j]
        c0 = 0.0
        s1 = 0.0
        s2 = 0.0
        p = n - 1
        for k in range(nknots[j] - 1, -1, -1):
            t = knots[j, k]
            while p >= 0 and xcol[p] > t:
                xv = xcol[p]
                c0 += 1.0
                s1 += xv
                s2 += xv * xv
                p -= 1
            cnt[j, k] = c0
            sx[j, k] = s1
            sxx[j, k] = s2
        for i in range(n):
            xx[j] += xcol[i] * xcol[i]

    qt[0, :] = 1.0 / np.sqrt(n)
    r = 0
    col = np.empty(n)
    zy = np.zeros(rmax)

    used = np.zeros((d, kmax), dtype=np.bool_)
    chosen_j = np.empty(max_terms, dtype=np.int64)
    chosen_k = np.empty(max_terms, dtype=np.int64)
    chosen_rss = np.empty(max_terms)
    steps = 0
    m = 0
    kc = 0
    r_new = 1
    res = y.copy()
    score = np.empty((d, kmax))
    while True:
        # register newly added columns r..r_new-1 and deflate the residual
        for c in range(r, r_new):
            qc = qt[c]
            _knot_suffix(qc, xs, orders, knots, nknots, a_s, a_sx)
            sq[:, :, c] = a_s
            sxq[:, :, c] = a_sx
            for j in range(d):
                acc = 0.0
                xr = xt[j]
                for i in range(n):
                    acc += qc[i] * xr[i]
                qx[c, j] = acc
            acc = 0.0
            for i in range(n):
                acc += qc[i] * res[i]
            for i in range(n):
                res[i] -= acc * qc[i]
        r = r_new
        cur_rss = np.sum(res * res)
        if steps > 0:
            chosen_rss[steps - 1] = cur_rss
        if m + 2 > max_terms:
            break
        _knot_suffix(res, xs, orders, knots, nknots, s_res, sx_res)

        best = np.inf
        for j in range(d):
            xr = xt[j]
            lo = xs[j, 0]
            hi = xs[j, n - 1]
            xt_sq = xx[j]
            res_xt = 0.0
            for c in range(r):
                xt_sq -= qx[c, j] * qx[c, j]
            for i in range(n):
                res_xt += res[i] * xr[i]
            lin_ok = xt_sq > 1e-12 * xx[j] + 1e-300
            lin_gain = res_xt * res_xt / xt_sq if lin_ok else 0.0
            for k in range(kmax):
                score[j, k] = np.inf
                if k >= nknots[j] or used[j, k] or count[j, k] == 0:
                    continue
                cpar = (m + count[j, k] + 1) + penalty * (kc + 1)
                if cpar >= n:
                    continue
                t = knots[j, k]
                gain = lin_gain
                if lo < t < hi:
                    p_sq = sxx[j, k] - 2.0 * t * sx[j, k] + t * t * cnt[j, k]
                    xp = sxx[j, k] - t * sx[j, k]
                    ph_sq = p_sq
                    xt_dot = xp
                    for c in range(r):
                        dq = sxq[j, k, c] - t * sq[j, k, c]
                        ph_sq -= dq * dq
                        xt_dot -= qx[c, j] * dq
                    rp = sx_res[j, k] - t * s_res[j, k]
                    if lin_ok:
                        ph_sq -= xt_dot * xt_dot / xt_sq
                        rp -= (res_xt / xt_sq) * xt_dot
                    if ph_sq > 1e-10 * p_sq and p_sq > 0.0:
                        gain += rp * rp / ph_sq
                rss = cur_rss - gain
                if rss < 0.0:
                    rss = 0.0
                g = rss / (1.0 - cpar / n) ** 2
                score[j, k] = g
                if g < best:
                    best = g
        if best == np.inf:
            break
        tol = tie_rtol * best + 1e-12 * null_gcv
        bj = -1
        bk = -1
        for j in range(d):
            for k in range(nknots[j]):
                if score[j, k] <= best + tol:
                    bj = j
                    bk = k
                    break
            if bj >= 0:
                break
        used[bj, bk] = True
        t = knots[bj, bk]
        lo = xs[bj, 0]
        hi = xs[bj, n - 1]
        r_new = r
        xr = xt[bj]
        if t < hi:
            for i in range(n):
                v = xr[i] - t
                col[i] = v if v > 0.0 else 0.0
            if _gram_schmidt(qt, r_new, col, 1e-10):
                r_new += 1
        if t > lo:
            for i in range(n):
                v = t - xr[i]
                col[i] = v if v > 0.0 else 0.0
            if _gram_schmidt(qt, r_new, col, 1e-10):
                r_new += 1
        m += count[bj, bk]
        kc += 1
        chosen_j[steps] = bj
        chosen_k[steps] = bk
        steps += 1
    return chosen_j[:steps], chosen_k[:steps], chosen_rss[:steps]


@njit(cache=True)
def _householder(sub, z):
    """In-place Householder QR of ``sub`` (m x k, m >= k), applied to ``z`` as well.

    On return the upper triangle of ``sub[:k]`` holds R and ``z`` holds Q^T z.
    """
    m, k = sub.shape
    for j in range(k):
        norm = 0.0
        for i in range(j, m):
            norm += sub[i, j] * sub[i, j]
        norm = np.sqrt(norm)
        if norm == 0.0:
            continue
        alpha = -norm if sub[j, j] >= 0 else norm
        v0 = sub[j, j] - alpha
        vnorm2 = v0 * v0 + norm * norm - sub[j, j] * sub[j, j]
        if vnorm2 <= 0.0:
            continue
        sub[j, j] = v0
        for c in range(j + 1, k):
            dot = 0.0
            for i in range(j, m):
                dot += sub[i, j] * sub[i, c]
            f = 2.0 * dot / vnorm2
            for i in range(j, m):
                sub[i, c] -= f * sub[i, j]
        dot = 0.0
        for i in range(j, m):
            dot += sub[i, j] * z[i]
        f = 2.0 * dot / vnorm2
        for i in range(j, m):
            z[i] -= f * sub[i, j]
        sub[j, j] = alpha
        for i in range(j + 1, m):
            sub[i, j] = 0.0


@njit(cache=True)
def _drop_costs_full_rank(sub, z, base, out):
    """Deletion RSS for every column of a well-conditioned ``sub``; returns the current RSS.

    Uses RSS_drop(a) = RSS + beta_a^2 / [(S^T S)^-1]_aa with S = QR, so
    (S^T S)^-1 = R^-1 R^-T. Returns -1 if R turns out to be numerically singular.
    """
    m, k = sub.shape
    qz = z.copy()
    _householder(sub, qz)
    big = 0.0
    for i in range(k):
        big = max(big, abs(sub[i, i]))
    for i in range(k):
        # conservative: anything near the least-squares rank cut-off takes the SVD route
        if abs(sub[i, i]) <= 1e-8 * big:
            return -1.0
    rss = base
    for i in range(k, m):
        rss += qz[i] * qz[i]
    beta = np.empty(k)
    for i in range(k - 1, -1, -1):
        acc = qz[i]
        for c in range(i + 1, k):
            acc -= sub[i, c] * beta[c]
        beta[i] = acc / sub[i, i]
    # rows of R^-1 by back substitution on the identity
    rinv = np.zeros((k, k))
    for col in range(k):
        for i in range(col, -1, -1):
            acc = 1.0 if i == col else 0.0
            for c in range(i + 1, col + 1):
                acc -= sub[i, c] * rinv[c, col]
            rinv[i, col] = acc / sub[i, i]
    for a in range(k):
        w = 0.0
        for c in range(a, k):
            w += rinv[a, c] * rinv[a, c]
        out[a] = rss + beta[a] * beta[a] / w
    return rss


@njit(cache=True)
def _drop_costs_svd(sub, z, base, cutoff, out):
    """Rank-aware deletion RSS via the SVD of ``sub``; returns the current RSS."""
    m, k = sub.shape
    u, sv, vt = np.linalg.svd(sub, full_matrices=False)
    r = 0
    for i in range(sv.shape[0]):
        if sv[i] > cutoff * sv[0]:
            r += 1
    zh = np.zeros(r)
    for i in range(r):
        acc = 0.0
        for b in range(m):
            acc += u[b, i] * z[b]
        zh[i] = acc
    rss_cur = base
    for b in range(m):
        v = z[b]
        for i in range(r):
            v -= u[b, i] * zh[i]
        rss_cur += v * v
    # Deleting a column that other columns can reproduce leaves the fit unchanged;
    # otherwise the RSS grows by beta_a^2 / [(S^T S)^+]_aa.
    for a in range(1, k):
        row_wt = 0.0
        inv_wt = 0.0
        beta = 0.0
        for i in range(r):
            row_wt += vt[i, a] * vt[i, a]
            inv_wt += (vt[i, a] / sv[i]) ** 2
            beta += vt[i, a] * zh[i] / sv[i]
        if 1.0 - row_wt > 1e-10:
            out[a] = rss_cur
        else:
            out[a] = rss_cur + beta * beta / inv_wt
    return rss_cur


@njit(cache=True)
def backward_path(rmat, z, base, n, penalty, knot_id, rank, tie_rtol, null_gcv):
    """Greedy single-column deletion on the reduced system; column 0 is the intercept.

    Returns the deleted column per step, the RSS after each deletion, and the RSS
    of the starting model.
    """
    m = rmat.shape[1]
    active = np.ones(m, dtype=np.bool_)
    nk = 0
    for c in range(1, m):
        nk = max(nk, knot_id[c] + 1)
    per_knot = np.zeros(nk, dtype=np.int64)
    for c in range(1, m):
        per_knot[knot_id[c]] += 1
    n_knots = 0
    for g in range(nk):
        if per_knot[g] > 0:
            n_knots += 1
    dropped = np.empty(m - 1, dtype=np.int64)
    rss_after = np.empty(m - 1)
    start_rss = 0.0
    # rank cut-off of a least-squares solve on the full N-row design
    cutoff = np.finfo(np.float64).eps * max(n, m)
    for step in range(m - 1):
        k = 0
        idx = np.empty(m, dtype=np.int64)
        for c in range(m):
            if active[c]:
                idx[k] = c
                k += 1
        idx = idx[:k]
        sub = np.empty((m, k))
        for a in range(k):
            sub[:, a] = rmat[:, idx[a]]
        drop_rss = np.full(k, np.inf)
        rss_cur = _drop_costs_full_rank(sub.copy(), z, base, drop_rss)
        if rss_cur >= 0.0:
            drop_rss[0] = np.inf
            if step == 0:
                start_rss = rss_cur
        else:
            rss_cur = _drop_costs_svd(sub, z, base, cutoff, drop_rss)
            if step == 0:
                start_rss = rss_cur
        msize = k - 2
        best = np.inf
        gcvs = np.full(k, np.inf)
        for a in range(1, k):
            c_id = idx[a]
            kn = n_knots - (1 if per_knot[knot_id[c_id]] == 1 else 0)
            cpar = (msize + 1) + penalty * kn
            g = drop_rss[a] / (1.0 - cpar / n) ** 2
            gcvs[a] = g
            if g < best:
                best = g
        tol = tie_rtol * best + 1e-12 * null_gcv
        pick = -1
        for a in range(1, k):
            if gcvs[a] <= best + tol:
                if pick < 0 or rank[idx[a]] < rank[idx[pick]]:
                    pick = a
        col_id = idx[pick]
        active[col_id] = False
        per_knot[knot_id[col_id]] -= 1
        if per_knot[knot_id[col_id]] == 0:
            n_knots -= 1
        dropped[step] = col_id
        rss_after[step] = drop_rss[pick]
    return dropped, rss_after, start_rss
