# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled component-wise Metropolis sweep for the three-level model.

Line-for-line counterpart of ``_hier_kernel_py``; see that module for the
state layout and the joint moves.
"""

import numpy as np

from libc.math cimport exp, sqrt

DEF N_MOVES = 3


cdef double _cond(int j, double x, double[::1] u, long long[::1] cr, long long[::1] rp,
                  long long[::1] rc, double[::1] nc, double[::1] yb, double[::1] wc,
                  double[::1] tps, double prior_var, double* counts,
                  int nR, int nC, int off_r, int off_c, int jg, int jr, int jc) noexcept nogil:
    cdef double tg, tr, tc, d, e, s, ss, t2
    cdef int r, c, k, kk
    if j == 0:
        tg = exp(u[jg])
        s = 0.0
        for r in range(nR):
            d = u[off_r + r] - x
            s += d * d
        return -x * x / (2.0 * prior_var) - s / (2.0 * tg * tg)
    if j < off_c:
        r = j - off_r
        tg = exp(u[jg])
        tr = exp(u[jr])
        d = x - u[0]
        s = 0.0
        for kk in range(<int>rp[r], <int>rp[r + 1]):
            e = u[off_c + rc[kk]] - x
            s += e * e
        return -d * d / (2.0 * tg * tg) - s / (2.0 * tr * tr)
    if j < jg:
        c = j - off_c
        tr = exp(u[jr])
        tc = exp(u[jc])
        d = x - u[off_r + cr[c]]
        e = yb[c] - x
        return -d * d / (2.0 * tr * tr) - nc[c] * e * e / (2.0 * tc * tc)
    k = j - jg
    ss = 0.0
    if k == 0:
        for r in range(off_r, off_c):
            d = u[r] - u[0]
            ss += d * d
    elif k == 1:
        for c in range(nC):
            d = u[off_c + c] - u[off_r + cr[c]]
            ss += d * d
    else:
        for c in range(nC):
            e = yb[c] - u[off_c + c]
            ss += wc[c] + nc[c] * e * e
    t2 = exp(2.0 * x)
    return -counts[k] * x - ss / (2.0 * t2) - t2 / (2.0 * tps[k] * tps[k]) + x


def hier_chain(u0, log_scale0, update, country_region, reg_ptr, reg_countries, n_c, ybar, w_c,
               double theta_prior_sd, tau_prior_sd, normals, log_unif, int n_burn, int batch,
               double target):
    cdef double[::1] u = np.array(u0, dtype=np.float64)
    cdef double[::1] log_scale = np.array(log_scale0, dtype=np.float64)
    cdef unsigned char[::1] upd = np.ascontiguousarray(update, dtype=np.uint8)
    cdef long long[::1] cr = np.ascontiguousarray(country_region, dtype=np.int64)
    cdef long long[::1] rp = np.ascontiguousarray(reg_ptr, dtype=np.int64)
    cdef long long[::1] rc = np.ascontiguousarray(reg_countries, dtype=np.int64)
    cdef double[::1] nc = np.ascontiguousarray(n_c, dtype=np.float64)
    cdef double[::1] yb = np.ascontiguousarray(ybar, dtype=np.float64)
    cdef double[::1] wc = np.ascontiguousarray(w_c, dtype=np.float64)
    cdef double[::1] tps = np.ascontiguousarray(tau_prior_sd, dtype=np.float64)
    cdef double[:, ::1] z = np.ascontiguousarray(normals, dtype=np.float64)
    cdef double[:, ::1] lu = np.ascontiguousarray(log_unif, dtype=np.float64)
    cdef int iters = z.shape[0]
    cdef int K = z.shape[1]
    cdef int P = K - N_MOVES
    cdef int nR = rp.shape[0] - 1
    cdef int nC = cr.shape[0]
    cdef int off_r = 1
    cdef int off_c = 1 + nR
    cdef int jg = off_c + nC
    cdef int jr = jg + 1
    cdef int jc = jg + 2
    cdef double counts[3]
    cdef double n_cities = 0.0
    cdef int c, r, i, j, it, n_batches = 0
    cdef int n_total = n_burn // batch
    cdef double old, prop, delta, step, h, eps, f, d0, tc, tr, ssum, e_old, e_new, d_old, d_new, base
    cdef double sd2, v_old, v_new
    cdef bint late
    for c in range(nC):
        n_cities += nc[c]
    counts[0] = nR
    counts[1] = nC
    counts[2] = n_cities
    cdef double prior_var = theta_prior_sd * theta_prior_sd

    out_arr = np.empty((iters - n_burn, P))
    cdef double[:, ::1] out = out_arr
    cdef double[::1] batch_acc = np.zeros(K)
    cdef double[::1] kept_acc = np.zeros(K)
    cdef double[::1] late_sum = np.zeros(K)

    with nogil:
        for it in range(iters):
            for j in range(P):
                if not upd[j]:
                    continue
                old = u[j]
                prop = old + exp(log_scale[j]) * z[it, j]
                delta = (_cond(j, prop, u, cr, rp, rc, nc, yb, wc, tps, prior_var, counts,
                               nR, nC, off_r, off_c, jg, jr, jc)
                         - _cond(j, old, u, cr, rp, rc, nc, yb, wc, tps, prior_var, counts,
                                 nR, nC, off_r, off_c, jg, jr, jc))
                if lu[it, j] < delta:
                    u[j] = prop
                    if it < n_burn:
                        batch_acc[j] += 1.0
                    else:
                        kept_acc[j] += 1.0
            if upd[0]:
                j = P
                h = exp(log_scale[j]) * z[it, j]
                d0 = u[0] + h
                delta = -(d0 * d0 - u[0] * u[0]) / (2.0 * prior_var)
                tc = exp(u[jc])
                ssum = 0.0
                for c in range(nC):
                    e_old = yb[c] - u[off_c + c]
                    e_new = e_old - h
                    ssum += nc[c] * (e_new * e_new - e_old * e_old)
                delta = delta - ssum / (2.0 * tc * tc)
                if lu[it, j] < delta:
                    for i in range(jg):
                        u[i] += h
                    if it < n_burn:
                        batch_acc[j] += 1.0
                    else:
                        kept_acc[j] += 1.0
            if upd[jg]:
                j = P + 1
                eps = exp(log_scale[j]) * z[it, j]
                f = exp(eps)
                tr = exp(u[jr])
                ssum = 0.0
                for c in range(nC):
                    r = <int>cr[c]
                    d_old = u[off_c + c] - u[off_r + r]
                    d_new = u[off_c + c] - (u[0] + (u[off_r + r] - u[0]) * f)
                    ssum += d_new * d_new - d_old * d_old
                v_old = u[jg]
                v_new = u[jg] + eps
                sd2 = 2.0 * tps[0] * tps[0]
                delta = -ssum / (2.0 * tr * tr) + ((-exp(2.0 * v_new) / sd2 + v_new) - (-exp(2.0 * v_old) / sd2 + v_old))
                if lu[it, j] < delta:
                    for r in range(nR):
                        u[off_r + r] = u[0] + (u[off_r + r] - u[0]) * f
                    u[jg] += eps
                    if it < n_burn:
                        batch_acc[j] += 1.0
                    else:
                        kept_acc[j] += 1.0
            if upd[jr]:
                j = P + 2
                eps = exp(log_scale[j]) * z[it, j]
                f = exp(eps)
                tc = exp(u[jc])
                ssum = 0.0
                for c in range(nC):
                    base = u[off_r + cr[c]]
                    e_old = yb[c] - u[off_c + c]
                    e_new = yb[c] - (base + (u[off_c + c] - base) * f)
                    ssum += nc[c] * (e_new * e_new - e_old * e_old)
                v_old = u[jr]
                v_new = u[jr] + eps
                sd2 = 2.0 * tps[1] * tps[1]
                delta = -ssum / (2.0 * tc * tc) + ((-exp(2.0 * v_new) / sd2 + v_new) - (-exp(2.0 * v_old) / sd2 + v_old))
                if lu[it, j] < delta:
                    for c in range(nC):
                        base = u[off_r + cr[c]]
                        u[off_c + c] = base + (u[off_c + c] - base) * f
                    u[jr] += eps
                    if it < n_burn:
                        batch_acc[j] += 1.0
                    else:
                        kept_acc[j] += 1.0
            if it < n_burn and (it + 1) % batch == 0:
                n_batches += 1
                step = 1.0 / sqrt(<double>n_batches)
                if step > 0.5:
                    step = 0.5
                late = 2 * n_batches > n_total
                for j in range(K):
                    if batch_acc[j] / batch > target:
                        log_scale[j] += step
                    else:
                        log_scale[j] -= step
                    batch_acc[j] = 0.0
                    if late:
                        late_sum[j] += log_scale[j]
                if n_batches == n_total:
                    for j in range(K):
                        log_scale[j] = late_sum[j] / (n_total - n_total // 2)
            if it >= n_burn:
                for j in range(P):
                    out[it - n_burn, j] = u[j]
    kept = iters - n_burn
    return out_arr, np.asarray(kept_acc) / kept, np.asarray(log_scale)
