"""Pure-Python component-wise Metropolis sweep for the three-level model.

Mirror of ``_hier_kernel.pyx``; both follow the same arithmetic order so they
return identical draws from identical inputs.  The unconstrained state is laid
out as::

    [theta_G, theta_R[0..nR), theta_C[0..nC), log tau_G, log tau_R, log tau_C]

Cities enter only through per-country sufficient statistics: the count
``n_c``, the mean log concentration ``ybar_c`` and the within-country sum of
squares ``w_c``.

Each iteration is a sweep of single-component random-walk updates followed by
three joint moves that break the strong posterior coupling between levels:

* shift: add one offset to every theta (levels move together);
* scale G: change log tau_G by eps and stretch the region deviations
  ``theta_R - theta_G`` by ``exp(eps)``;
* scale R: the same for log tau_R and the country deviations.

The scale moves are deterministic maps with Jacobian ``exp(n * eps)``, which
cancels the ``-n log tau`` normalising term of the stretched level, so their
acceptance ratio involves only the level below and the tau prior.  Random
inputs ``normals`` and ``log_unif`` carry ``P + N_MOVES`` columns, the last
three feeding the joint moves; ``log_scale`` has the same length.
"""

import math

import numpy as np

N_MOVES = 3


def _sq_sum_region(theta, th_g, start, stop):
    s = 0.0
    for r in range(start, stop):
        d = theta[r] - th_g
        s += d * d
    return s


def hier_chain(u0, log_scale0, update, country_region, reg_ptr, reg_countries, n_c, ybar, w_c,
               theta_prior_sd, tau_prior_sd, normals, log_unif, n_burn, batch, target):
    u = [float(v) for v in u0]
    log_scale = [float(v) for v in log_scale0]
    upd = [bool(v) for v in update]
    cr = [int(v) for v in country_region]
    rp = [int(v) for v in reg_ptr]
    rc = [int(v) for v in reg_countries]
    nc = [float(v) for v in n_c]
    yb = [float(v) for v in ybar]
    wc = [float(v) for v in w_c]
    tps = [float(v) for v in tau_prior_sd]
    normals = np.asarray(normals)
    log_unif = np.asarray(log_unif)
    iters, K = normals.shape
    P = K - N_MOVES
    nR = len(rp) - 1
    nC = len(cr)
    off_r = 1
    off_c = 1 + nR
    jg = off_c + nC
    jr = jg + 1
    jc = jg + 2
    n_cities = 0.0
    for c in range(nC):
        n_cities += nc[c]
    counts = (float(nR), float(nC), n_cities)
    prior_var = theta_prior_sd * theta_prior_sd

    out = np.empty((iters - n_burn, P))
    batch_acc = [0.0] * K
    kept_acc = [0.0] * K
    late_sum = [0.0] * K
    n_batches = 0
    n_total = n_burn // batch

    def cond(j, x):
        # log conditional density of component j at value x, up to a constant
        if j == 0:
            tg = math.exp(u[jg])
            s = 0.0
            for r in range(nR):
                d = u[off_r + r] - x
                s += d * d
            return -x * x / (2.0 * prior_var) - s / (2.0 * tg * tg)
        if j < off_c:
            r = j - off_r
            tg = math.exp(u[jg])
            tr = math.exp(u[jr])
            d = x - u[0]
            s = 0.0
            for k in range(rp[r], rp[r + 1]):
                e = u[off_c + rc[k]] - x
                s += e * e
            return -d * d / (2.0 * tg * tg) - s / (2.0 * tr * tr)
        if j < jg:
            c = j - off_c
            tr = math.exp(u[jr])
            tc = math.exp(u[jc])
            d = x - u[off_r + cr[c]]
            e = yb[c] - x
            return -d * d / (2.0 * tr * tr) - nc[c] * e * e / (2.0 * tc * tc)
        k = j - jg
        if k == 0:
            ss = _sq_sum_region(u, u[0], off_r, off_c)
        elif k == 1:
            ss = 0.0
            for c in range(nC):
                d = u[off_c + c] - u[off_r + cr[c]]
                ss += d * d
        else:
            ss = 0.0
            for c in range(nC):
                e = yb[c] - u[off_c + c]
                ss += wc[c] + nc[c] * e * e
        t2 = math.exp(2.0 * x)
        return -counts[k] * x - ss / (2.0 * t2) - t2 / (2.0 * tps[k] * tps[k]) + x

    def shift_delta(h):
        d0 = u[0] + h
        delta = -(d0 * d0 - u[0] * u[0]) / (2.0 * prior_var)
        tc = math.exp(u[jc])
        s = 0.0
        for c in range(nC):
            e_old = yb[c] - u[off_c + c]
            e_new = e_old - h
            s += nc[c] * (e_new * e_new - e_old * e_old)
        return delta - s / (2.0 * tc * tc)

    def tau_prior_delta(k, v_old, v_new):
        sd2 = 2.0 * tps[k] * tps[k]
        return (-math.exp(2.0 * v_new) / sd2 + v_new) - (-math.exp(2.0 * v_old) / sd2 + v_old)

    def scale_g_delta(f):
        tr = math.exp(u[jr])
        s = 0.0
        for c in range(nC):
            r = cr[c]
            d_old = u[off_c + c] - u[off_r + r]
            d_new = u[off_c + c] - (u[0] + (u[off_r + r] - u[0]) * f)
            s += d_new * d_new - d_old * d_old
        return -s / (2.0 * tr * tr)

    def scale_r_delta(f):
        tc = math.exp(u[jc])
        s = 0.0
        for c in range(nC):
            base = u[off_r + cr[c]]
            e_old = yb[c] - u[off_c + c]
            e_new = yb[c] - (base + (u[off_c + c] - base) * f)
            s += nc[c] * (e_new * e_new - e_old * e_old)
        return -s / (2.0 * tc * tc)

    def accept(j, it):
        if it < n_burn:
            batch_acc[j] += 1.0
        else:
            kept_acc[j] += 1.0

    for it in range(iters):
        for j in range(P):
            if not upd[j]:
                continue
            old = u[j]
            prop = old + math.exp(log_scale[j]) * normals[it, j]
            delta = cond(j, prop) - cond(j, old)
            if log_unif[it, j] < delta:
                u[j] = prop
                accept(j, it)
        if upd[0]:
            j = P
            h = math.exp(log_scale[j]) * normals[it, j]
            if log_unif[it, j] < shift_delta(h):
                for i in range(jg):
                    u[i] += h
                accept(j, it)
        if upd[jg]:
            j = P + 1
            eps = math.exp(log_scale[j]) * normals[it, j]
            f = math.exp(eps)
            delta = scale_g_delta(f) + tau_prior_delta(0, u[jg], u[jg] + eps)
            if log_unif[it, j] < delta:
                for r in range(nR):
                    u[off_r + r] = u[0] + (u[off_r + r] - u[0]) * f
                u[jg] += eps
                accept(j, it)
        if upd[jr]:
            j = P + 2
            eps = math.exp(log_scale[j]) * normals[it, j]
            f = math.exp(eps)
            delta = scale_r_delta(f) + tau_prior_delta(1, u[jr], u[jr] + eps)
            if log_unif[it, j] < delta:
                for c in range(nC):
                    base = u[off_r + cr[c]]
                    u[off_c + c] = base + (u[off_c + c] - base) * f
                u[jr] += eps
                accept(j, it)
        if it < n_burn and (it + 1) % batch == 0:
            n_batches += 1
            step = min(0.5, 1.0 / math.sqrt(n_batches))
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
            out[it - n_burn] = u
    kept = iters - n_burn
    return out, np.array([a / kept for a in kept_acc]), np.array(log_scale)
