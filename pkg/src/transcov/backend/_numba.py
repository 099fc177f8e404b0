"""Numba builds of the hot kernels.

Same contracts as ``_numpy``; explicit loops where numba's fancy-indexing
support is partial.  All kernels are sequential — the sweep order is part of
the determinism guarantee.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _soft(x, t):
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


@njit(cache=True)
def glasso_core(S, rho, gap_tol, inner_tol, max_sweeps, W, Theta):
    p = S.shape[0]
    for j in range(p):
        W[j, j] = S[j, j] + rho
    if p == 1:
        Theta[0, 0] = 1.0 / W[0, 0]
        return W, Theta, 0, 0.0

    inner_max = 1000
    rest = np.empty(p - 1, dtype=np.int64)
    W11 = np.empty((p - 1, p - 1))
    s12 = np.empty(p - 1)
    beta = np.empty(p - 1)
    q = np.empty(p - 1)
    gap = np.inf
    sweeps = 0
    for sweep in range(max_sweeps):
        for j in range(p):
            t = 0
            for k in range(p):
                if k != j:
                    rest[t] = k
                    t += 1
            for a in range(p - 1):
                ra = rest[a]
                s12[a] = S[ra, j]
                beta[a] = -Theta[ra, j] / Theta[j, j]
                for b in range(p - 1):
                    W11[a, b] = W[ra, rest[b]]
            for a in range(p - 1):
                acc = 0.0
                for b in range(p - 1):
                    acc += W11[a, b] * beta[b]
                q[a] = acc
            for _ in range(inner_max):
                d_max = 0.0
                for k in range(p - 1):
                    bk = beta[k]
                    r = s12[k] - q[k] + W11[k, k] * bk
                    bn = _soft(r, rho) / W11[k, k]
                    d = bn - bk
                    if d != 0.0:
                        beta[k] = bn
                        for a in range(p - 1):
                            q[a] += d * W11[a, k]
                        ad = abs(d)
                        if ad > d_max:
                            d_max = ad
                if d_max < inner_tol:
                    break
            dot = 0.0
            for a in range(p - 1):
                ra = rest[a]
                W[ra, j] = q[a]
                W[j, ra] = q[a]
                dot += q[a] * beta[a]
            t_jj = 1.0 / (W[j, j] - dot)
            Theta[j, j] = t_jj
            for a in range(p - 1):
                ra = rest[a]
                Theta[ra, j] = -t_jj * beta[a]
                Theta[j, ra] = -t_jj * beta[a]
        sweeps = sweep + 1
        gap = -float(p)
        for a in range(p):
            for b in range(p):
                gap += S[a, b] * Theta[a, b] + rho * abs(Theta[a, b])
        if abs(gap) < gap_tol:
            break
    return W, Theta, sweeps, gap


@njit(cache=True)
def ace_sweeps(values, mask, M, sigma, sigma_inv, delta, delta_inv,
               tol, max_sweeps):
    n, p = values.shape
    P = sigma_inv
    Q = delta_inv
    R = values - M

    n_rows = 0
    n_cols = 0
    for i in range(n):
        if not mask[i].all():
            n_rows += 1
    for j in range(p):
        if not mask[:, j].all():
            n_cols += 1
    rows = np.empty(n_rows, dtype=np.int64)
    cols = np.empty(n_cols, dtype=np.int64)
    t = 0
    for i in range(n):
        if not mask[i].all():
            rows[t] = i
            t += 1
    t = 0
    for j in range(p):
        if not mask[:, j].all():
            cols[t] = j
            t += 1

    last = np.inf
    for sweep in range(max_sweeps):
        delta_max = 0.0
        for ri in range(n_rows):
            i = rows[ri]
            m = np.where(~mask[i])[0]
            o = np.where(mask[i])[0]
            tvec = np.zeros(p)
            for k in range(n):
                pik = P[i, k]
                if pik != 0.0:
                    for c in range(p):
                        tvec[c] += pik * R[k, c]
            psi = M[i] + R[i] - tvec / P[i, i]
            d = np.empty(o.size)
            for c in range(o.size):
                d[c] = values[i, o[c]] - psi[o[c]]
            if m.size <= o.size:
                A = Q[m, :][:, m].copy()
                b = np.ascontiguousarray(Q[m, :][:, o]) @ d
                new = psi[m] - np.linalg.solve(A, b)
            else:
                A = delta[o, :][:, o].copy()
                sol = np.linalg.solve(A, d)
                new = psi[m] + np.ascontiguousarray(delta[m, :][:, o]) @ sol
            for c in range(m.size):
                mc = m[c]
                ch = abs(new[c] - values[i, mc])
                if ch > delta_max:
                    delta_max = ch
                values[i, mc] = new[c]
                R[i, mc] = new[c] - M[i, mc]
        for cj in range(n_cols):
            j = cols[cj]
            m = np.where(~mask[:, j])[0]
            o = np.where(mask[:, j])[0]
            tvec = np.zeros(n)
            # Q is symmetric: row j doubles as column j
            for k in range(p):
                qjk = Q[j, k]
                if qjk != 0.0:
                    for r_ in range(n):
                        tvec[r_] += qjk * R[r_, k]
            eta = np.empty(n)
            for r_ in range(n):
                eta[r_] = M[r_, j] + R[r_, j] - tvec[r_] / Q[j, j]
            d = np.empty(o.size)
            for c in range(o.size):
                d[c] = values[o[c], j] - eta[o[c]]
            if m.size <= o.size:
                A = P[m, :][:, m].copy()
                b = np.ascontiguousarray(P[m, :][:, o]) @ d
                new = eta[m] - np.linalg.solve(A, b)
            else:
                A = sigma[o, :][:, o].copy()
                sol = np.linalg.solve(A, d)
                new = eta[m] + np.ascontiguousarray(sigma[m, :][:, o]) @ sol
            for c in range(m.size):
                mc = m[c]
                ch = abs(new[c] - values[mc, j])
                if ch > delta_max:
                    delta_max = ch
                values[mc, j] = new[c]
                R[mc, j] = new[c] - M[mc, j]
        last = delta_max
        if delta_max < tol:
            return sweep + 1, last, True
    return max_sweeps, last, False


@njit(cache=True)
def rows_conditional_fill(values, mask, mu, delta, delta_inv):
    n, p = values.shape
    xhat = values.copy()
    corr = np.zeros((p, p))
    for i in range(n):
        if mask[i].all():
            continue
        m = np.where(~mask[i])[0]
        o = np.where(mask[i])[0]
        d = np.empty(o.size)
        for c in range(o.size):
            d[c] = values[i, o[c]] - mu[o[c]]
        if m.size <= o.size:
            A = delta_inv[m, :][:, m].copy()
            cov = np.linalg.inv(A)
            b = np.ascontiguousarray(delta_inv[m, :][:, o]) @ d
            mean = mu[m] - cov @ b
        else:
            Doo = delta[o, :][:, o].copy()
            Dom = np.ascontiguousarray(delta[o, :][:, m])
            K = np.linalg.solve(Doo, Dom)
            mean = mu[m] + K.T @ d
            cov = delta[m, :][:, m] - np.ascontiguousarray(delta[m, :][:, o]) @ K
        for a in range(m.size):
            xhat[i, m[a]] = mean[a]
            for b in range(m.size):
                corr[m[a], m[b]] += cov[a, b]
    return xhat, corr


@njit(cache=True)
def pairwise_complete_corr(values, mask, min_overlap):
    n, p = values.shape
    corr = np.zeros((n, n))
    valid = np.zeros((n, n), dtype=np.bool_)
    for a in range(n):
        for b in range(a + 1, n):
            cnt = 0
            sa = 0.0
            sb = 0.0
            for c in range(p):
                if mask[a, c] and mask[b, c]:
                    cnt += 1
                    sa += values[a, c]
                    sb += values[b, c]
            if cnt < min_overlap:
                continue
            ma = sa / cnt
            mb = sb / cnt
            va = 0.0
            vb = 0.0
            cab = 0.0
            for c in range(p):
                if mask[a, c] and mask[b, c]:
                    xa = values[a, c] - ma
                    xb = values[b, c] - mb
                    va += xa * xa
                    vb += xb * xb
                    cab += xa * xb
            if va <= 0.0 or vb <= 0.0:
                continue
            r = cab / np.sqrt(va * vb)
            corr[a, b] = r
            corr[b, a] = r
            valid[a, b] = True
            valid[b, a] = True
    return corr, valid
