"""Pure-numpy reference kernels.

Semantics here define the contract; the numba build in ``_numba`` must match
bit-for-bit up to floating-point associativity.  Keep the two files in sync.
"""

import numpy as np


def _soft(x, t):
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


def glasso_core(S, rho, gap_tol, inner_tol, max_sweeps, W, Theta):
    """Blockwise coordinate-descent graphical lasso, diagonal penalized.

    Maximizes log|Theta| - tr(S Theta) - rho * sum(|Theta_kl|) over all p^2
    entries.  W and Theta are warm-start buffers (modified in place); the
    diagonal of W is pinned to S_jj + rho, which is the exact KKT condition
    when the diagonal is penalized.  Returns (W, Theta, sweeps, gap).
    """
    p = S.shape[0]
    for j in range(p):
        W[j, j] = S[j, j] + rho
    if p == 1:
        Theta[0, 0] = 1.0 / W[0, 0]
        return W, Theta, 0, 0.0

    idx = np.arange(p)
    gap = np.inf
    sweeps = 0
    inner_max = 1000
    for sweep in range(max_sweeps):
        for j in range(p):
            rest = idx[idx != j]
            W11 = W[np.ix_(rest, rest)]
            s12 = S[rest, j]
            beta = -Theta[rest, j] / Theta[j, j]
            q = W11 @ beta
            for _ in range(inner_max):
                d_max = 0.0
                for k in range(p - 1):
                    bk = beta[k]
                    r = s12[k] - q[k] + W11[k, k] * bk
                    bn = _soft(r, rho) / W11[k, k]
                    d = bn - bk
                    if d != 0.0:
                        beta[k] = bn
                        q += d * W11[:, k]
                        ad = abs(d)
                        if ad > d_max:
                            d_max = ad
                if d_max < inner_tol:
                    break
            W[rest, j] = q
            W[j, rest] = q
            t_jj = 1.0 / (W[j, j] - q @ beta)
            Theta[j, j] = t_jj
            Theta[rest, j] = -t_jj * beta
            Theta[j, rest] = -t_jj * beta
        sweeps = sweep + 1
        gap = float(np.sum(S * Theta) + rho * np.sum(np.abs(Theta)) - p)
        if abs(gap) < gap_tol:
            break
    return W, Theta, sweeps, gap


def ace_sweeps(values, mask, M, sigma, sigma_inv, delta, delta_inv,
               tol, max_sweeps):
    """Gauss-Seidel row/column conditional-mean sweeps, in place.

    ``values`` holds the current completion (missing cells pre-filled) and is
    updated in place.  ``mask`` is True at observed cells and never changes.
    Each row pass conditions the row's missing cells on the true observed
    cells of that row plus the current values of all other rows; column
    passes are symmetric.  Within a row/column the smaller of the missing or
    observed block drives the linear solve.  Returns (sweeps, last_delta,
    converged).
    """
    n, p = values.shape
    P = sigma_inv
    Q = delta_inv
    rows = [i for i in range(n) if not mask[i].all()]
    cols = [j for j in range(p) if not mask[:, j].all()]
    last = np.inf
    for sweep in range(max_sweeps):
        delta_max = 0.0
        for i in rows:
            m = np.where(~mask[i])[0]
            o = np.where(mask[i])[0]
            t = P[i] @ (values - M)
            psi = M[i] + (values[i] - M[i]) - t / P[i, i]
            d = values[i, o] - psi[o]
            if m.size <= o.size:
                A = Q[np.ix_(m, m)]
                b = Q[np.ix_(m, o)] @ d
                new = psi[m] - np.linalg.solve(A, b)
            else:
                sol = np.linalg.solve(delta[np.ix_(o, o)], d)
                new = psi[m] + delta[np.ix_(m, o)] @ sol
            ch = np.max(np.abs(new - values[i, m]))
            if ch > delta_max:
                delta_max = ch
            values[i, m] = new
        for j in cols:
            m = np.where(~mask[:, j])[0]
            o = np.where(mask[:, j])[0]
            t = (values - M) @ Q[:, j]
            eta = M[:, j] + (values[:, j] - M[:, j]) - t / Q[j, j]
            d = values[o, j] - eta[o]
            if m.size <= o.size:
                A = P[np.ix_(m, m)]
                b = P[np.ix_(m, o)] @ d
                new = eta[m] - np.linalg.solve(A, b)
            else:
                sol = np.linalg.solve(sigma[np.ix_(o, o)], d)
                new = eta[m] + sigma[np.ix_(m, o)] @ sol
            ch = np.max(np.abs(new - values[m, j]))
            if ch > delta_max:
                delta_max = ch
            values[m, j] = new
        last = delta_max
        if delta_max < tol:
            return sweep + 1, last, True
    return max_sweeps, last, False


def rows_conditional_fill(values, mask, mu, delta, delta_inv):
    """Per-row Gaussian conditioning for i.i.d. rows ~ N(mu, delta).

    Returns (xhat, corr): the completed matrix with conditional means in
    missing cells, and the p x p sum of the rows' conditional covariance
    blocks (the EM scatter correction).
    """
    n, p = values.shape
    xhat = values.copy()
    corr = np.zeros((p, p))
    for i in range(n):
        if mask[i].all():
            continue
        m = np.where(~mask[i])[0]
        o = np.where(mask[i])[0]
        d = values[i, o] - mu[o]
        if m.size <= o.size:
            A = delta_inv[np.ix_(m, m)]
            cov = np.linalg.inv(A)
            mean = mu[m] - cov @ (delta_inv[np.ix_(m, o)] @ d)
        else:
            K = np.linalg.solve(delta[np.ix_(o, o)], delta[np.ix_(o, m)])
            mean = mu[m] + K.T @ d
            cov = delta[np.ix_(m, m)] - delta[np.ix_(m, o)] @ K
        xhat[i, m] = mean
        corr[np.ix_(m, m)] += cov
    return xhat, corr


def pairwise_complete_corr(values, mask, min_overlap):
    """Row-by-row Pearson correlation over co-observed columns.

    Pairs with fewer than ``min_overlap`` co-observed columns, or with zero
    variance on the overlap, are flagged invalid.  Returns (corr, valid);
    the diagonal is invalid by definition (a row is not its own neighbor).
    """
    n = values.shape[0]
    corr = np.zeros((n, n))
    valid = np.zeros((n, n), dtype=np.bool_)
    for a in range(n):
        for b in range(a + 1, n):
            both = mask[a] & mask[b]
            cnt = int(both.sum())
            if cnt < min_overlap:
                continue
            xa = values[a, both]
            xb = values[b, both]
            xa = xa - xa.mean()
            xb = xb - xb.mean()
            va = xa @ xa
            vb = xb @ xb
            if va <= 0.0 or vb <= 0.0:
                continue
            r = (xa @ xb) / np.sqrt(va * vb)
            corr[a, b] = r
            corr[b, a] = r
            valid[a, b] = True
            valid[b, a] = True
    return corr, valid
