"""Penalized maximum-likelihood estimation.

Mean fitting under missingness, the multivariate regularized-covariance
solvers (eigenvalue shrinkage for the squared penalty, diagonal-penalized
graphical lasso for the absolute one), the transposable block coordinate-wise
solver, and the closed-form solution when both penalties are squared.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import backend
from .errors import ConvergenceError, NumericalError
from .model import CovParams, MaskedMatrix, MeanParams, PenaltySpec, entrywise_norm


@dataclass
class SolverOptions:
    max_outer_iters: int = 500
    rel_tol: float = 1e-8
    glasso_tol: float = 1e-6
    glasso_max_sweeps: int = 1000
    jitter: float = 1e-10
    init_scheme: str = "identity"

    def __post_init__(self):
        if self.rel_tol <= 0 or self.glasso_tol <= 0 or self.jitter <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_outer_iters < 1 or self.glasso_max_sweeps < 1:
            raise ValueError("iteration caps must be >= 1")


@dataclass(frozen=True)
class SpectralSolution:
    """Diagnostics of the closed-form squared-penalty solve.

    ``d`` holds the positive singular values (length = rank); ``beta`` and
    ``theta`` the full eigenvalue vectors of the two covariance estimates;
    ``coeffs`` the per-index quadratic coefficients (c1, c2, c3) for the
    leading ``rank`` indices.
    """

    d: np.ndarray
    beta: np.ndarray
    theta: np.ndarray
    coeffs: np.ndarray
    u_basis: np.ndarray
    v_basis: np.ndarray

    @property
    def rank(self) -> int:
        return self.d.size

    def quadratic_residuals(self, rho_r: float, rho_c: float):
        """Residuals of the two eigenvalue stationarity quadratics, i < rank."""
        n = self.u_basis.shape[0]
        p = self.v_basis.shape[0]
        b = self.beta[: self.rank]
        t = self.theta[: self.rank]
        d2 = self.d**2
        r1 = np.abs(p * t * b**2 - d2 * b - 4.0 * rho_r * t)
        r2 = np.abs(n * b * t**2 - d2 * t - 4.0 * rho_c * b)
        return r1, r2


def estimate_means(x: MaskedMatrix, opts: SolverOptions | None = None) -> MeanParams:
    """Additive-mean fit: iterated row/column centering over observed cells.

    Fully observed input needs one pass (rows, then columns); with missing
    cells the two centerings are alternated until the fitted mean matrix
    stops changing.  The result is the least-squares additive fit to the
    observed entries, canonicalized so mean(nu) = 0.
    """
    opts = opts or SolverOptions()
    v0 = np.where(x.mask, x.values, 0.0)
    if x.is_fully_observed():
        nu = v0.mean(axis=1)
        mu = (v0 - nu[:, None]).mean(axis=0)
        return MeanParams(nu, mu)
    w = x.mask.astype(float)
    rw = w.sum(axis=1)
    cw = w.sum(axis=0)
    nu = np.zeros(x.n)
    mu = np.zeros(x.p)
    m_prev = nu[:, None] + mu[None, :]
    for it in range(opts.max_outer_iters):
        nu = (v0 - w * mu[None, :]).sum(axis=1) / rw
        mu = (v0 - w * nu[:, None]).sum(axis=0) / cw
        m = nu[:, None] + mu[None, :]
        change = float(np.max(np.abs(m - m_prev)))
        if change < opts.rel_tol:
            return MeanParams(nu, mu)
        m_prev = m
    raise ConvergenceError(
        f"mean fit did not converge in {opts.max_outer_iters} iterations "
        f"(last change {change:.3e})",
        iterations=opts.max_outer_iters,
        residual=change,
        payload=MeanParams(nu, mu),
    )


def shrink_eigenvalues(lam: np.ndarray, count: int, rho: float) -> np.ndarray:
    """Eigenvalue update for the squared concentration penalty.

    Stationarity of (count/2) log|T| - (count/2) tr(ST) - rho ||T||_F^2 in
    each eigendirection of S gives w^2 - lam*w - 4*rho/count = 0; the
    positive root regularizes lam upward.
    """
    return 0.5 * (lam + np.sqrt(lam * lam + 16.0 * rho / count))


def rcm_l2_cov(x_centered: np.ndarray, rho: float, return_spectrum: bool = False):
    """Squared-penalty covariance estimate for i.i.d. rows (closed form).

    Eigenvalues of X'X/n are shrunk to (lam + sqrt(lam^2 + 16 rho/n))/2 on
    the data directions; directions orthogonal to the data get exactly
    2*sqrt(rho/n).
    """
    x = np.asarray(x_centered, dtype=float)
    n, p = x.shape
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    s = x.T @ x / n
    lam, v = np.linalg.eigh(s)
    lam = np.maximum(lam, 0.0)
    cutoff = lam[-1] * 1e-12
    on_data = lam > cutoff
    theta = np.where(on_data, shrink_eigenvalues(lam, n, rho), 2.0 * np.sqrt(rho / n))
    if theta.min() <= 0.0:
        raise NumericalError(
            "singular estimate: rho = 0 with rank-deficient data has no PD solution"
        )
    cov = (v * theta) @ v.T
    cov = 0.5 * (cov + cov.T)
    if return_spectrum:
        return cov, theta, v
    return cov


def glasso(s: np.ndarray, rho: float, opts: SolverOptions | None = None,
           w_init: np.ndarray | None = None, theta_init: np.ndarray | None = None):
    """Graphical lasso with the diagonal included in the penalty.

    Maximizes log|T| - tr(ST) - rho * sum_kl |T_kl| over concentration
    matrices T.  Returns (w, w_inv) = (covariance, concentration); the exit
    duality gap is below opts.glasso_tol.
    """
    opts = opts or SolverOptions()
    if rho <= 0:
        raise ValueError("glasso requires rho > 0")
    s = np.asarray(s, dtype=float)
    s = np.ascontiguousarray(0.5 * (s + s.T))
    p = s.shape[0]
    if w_init is not None and theta_init is not None:
        w = np.ascontiguousarray(w_init, dtype=float).copy()
        theta = np.ascontiguousarray(theta_init, dtype=float).copy()
    else:
        w = s.copy()
        theta = np.diag(1.0 / (np.diag(s) + rho)).copy()
    w, theta, sweeps, gap = backend.glasso_core(
        s, float(rho), float(opts.glasso_tol), float(opts.glasso_tol) * 1e-2,
        int(opts.glasso_max_sweeps), w, theta,
    )
    if abs(gap) >= opts.glasso_tol:
        raise ConvergenceError(
            f"glasso did not reach gap {opts.glasso_tol:.1e} in {sweeps} sweeps "
            f"(gap {gap:.3e})",
            iterations=sweeps,
            residual=gap,
        )
    return w, theta


def rcm_l1_cov(x_centered: np.ndarray, rho: float,
               opts: SolverOptions | None = None) -> np.ndarray:
    """Absolute-penalty covariance estimate for i.i.d. rows.

    The effective graphical-lasso weight is 2*rho/n, which makes the
    returned matrix the maximizer of the penalized likelihood with
    penalty rho * sum|T_kl|.
    """
    x = np.asarray(x_centered, dtype=float)
    n = x.shape[0]
    s = x.T @ x / n
    w, _ = glasso(s, 2.0 * rho / n, opts)
    return w


def trcm_l2l2(x_centered: np.ndarray, rho_r: float, rho_c: float):
    """Closed-form global maximizer with squared penalties on both sides.

    Returns (CovParams, SpectralSolution).  The derivation assumes rows are
    the long dimension, so inputs with p > n are solved transposed and the
    roles of the two covariances swapped back.
    """
    x = np.asarray(x_centered, dtype=float)
    if rho_r <= 0 or rho_c <= 0:
        raise ValueError("both penalties must be positive")
    n, p = x.shape
    if n < p:
        covs_t, sol_t = trcm_l2l2(x.T, rho_c, rho_r)
        covs = CovParams(covs_t.delta, covs_t.sigma)
        sol = SpectralSolution(
            d=sol_t.d, beta=sol_t.theta, theta=sol_t.beta, coeffs=sol_t.coeffs,
            u_basis=sol_t.v_basis, v_basis=sol_t.u_basis,
        )
        return covs, sol

    u, d, vt = np.linalg.svd(x, full_matrices=True)
    v = vt.T
    dmax = d[0] if d.size else 0.0
    r = int(np.sum(d > dmax * 1e-12)) if dmax > 0 else 0
    beta = np.full(n, 2.0 * np.sqrt(rho_r / p))
    theta = np.full(p, 2.0 * np.sqrt(rho_c / n))
    coeffs = np.empty((r, 3))
    for i in range(r):
        d2 = d[i] ** 2
        d4 = d2 * d2
        c1 = -4.0 * rho_c * p * p
        c2 = 32.0 * rho_r * rho_c * p + d4 * (n - p)
        c3 = 4.0 * rho_r * (d4 - 16.0 * rho_r * rho_c)
        coeffs[i] = (c1, c2, c3)
        # c2^2 - 4 c1 c3 simplifies exactly to d^4 (64 rho_r rho_c p n +
        # d^4 (n-p)^2); the expanded form avoids the catastrophic
        # cancellation the raw discriminant has for small d.
        core = 64.0 * rho_r * rho_c * p * n + d4 * (n - p) ** 2
        if core < 0:
            raise NumericalError(f"negative discriminant at index {i}: {core:.3e}")
        root = np.sqrt(core)
        b2 = (c2 + d2 * root) / (8.0 * rho_c * p * p)
        if not b2 > 0:
            raise NumericalError(f"nonpositive root argument at index {i}: {b2:.3e}")
        beta[i] = np.sqrt(b2)
        denom = d2 * (n - p) + root
        if not denom > 0:
            raise NumericalError(f"nonpositive theta denominator at index {i}")
        theta[i] = 8.0 * rho_c * p * beta[i] / denom
    sigma = (u * beta) @ u.T
    delta = (v * theta) @ v.T
    covs = CovParams(0.5 * (sigma + sigma.T), 0.5 * (delta + delta.T))
    sol = SpectralSolution(d=d[:r].copy(), beta=beta, theta=theta,
                           coeffs=coeffs, u_basis=u, v_basis=v)
    return covs, sol


def _logdet_spd(a: np.ndarray) -> float:
    chol = np.linalg.cholesky(a)
    return 2.0 * float(np.log(np.diag(chol)).sum())


def _objective(x, sigma_inv, delta_inv, logdet_si, logdet_di, pen) -> float:
    n, p = x.shape
    quad = float((sigma_inv @ x @ delta_inv * x).sum())
    return (
        0.5 * p * logdet_si + 0.5 * n * logdet_di - 0.5 * quad
        - pen.rho_r * entrywise_norm(sigma_inv, pen.q_r)
        - pen.rho_c * entrywise_norm(delta_inv, pen.q_c)
    )


def trcm_coordwise(x_centered: np.ndarray, pen: PenaltySpec,
                   opts: SolverOptions | None = None,
                   init: tuple[np.ndarray, np.ndarray] | None = None,
                   sigma_first: bool = False,
                   return_trace: bool = False):
    """Block coordinate-wise maximization of the two-sided penalized
    likelihood on centered data.

    Each half step solves its conditional problem exactly (eigenvalue
    shrinkage for q = 2, diagonal-penalized glasso for q = 1), so the
    objective is nondecreasing at every half step up to the inner solver
    tolerance.  Column side first by default.  Convergence is declared on
    the relative change of the objective.
    """
    opts = opts or SolverOptions()
    x = np.asarray(x_centered, dtype=float)
    n, p = x.shape
    if pen.rho_r <= 0 or pen.rho_c <= 0:
        raise ValueError("coordinate-wise solver requires positive penalties")
    if init is None:
        sigma, delta = np.eye(n), np.eye(p)
    else:
        sigma = np.array(init[0], dtype=float)
        delta = np.array(init[1], dtype=float)
    sigma_inv = np.linalg.inv(sigma)
    delta_inv = np.linalg.inv(delta)
    logdet_si = -_logdet_spd(sigma)
    logdet_di = -_logdet_spd(delta)

    trace = [_objective(x, sigma_inv, delta_inv, logdet_si, logdet_di, pen)]

    def cm_delta():
        nonlocal delta, delta_inv, logdet_di
        s_c = x.T @ sigma_inv @ x / n
        if pen.q_c == 2:
            lam, vv = np.linalg.eigh(0.5 * (s_c + s_c.T))
            th = shrink_eigenvalues(np.maximum(lam, 0.0), n, pen.rho_c)
            delta = (vv * th) @ vv.T
            delta_inv = (vv / th) @ vv.T
            logdet_di = -float(np.log(th).sum())
        else:
            delta, delta_inv = glasso(s_c, 2.0 * pen.rho_c / n, opts,
                                      w_init=delta, theta_init=delta_inv)
            logdet_di = _logdet_spd(delta_inv)
        trace.append(_objective(x, sigma_inv, delta_inv, logdet_si, logdet_di, pen))

    def cm_sigma():
        nonlocal sigma, sigma_inv, logdet_si
        s_r = x @ delta_inv @ x.T / p
        if pen.q_r == 2:
            lam, vv = np.linalg.eigh(0.5 * (s_r + s_r.T))
            bt = shrink_eigenvalues(np.maximum(lam, 0.0), p, pen.rho_r)
            sigma = (vv * bt) @ vv.T
            sigma_inv = (vv / bt) @ vv.T
            logdet_si = -float(np.log(bt).sum())
        else:
            sigma, sigma_inv = glasso(s_r, 2.0 * pen.rho_r / p, opts,
                                      w_init=sigma, theta_init=sigma_inv)
            logdet_si = _logdet_spd(sigma_inv)
        trace.append(_objective(x, sigma_inv, delta_inv, logdet_si, logdet_di, pen))

    for it in range(opts.max_outer_iters):
        before = trace[-1]
        if sigma_first:
            cm_sigma()
            cm_delta()
        else:
            cm_delta()
            cm_sigma()
        after = trace[-1]
        if not np.isfinite(after):
            raise NumericalError("non-finite objective in coordinate-wise solver")
        if abs(after - before) <= opts.rel_tol * (1.0 + abs(after)):
            covs = CovParams(sigma, delta)
            return (covs, trace) if return_trace else covs
    raise ConvergenceError(
        f"coordinate-wise solver hit the cap ({opts.max_outer_iters} cycles)",
        iterations=opts.max_outer_iters,
        residual=abs(trace[-1] - before),
        payload=(sigma, delta),
    )


def stationarity_residual(covs: CovParams, x_centered: np.ndarray,
                          pen: PenaltySpec):
    """Max-abs entries of the two gradient (or subgradient) matrices.

    For q = 1 the residual uses the best subgradient selection: entries
    whose concentration is (numerically) zero contribute only the part of
    the smooth gradient exceeding the penalty weight.  Zero is decided at
    1e-10 relative, so inverses carrying round-off noise classify cleanly.
    """
    x = np.asarray(x_centered, dtype=float)
    n, p = x.shape

    def one_side(cov, conc, smooth, rho, q, count):
        a = cov - smooth
        w = 2.0 * rho / count
        if q == 2:
            return float(np.max(np.abs(a - (4.0 * rho / count) * conc)))
        nz = np.abs(conc) > 1e-10 * np.max(np.abs(conc))
        res = np.where(nz, np.abs(a - w * np.sign(conc)),
                       np.maximum(np.abs(a) - w, 0.0))
        return float(np.max(res))

    res_sigma = one_side(covs.sigma, covs.sigma_inv,
                         x @ covs.delta_inv @ x.T / p, pen.rho_r, pen.q_r, p)
    res_delta = one_side(covs.delta, covs.delta_inv,
                         x.T @ covs.sigma_inv @ x / n, pen.rho_c, pen.q_c, n)
    return res_sigma, res_delta
