"""Imputation engines.

Three model-based imputers — the marginal EM (penalized multivariate
normal), the multi-cycle ECM for the transposable model, and its one-step
approximation — plus the two-step row/column conditionals, the alternating
conditional-expectations fixed point, and the dense Kronecker conditioning
oracle used to validate everything at small sizes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from . import backend
from .errors import CapExceeded, ConvergenceError
from .estimation import (
    SolverOptions,
    estimate_means,
    glasso,
    shrink_eigenvalues,
    trcm_coordwise,
    trcm_l2l2,
)
from .model import (
    DEFAULT_VEC_CAP,
    CovParams,
    MaskedMatrix,
    MeanParams,
    PenaltySpec,
    TrcmModel,
    entrywise_norm,
    observed_loglik,
)


@dataclass
class ImputeOptions:
    """Knobs for the iterative imputers; defaults match the documented
    convergence constants."""

    em_tol: float = 1e-6
    em_max_iters: int = 500
    mcecm_tol: float = 1e-6
    mcecm_max_cycles: int = 200
    mcecm_init: str = "mle"           # "mle" | "identity"
    ace_tol: float = 1e-8
    ace_max_sweeps: int = 1000
    kron_cap: int = DEFAULT_VEC_CAP
    cross_cap: int = 2000
    estep_path: str = "ace"           # "ace" | "kron"
    solver: SolverOptions = field(default_factory=SolverOptions)


@dataclass
class ImputationReport:
    """Output bundle of every imputer.

    ``completed`` agrees with the input exactly on observed cells;
    ``objective_trace`` is nondecreasing for the EM-family methods.
    """

    completed: np.ndarray
    model: TrcmModel | None
    objective_trace: list
    iterations: int
    method: str
    params: dict
    extras: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RowConditional:
    """Two-step conditional for one row: the row given all other rows is
    N(psi, gamma) with gamma a positive scalar times the column covariance;
    ``mean``/``cov`` then condition on the row's observed cells."""

    index: int
    obs_idx: np.ndarray
    mis_idx: np.ndarray
    psi: np.ndarray
    gamma: np.ndarray
    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class ColConditional:
    index: int
    obs_idx: np.ndarray
    mis_idx: np.ndarray
    eta: np.ndarray
    phi: np.ndarray
    mean: np.ndarray
    cov: np.ndarray


@dataclass
class EStepResult:
    """Completed matrix plus the two scatter-correction matrices.

    g_mat[j, j'] = tr(C^(jj') sigma_inv) and f_mat[i, i'] = tr(D^(ii')
    delta_inv), where C/D are conditional covariances of column/row pairs.
    When the conditional covariance of the missing cells was materialized it
    is kept (vec order) for oracle-level inspection.
    """

    x_hat: np.ndarray
    g_mat: np.ndarray
    f_mat: np.ndarray
    mis_rows: np.ndarray
    mis_cols: np.ndarray
    cond_cov: np.ndarray | None = None

    def c_block(self, j: int, jp: int) -> np.ndarray:
        """C^(jj'): n x n conditional covariance of columns j and j'."""
        if self.cond_cov is None:
            raise ValueError("conditional covariance was not stored")
        n = self.f_mat.shape[0]
        out = np.zeros((n, n))
        a = np.flatnonzero(self.mis_cols == j)
        b = np.flatnonzero(self.mis_cols == jp)
        out[np.ix_(self.mis_rows[a], self.mis_rows[b])] = self.cond_cov[np.ix_(a, b)]
        return out

    def d_block(self, i: int, ip: int) -> np.ndarray:
        """D^(ii'): p x p conditional covariance of rows i and i'."""
        if self.cond_cov is None:
            raise ValueError("conditional covariance was not stored")
        p = self.g_mat.shape[0]
        out = np.zeros((p, p))
        a = np.flatnonzero(self.mis_rows == i)
        b = np.flatnonzero(self.mis_rows == ip)
        out[np.ix_(self.mis_cols[a], self.mis_cols[b])] = self.cond_cov[np.ix_(a, b)]
        return out


def _omega_block(model, rows_a, cols_a, rows_b, cols_b):
    return (model.covs.delta[np.ix_(cols_a, cols_b)]
            * model.covs.sigma[np.ix_(rows_a, rows_b)])


def kron_conditional_expectation(x: MaskedMatrix, model: TrcmModel,
                                 cap: int = DEFAULT_VEC_CAP) -> np.ndarray:
    """Exact conditional means through the dense Kronecker covariance.

    The module's exactness oracle; refuses instances above the cap, where
    the two-step machinery must be used instead.
    """
    n, p = x.shape
    if n * p > cap:
        raise CapExceeded(
            f"n*p = {n * p} exceeds the dense-oracle cap {cap}; "
            "use ace_expectation instead"
        )
    if x.is_fully_observed():
        return x.values.copy()
    mi, mj = x.missing_vec_order()
    oi, oj = x.observed_vec_order()
    m_mat = model.mean_matrix()
    omega_oo = _omega_block(model, oi, oj, oi, oj)
    omega_mo = _omega_block(model, mi, mj, oi, oj)
    resid = x.values[oi, oj] - m_mat[oi, oj]
    sol = sla.cho_solve(sla.cho_factor(omega_oo, lower=True), resid)
    out = x.values.copy()
    out[mi, mj] = m_mat[mi, mj] + omega_mo @ sol
    return out


def kron_conditional_covariance(x: MaskedMatrix, model: TrcmModel,
                                cap: int = DEFAULT_VEC_CAP) -> np.ndarray:
    """Conditional covariance of the missing cells (vec order), dense oracle."""
    n, p = x.shape
    if n * p > cap:
        raise CapExceeded(f"n*p = {n * p} exceeds the dense-oracle cap {cap}")
    mi, mj = x.missing_vec_order()
    if mi.size == 0:
        return np.zeros((0, 0))
    oi, oj = x.observed_vec_order()
    omega_mm = _omega_block(model, mi, mj, mi, mj)
    omega_mo = _omega_block(model, mi, mj, oi, oj)
    omega_oo = _omega_block(model, oi, oj, oi, oj)
    sol = sla.cho_solve(sla.cho_factor(omega_oo, lower=True), omega_mo.T)
    cond = omega_mm - omega_mo @ sol
    return 0.5 * (cond + cond.T)


def row_conditional(x: MaskedMatrix, model: TrcmModel, i: int) -> RowConditional:
    """Distribution of row i's missing cells given everything else.

    Step one conditions the whole row on the other rows (which must be
    fully valued); step two conditions within the row on its observed
    cells.  Only n x n and p x p solves are involved.
    """
    if not 0 <= i < x.n:
        raise IndexError(f"row index {i} out of range")
    others = np.arange(x.n) != i
    if not x.mask[others].all():
        raise ValueError("rows other than i must be fully valued")
    m_mat = model.mean_matrix()
    p_inv = model.covs.sigma_inv
    resid = x.values - m_mat
    # sigma_{i,k} sigma_{k,k}^{-1} = -P_{i,k} / P_{ii}
    contrib = p_inv[i, others] @ resid[others]
    psi = m_mat[i] - contrib / p_inv[i, i]
    gamma_scale = 1.0 / p_inv[i, i]
    gamma = gamma_scale * model.covs.delta
    o = x.row_obs[i]
    m = x.row_mis[i]
    if m.size == 0:
        return RowConditional(i, o, m, psi, gamma,
                              np.zeros(0), np.zeros((0, 0)))
    d = x.values[i, o] - psi[o]
    doo = model.covs.delta[np.ix_(o, o)]
    dom = model.covs.delta[np.ix_(o, m)]
    k = np.linalg.solve(doo, dom)
    mean = psi[m] + k.T @ d
    cov = gamma_scale * (model.covs.delta[np.ix_(m, m)]
                         - model.covs.delta[np.ix_(m, o)] @ k)
    return RowConditional(i, o, m, psi, gamma, mean, 0.5 * (cov + cov.T))


def col_conditional(x: MaskedMatrix, model: TrcmModel, j: int) -> ColConditional:
    """Distribution of column j's missing cells given everything else."""
    if not 0 <= j < x.p:
        raise IndexError(f"column index {j} out of range")
    others = np.arange(x.p) != j
    if not x.mask[:, others].all():
        raise ValueError("columns other than j must be fully valued")
    m_mat = model.mean_matrix()
    q_inv = model.covs.delta_inv
    resid = x.values - m_mat
    contrib = resid[:, others] @ q_inv[others, j]
    eta = m_mat[:, j] - contrib / q_inv[j, j]
    phi_scale = 1.0 / q_inv[j, j]
    phi = phi_scale * model.covs.sigma
    o = x.col_obs[j]
    m = x.col_mis[j]
    if m.size == 0:
        return ColConditional(j, o, m, eta, phi, np.zeros(0), np.zeros((0, 0)))
    d = x.values[o, j] - eta[o]
    soo = model.covs.sigma[np.ix_(o, o)]
    som = model.covs.sigma[np.ix_(o, m)]
    k = np.linalg.solve(soo, som)
    mean = eta[m] + k.T @ d
    cov = phi_scale * (model.covs.sigma[np.ix_(m, m)]
                       - model.covs.sigma[np.ix_(m, o)] @ k)
    return ColConditional(j, o, m, eta, phi, mean, 0.5 * (cov + cov.T))


def ace_expectation(x: MaskedMatrix, model: TrcmModel,
                    opts: ImputeOptions | None = None) -> np.ndarray:
    """Conditional expectation of the missing cells by alternating
    row/column sweeps.

    Missing cells start at the model means; rows then columns are updated
    in place in ascending index order until a full sweep changes nothing
    beyond the tolerance.  The fixed point is the exact conditional mean.
    """
    opts = opts or ImputeOptions()
    if x.is_fully_observed():
        return x.values.copy()
    m_mat = model.mean_matrix()
    values = x.filled_with(m_mat)
    mask = np.ascontiguousarray(x.mask)
    sweeps, last, converged = backend.ace_sweeps(
        values, mask, np.ascontiguousarray(m_mat),
        np.ascontiguousarray(model.covs.sigma),
        np.ascontiguousarray(model.covs.sigma_inv),
        np.ascontiguousarray(model.covs.delta),
        np.ascontiguousarray(model.covs.delta_inv),
        float(opts.ace_tol), int(opts.ace_max_sweeps),
    )
    if not converged:
        raise ConvergenceError(
            f"alternating expectations did not converge in {sweeps} sweeps "
            f"(last change {last:.3e})",
            iterations=sweeps, residual=last, payload=values,
        )
    return values


def _conditional_cov_missing(x: MaskedMatrix, model: TrcmModel, cross_cap: int):
    """Exact conditional covariance of the missing cells via the precision
    identity Cov(X_m | X_o) = ((delta_inv (x) sigma_inv)_mm)^{-1}."""
    mi, mj = x.missing_vec_order()
    n_mis = mi.size
    if n_mis > cross_cap:
        raise CapExceeded(
            f"|missing| = {n_mis} exceeds the correction cap {cross_cap}; "
            "the one-step imputer needs no covariance corrections"
        )
    prec = (model.covs.delta_inv[np.ix_(mj, mj)]
            * model.covs.sigma_inv[np.ix_(mi, mi)])
    cond = sla.cho_solve(sla.cho_factor(prec, lower=True), np.eye(n_mis))
    return mi, mj, 0.5 * (cond + cond.T)


def e_step(x: MaskedMatrix, model: TrcmModel,
           opts: ImputeOptions | None = None) -> EStepResult:
    """Conditional means plus the two scatter-correction matrices.

    The completion comes from the alternating sweeps (or the dense
    Kronecker path when selected and under the cap).  The corrections are
    assembled from the exact conditional covariance of the missing cells;
    above the correction cap this is refused rather than approximated.
    """
    opts = opts or ImputeOptions()
    n, p = x.shape
    if x.is_fully_observed():
        return EStepResult(x.values.copy(), np.zeros((p, p)), np.zeros((n, n)),
                           np.zeros(0, dtype=int), np.zeros(0, dtype=int))
    if opts.estep_path == "kron":
        x_hat = kron_conditional_expectation(x, model, opts.kron_cap)
    else:
        x_hat = ace_expectation(x, model, opts)
    mi, mj, cond = _conditional_cov_missing(x, model, opts.cross_cap)
    p_sub = model.covs.sigma_inv[np.ix_(mi, mi)]
    q_sub = model.covs.delta_inv[np.ix_(mj, mj)]
    g_flat = np.bincount((mj[:, None] * p + mj[None, :]).ravel(),
                         weights=(cond * p_sub).ravel(), minlength=p * p)
    f_flat = np.bincount((mi[:, None] * n + mi[None, :]).ravel(),
                         weights=(cond * q_sub).ravel(), minlength=n * n)
    g_mat = g_flat.reshape(p, p)
    f_mat = f_flat.reshape(n, n)
    g_mat = 0.5 * (g_mat + g_mat.T)
    f_mat = 0.5 * (f_mat + f_mat.T)
    keep = cond if n * p <= opts.kron_cap else None
    return EStepResult(x_hat, g_mat, f_mat, mi, mj, keep)


def _weighted_mean_fit(x_hat, sigma_inv, delta_inv) -> MeanParams:
    """Exact maximizer of the complete-data likelihood over additive means
    for fixed covariances; reduces to plain two-way centering when the
    concentrations have constant row sums."""
    a = delta_inv.sum(axis=1)
    a = a / a.sum()
    b = sigma_inv.sum(axis=1)
    b = b / b.sum()
    nu = x_hat @ a
    mu = x_hat.T @ b - float(b @ x_hat @ a)
    return MeanParams(nu, mu)


def _mvn_observed_loglik(x: MaskedMatrix, mu, delta, delta_inv, rho, q) -> float:
    """Observed penalized log-likelihood for i.i.d. rows ~ N(mu, delta)."""
    total = 0.0
    for i in range(x.n):
        o = x.row_obs[i]
        if o.size == 0:
            continue
        sub = delta[np.ix_(o, o)]
        chol = np.linalg.cholesky(sub)
        d = sla.solve_triangular(chol, x.values[i, o] - mu[o], lower=True)
        total += -0.5 * float(d @ d) - float(np.log(np.diag(chol)).sum())
    return total - rho * entrywise_norm(delta_inv, q)


def rcm_impute(x: MaskedMatrix, rho: float, q: int = 2, axis: str = "cols",
               opts: ImputeOptions | None = None) -> ImputationReport:
    """EM imputation under the marginal (multivariate) penalized model.

    axis='cols' treats rows as i.i.d. p-variate observations with a
    penalized column covariance; axis='rows' transposes the roles.  Each
    E step fills per-row conditional means and accumulates conditional
    covariances into the scatter; the M step refits the mean and the
    penalized covariance.  Stops on the relative change of the observed
    penalized log-likelihood.
    """
    opts = opts or ImputeOptions()
    if q not in (1, 2):
        raise ValueError("q must be 1 or 2")
    if axis == "rows":
        rep = rcm_impute(x.transposed(), rho, q, "cols", opts)
        model_t = rep.model
        model = TrcmModel(
            MeanParams(model_t.means.mu, np.zeros(x.p)),
            CovParams(model_t.covs.delta, np.eye(x.p)),
        )
        return ImputationReport(
            completed=np.ascontiguousarray(rep.completed.T), model=model,
            objective_trace=rep.objective_trace, iterations=rep.iterations,
            method="rcm-rows", params={"rho": rho, "q": q, "axis": "rows"},
            extras=rep.extras,
        )
    if axis != "cols":
        raise ValueError("axis must be 'rows' or 'cols'")

    n, p = x.shape
    solver = opts.solver
    mask = np.ascontiguousarray(x.mask)
    obs_cnt = mask.sum(axis=0).astype(float)
    v0 = np.where(mask, x.values, 0.0)
    mu = v0.sum(axis=0) / obs_cnt
    filled = x.filled_with(np.broadcast_to(mu, (n, p)))

    def m_step_cov(scatter):
        if q == 2:
            lam, vv = np.linalg.eigh(0.5 * (scatter + scatter.T))
            th = shrink_eigenvalues(np.maximum(lam, 0.0), n, rho)
            return (vv * th) @ vv.T, (vv / th) @ vv.T
        return glasso(scatter, 2.0 * rho / n, solver)

    c0 = filled - mu
    delta, delta_inv = m_step_cov(c0.T @ c0 / n)

    if x.is_fully_observed():
        model = TrcmModel(MeanParams(np.zeros(n), mu), CovParams(np.eye(n), delta))
        obj = _mvn_observed_loglik(x, mu, delta, delta_inv, rho, q)
        return ImputationReport(x.values.copy(), model, [obj], 1, "rcm-cols",
                                {"rho": rho, "q": q, "axis": "cols"})

    trace = []
    for it in range(opts.em_max_iters):
        x_hat, corr = backend.rows_conditional_fill(
            np.ascontiguousarray(x.values), mask, mu,
            np.ascontiguousarray(delta), np.ascontiguousarray(delta_inv))
        mu = x_hat.mean(axis=0)
        c = x_hat - mu
        delta, delta_inv = m_step_cov((c.T @ c + corr) / n)
        obj = _mvn_observed_loglik(x, mu, delta, delta_inv, rho, q)
        trace.append(obj)
        if it > 0 and abs(trace[-1] - trace[-2]) <= opts.em_tol * (1.0 + abs(obj)):
            break
    else:
        raise ConvergenceError(
            f"marginal EM hit the cap ({opts.em_max_iters} iterations)",
            iterations=opts.em_max_iters,
            residual=abs(trace[-1] - trace[-2]) if len(trace) > 1 else np.inf,
            payload=x_hat,
        )
    # final fill under the converged parameters (means only)
    x_hat, _ = backend.rows_conditional_fill(
        np.ascontiguousarray(x.values), mask, mu,
        np.ascontiguousarray(delta), np.ascontiguousarray(delta_inv))
    model = TrcmModel(MeanParams(np.zeros(n), mu), CovParams(np.eye(n), delta))
    return ImputationReport(x_hat, model, trace, it + 1, "rcm-cols",
                            {"rho": rho, "q": q, "axis": "cols"})


def check_pairwise_observation(x: MaskedMatrix) -> bool:
    """Warn when some pair of rows (or columns) shares no observed column
    (row).  Penalized estimation stays well posed, so this is advisory."""
    m = x.mask.astype(np.int32)
    rows_ok = (m @ m.T > 0).all()
    cols_ok = (m.T @ m > 0).all()
    if not (rows_ok and cols_ok):
        warnings.warn(
            "some pair of rows or columns is never co-observed; "
            "imputation proceeds but conditionals borrow entirely "
            "from the penalty structure",
            stacklevel=2,
        )
        return False
    return True


def _cm_cov(scatter, count, rho, q, solver, warm):
    """One conditional-maximization step over a concentration matrix."""
    if q == 2:
        lam, vv = np.linalg.eigh(0.5 * (scatter + scatter.T))
        w = shrink_eigenvalues(np.maximum(lam, 0.0), count, rho)
        return (vv * w) @ vv.T, (vv / w) @ vv.T
    return glasso(scatter, 2.0 * rho / count, solver,
                  w_init=warm[0], theta_init=warm[1])


def trcm_impute_mcecm(x: MaskedMatrix, pen: PenaltySpec,
                      opts: ImputeOptions | None = None) -> ImputationReport:
    """Multi-cycle ECM imputation under the transposable model.

    Cycle: E step (column form) -> mean refit and conditional maximization
    over the column concentration -> E step (row form) -> mean refit and
    conditional maximization over the row concentration.  Stops on the
    relative change of the observed penalized log-likelihood, which is
    nondecreasing by the ECM construction.
    """
    opts = opts or ImputeOptions()
    if pen.rho_r <= 0 or pen.rho_c <= 0:
        raise ValueError("MCECM requires positive penalties")
    check_pairwise_observation(x)
    n, p = x.shape
    solver = opts.solver

    means = estimate_means(x, solver)
    filled = x.filled_with(means.matrix())
    centered = filled - means.matrix()
    if opts.mcecm_init == "identity":
        covs = CovParams(np.eye(n), np.eye(p))
    elif pen.q_r == 2 and pen.q_c == 2:
        covs, _ = trcm_l2l2(centered, pen.rho_r, pen.rho_c)
    else:
        covs = trcm_coordwise(centered, pen, solver)
    model = TrcmModel(means, covs)

    # trace holds one value per completed cycle; the pre-cycle value is kept
    # separately so len(trace) == cycles
    obj_init = observed_loglik(x, model, pen)
    trace = [obj_init]
    sigma, sigma_inv = covs.sigma.copy(), covs.sigma_inv.copy()
    delta, delta_inv = covs.delta.copy(), covs.delta_inv.copy()
    cycles = 0
    for cycle in range(opts.mcecm_max_cycles):
        es = e_step(x, model, opts)
        means = _weighted_mean_fit(es.x_hat, sigma_inv, delta_inv)
        r = es.x_hat - means.matrix()
        s_c = (r.T @ sigma_inv @ r + es.g_mat) / n
        delta, delta_inv = _cm_cov(s_c, n, pen.rho_c, pen.q_c, solver,
                                   (delta, delta_inv))
        model = TrcmModel(means, CovParams(sigma, delta))

        es = e_step(x, model, opts)
        means = _weighted_mean_fit(es.x_hat, sigma_inv, delta_inv)
        r = es.x_hat - means.matrix()
        s_r = (r @ delta_inv @ r.T + es.f_mat) / p
        sigma, sigma_inv = _cm_cov(s_r, p, pen.rho_r, pen.q_r, solver,
                                   (sigma, sigma_inv))
        model = TrcmModel(means, CovParams(sigma, delta))

        trace.append(observed_loglik(x, model, pen))
        cycles = cycle + 1
        if abs(trace[-1] - trace[-2]) <= opts.mcecm_tol * (1.0 + abs(trace[-1])):
            break
    else:
        completed = ace_expectation(x, model, opts)
        raise ConvergenceError(
            f"MCECM hit the cycle cap ({opts.mcecm_max_cycles})",
            iterations=cycles,
            residual=abs(trace[-1] - trace[-2]),
            payload=ImputationReport(completed, model, trace[1:], cycles,
                                     "trcm-mcecm", {"penalty": pen},
                                     extras={"objective_init": obj_init}),
        )
    completed = ace_expectation(x, model, opts)
    return ImputationReport(completed, model, trace[1:], cycles, "trcm-mcecm",
                            {"penalty": pen},
                            extras={"objective_init": obj_init})


def trcm_impute_onestep(x: MaskedMatrix, pen: PenaltySpec,
                        opts: ImputeOptions | None = None) -> ImputationReport:
    """One-step approximation to the multi-cycle imputer.

    The two marginal EM completions are averaged at the missing cells, the
    transposable model is fitted to the averaged completion held fixed, and
    the final completion is the conditional expectation under that fit.
    All three candidate completions are retained for model selection.
    """
    opts = opts or ImputeOptions()
    check_pairwise_observation(x)
    rep_cols = rcm_impute(x, pen.rho_c, pen.q_c, "cols", opts)
    rep_rows = rcm_impute(x, pen.rho_r, pen.q_r, "rows", opts)
    averaged = x.values.copy()
    hole = ~x.mask
    averaged[hole] = 0.5 * (rep_cols.completed[hole] + rep_rows.completed[hole])

    means = estimate_means(MaskedMatrix(averaged), opts.solver)
    centered = averaged - means.matrix()
    if pen.q_r == 2 and pen.q_c == 2:
        covs, _ = trcm_l2l2(centered, pen.rho_r, pen.rho_c)
    else:
        covs = trcm_coordwise(centered, pen, opts.solver)
    model = TrcmModel(means, covs)
    completed = ace_expectation(x, model, opts)
    return ImputationReport(
        completed, model, [], 0, "trcm-onestep", {"penalty": pen},
        extras={
            "candidates": {
                "rcm-cols": rep_cols.completed,
                "rcm-rows": rep_rows.completed,
                "trcm": completed,
            },
            "averaged": averaged,
            "marginal_iterations": {"cols": rep_cols.iterations,
                                    "rows": rep_rows.iterations},
        },
    )
