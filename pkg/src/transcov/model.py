"""Mean-restricted matrix-variate normal: domain types and densities.

An n x p matrix X has additive means (a row vector nu and a column vector
mu, so E[X_ij] = nu_i + mu_j) and Kronecker-structured covariance: stacking
X column-major gives vec(X) ~ N(vec(M), delta (x) sigma) with sigma the
n x n row covariance and delta the p x p column covariance.  All types are
immutable after construction; operations are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .errors import CapExceeded, NumericalError

LOG_2PI = float(np.log(2.0 * np.pi))

# Relative eigenvalue floor for accepting a matrix as positive definite.
PD_RTOL = 1e-12

DEFAULT_VEC_CAP = 4096


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class MaskedMatrix:
    """Data matrix plus observed/missing mask.

    ``mask`` (True = observed) is the source of truth; ``values`` carries
    NaN in missing cells and those cells are never read.  Construction
    fails if any row or column is entirely missing.
    """

    def __init__(self, values, mask=None):
        values = np.array(values, dtype=float)
        if values.ndim != 2 or min(values.shape) < 1:
            raise ValueError("values must be a 2-d matrix with n, p >= 1")
        if mask is None:
            mask = ~np.isnan(values)
        else:
            mask = np.array(mask, dtype=bool)
            if mask.shape != values.shape:
                raise ValueError("mask shape does not match values")
        if not np.isfinite(values[mask]).all():
            raise ValueError("observed cells must be finite")
        rows_ok = mask.any(axis=1)
        if not rows_ok.all():
            raise ValueError(
                f"row {int(np.flatnonzero(~rows_ok)[0])} has no observed entries"
            )
        cols_ok = mask.any(axis=0)
        if not cols_ok.all():
            raise ValueError(
                f"column {int(np.flatnonzero(~cols_ok)[0])} has no observed entries"
            )
        self.values = _frozen(np.where(mask, values, np.nan))
        self.mask = _frozen(mask)
        n, p = values.shape
        self.row_obs = tuple(_frozen(np.flatnonzero(mask[i])) for i in range(n))
        self.row_mis = tuple(_frozen(np.flatnonzero(~mask[i])) for i in range(n))
        self.col_obs = tuple(_frozen(np.flatnonzero(mask[:, j])) for j in range(p))
        self.col_mis = tuple(_frozen(np.flatnonzero(~mask[:, j])) for j in range(p))

    @property
    def shape(self):
        return self.values.shape

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def n_missing(self) -> int:
        return int((~self.mask).sum())

    @property
    def missing_fraction(self) -> float:
        return self.n_missing / self.mask.size

    def is_fully_observed(self) -> bool:
        return self.n_missing == 0

    def filled_with(self, fill) -> np.ndarray:
        """Dense copy with missing cells replaced by ``fill`` (scalar or matrix)."""
        out = self.values.copy()
        if np.isscalar(fill):
            out[~self.mask] = fill
        else:
            out[~self.mask] = np.asarray(fill, dtype=float)[~self.mask]
        return out

    def observed_vec_order(self):
        """(row, col) indices of observed cells in column-major vec order."""
        flat = np.flatnonzero(self.mask.flatten(order="F"))
        return flat % self.n, flat // self.n

    def missing_vec_order(self):
        """(row, col) indices of missing cells in column-major vec order."""
        flat = np.flatnonzero(~self.mask.flatten(order="F"))
        return flat % self.n, flat // self.n

    def with_extra_mask(self, extra) -> "MaskedMatrix":
        """Copy with additional cells masked out (extra True = hide)."""
        extra = np.asarray(extra, dtype=bool)
        return MaskedMatrix(self.values, self.mask & ~extra)

    def transposed(self) -> "MaskedMatrix":
        return MaskedMatrix(self.values.T, self.mask.T)


@dataclass(frozen=True)
class MeanParams:
    """Additive means; canonicalized so mean(nu) = 0."""

    nu: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        nu = np.array(self.nu, dtype=float).ravel()
        mu = np.array(self.mu, dtype=float).ravel()
        if not (np.isfinite(nu).all() and np.isfinite(mu).all()):
            raise ValueError("mean vectors must be finite")
        shift = nu.mean()
        object.__setattr__(self, "nu", _frozen(nu - shift))
        object.__setattr__(self, "mu", _frozen(mu + shift))

    def matrix(self) -> np.ndarray:
        return self.nu[:, None] + self.mu[None, :]


class CovParams:
    """SPD row/column covariances with cached inverses and log-dets."""

    def __init__(self, sigma, delta):
        self.sigma, self.sigma_inv, self.logdet_sigma = _validate_spd(sigma, "sigma")
        self.delta, self.delta_inv, self.logdet_delta = _validate_spd(delta, "delta")

    @property
    def n(self) -> int:
        return self.sigma.shape[0]

    @property
    def p(self) -> int:
        return self.delta.shape[0]


def _validate_spd(a, name):
    a = np.array(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square")
    a = 0.5 * (a + a.T)
    w = np.linalg.eigvalsh(a)
    if w[0] <= PD_RTOL * max(w[-1], 0.0):
        raise NumericalError(
            f"{name} is not positive definite (min eig {w[0]:.3e}, max {w[-1]:.3e})"
        )
    inv = np.linalg.inv(a)
    inv = 0.5 * (inv + inv.T)
    return _frozen(a), _frozen(inv), float(np.log(w).sum())


@dataclass(frozen=True)
class TrcmModel:
    means: MeanParams
    covs: CovParams

    def __post_init__(self):
        if self.means.nu.size != self.covs.n or self.means.mu.size != self.covs.p:
            raise ValueError("mean and covariance dimensions disagree")

    @property
    def n(self) -> int:
        return self.covs.n

    @property
    def p(self) -> int:
        return self.covs.p

    def mean_matrix(self) -> np.ndarray:
        return self.means.matrix()

    @staticmethod
    def standard(n: int, p: int) -> "TrcmModel":
        return TrcmModel(
            MeanParams(np.zeros(n), np.zeros(p)), CovParams(np.eye(n), np.eye(p))
        )


@dataclass(frozen=True)
class PenaltySpec:
    """Penalty exponents (1 or 2) and nonnegative weights for the two
    concentration matrices.  The entrywise norm sums over all entries,
    diagonal included."""

    q_r: int = 2
    q_c: int = 2
    rho_r: float = 1.0
    rho_c: float = 1.0

    def __post_init__(self):
        if self.q_r not in (1, 2) or self.q_c not in (1, 2):
            raise ValueError("penalty exponents must be 1 or 2")
        if not (np.isfinite(self.rho_r) and np.isfinite(self.rho_c)):
            raise ValueError("penalty weights must be finite")
        if self.rho_r < 0 or self.rho_c < 0:
            raise ValueError("penalty weights must be nonnegative")

    def value(self, sigma_inv: np.ndarray, delta_inv: np.ndarray) -> float:
        return self.rho_r * entrywise_norm(sigma_inv, self.q_r) + self.rho_c * entrywise_norm(delta_inv, self.q_c)


def entrywise_norm(a: np.ndarray, q: int) -> float:
    """Sum of |entry|^q over all entries (diagonal included)."""
    if q == 1:
        return float(np.abs(a).sum())
    return float((a * a).sum())


def _check_data(x, model):
    x = np.asarray(x, dtype=float)
    if x.shape != (model.n, model.p):
        raise ValueError(f"data shape {x.shape} does not match model {(model.n, model.p)}")
    if not np.isfinite(x).all():
        raise ValueError("data must be fully observed and finite")
    return x


def log_density(x: np.ndarray, model: TrcmModel) -> float:
    """Log density of a fully observed matrix under the model."""
    x = _check_data(x, model)
    n, p = x.shape
    r = x - model.mean_matrix()
    quad = float((model.covs.sigma_inv @ r @ model.covs.delta_inv * r).sum())
    return (
        -0.5 * n * p * LOG_2PI
        - 0.5 * p * model.covs.logdet_sigma
        - 0.5 * n * model.covs.logdet_delta
        - 0.5 * quad
    )


def penalized_loglik(x: np.ndarray, model: TrcmModel, pen: PenaltySpec) -> float:
    """Penalized log-likelihood of a fully observed matrix (no 2*pi term)."""
    x = _check_data(x, model)
    n, p = x.shape
    r = x - model.mean_matrix()
    quad = float((model.covs.sigma_inv @ r @ model.covs.delta_inv * r).sum())
    return (
        -0.5 * p * model.covs.logdet_sigma
        - 0.5 * n * model.covs.logdet_delta
        - 0.5 * quad
        - pen.value(model.covs.sigma_inv, model.covs.delta_inv)
    )


def observed_loglik(x: MaskedMatrix, model: TrcmModel, pen: PenaltySpec) -> float:
    """Observed-data penalized log-likelihood.

    The Gaussian part is the exact marginal of vec(X) at the observed cells
    under (vec(M), delta (x) sigma); the observed block of the Kronecker
    covariance is assembled directly from index pairs, never the full
    np x np matrix.  The 2*pi constant is dropped, matching the fully
    observed convention, so a fully observed input reproduces
    penalized_loglik exactly.
    """
    if x.n != model.n or x.p != model.p:
        raise ValueError("data shape does not match model")
    oi, oj = x.observed_vec_order()
    omega_oo = model.covs.delta[np.ix_(oj, oj)] * model.covs.sigma[np.ix_(oi, oi)]
    resid = x.values[oi, oj] - (model.means.nu[oi] + model.means.mu[oj])
    try:
        chol = np.linalg.cholesky(omega_oo)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"observed covariance block not PD: {e}") from e
    z = sla.solve_triangular(chol, resid, lower=True)
    return (
        -0.5 * float(z @ z)
        - float(np.log(np.diag(chol)).sum())
        - pen.value(model.covs.sigma_inv, model.covs.delta_inv)
    )


def vec_form(model: TrcmModel, cap: int = DEFAULT_VEC_CAP):
    """Dense vectorized view: (vec(M), delta (x) sigma), column-major.

    Guarded by ``cap`` on n*p; larger instances should use the two-step
    conditional machinery in the imputation module instead.
    """
    n, p = model.n, model.p
    if n * p > cap:
        raise CapExceeded(
            f"n*p = {n * p} exceeds the dense cap {cap}; "
            "use the two-step conditionals / alternating expectations instead"
        )
    mean = model.mean_matrix().flatten(order="F")
    cov = np.kron(model.covs.delta, model.covs.sigma)
    return mean, cov


def sample(model: TrcmModel, seed: int) -> np.ndarray:
    """Draw one n x p matrix; deterministic given the seed."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((model.n, model.p))
    ls = np.linalg.cholesky(model.covs.sigma)
    ld = np.linalg.cholesky(model.covs.delta)
    return model.mean_matrix() + ls @ z @ ld.T


def marginal_row(model: TrcmModel, i: int):
    """Marginal of row i: (nu_i + mu, sigma_ii * delta)."""
    if not 0 <= i < model.n:
        raise IndexError(f"row index {i} out of range")
    return model.means.nu[i] + model.means.mu, model.covs.sigma[i, i] * model.covs.delta


def marginal_col(model: TrcmModel, j: int):
    """Marginal of column j: (nu + mu_j, delta_jj * sigma)."""
    if not 0 <= j < model.p:
        raise IndexError(f"column index {j} out of range")
    return model.means.nu + model.means.mu[j], model.covs.delta[j, j] * model.covs.sigma
