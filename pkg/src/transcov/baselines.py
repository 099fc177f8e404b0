"""Comparison imputers: iterative reduced-rank SVD with a column mean
effect, correlation-weighted k-nearest-neighbor rows, and mean fills."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import ConvergenceError
from .estimation import estimate_means
from .imputation import ImputationReport
from .model import MaskedMatrix


@dataclass
class BaselineOptions:
    svd_tol: float = 1e-6
    svd_max_iters: int = 500
    knn_min_overlap: int = 2
    knn_weighted: bool = True

    def __post_init__(self):
        if self.svd_tol <= 0 or self.svd_max_iters < 1:
            raise ValueError("svd tolerance/cap must be positive")
        if self.knn_min_overlap < 1:
            raise ValueError("minimum overlap must be >= 1")


def svd_impute(x: MaskedMatrix, rank: int,
               opts: BaselineOptions | None = None) -> ImputationReport:
    """Reduced-rank completion with a column mean effect.

    Missing cells start at column means; each pass recomputes column means,
    takes the rank-k SVD of the centered completion, and refills the missing
    cells from the reconstruction.  Iterates to a fixed point; singular
    vectors are not regularized.
    """
    opts = opts or BaselineOptions()
    n, p = x.shape
    if not 1 <= rank <= min(n, p):
        raise ValueError(f"rank must be in [1, {min(n, p)}]")
    if x.is_fully_observed():
        return ImputationReport(x.values.copy(), None, [], 0, "svd",
                                {"rank": rank})
    hole = ~x.mask
    # column mean effect: fixed observed-cell means, removed before the SVD
    # and added back (recomputing them from imputed cells can drift)
    mu = np.where(x.mask, x.values, 0.0).sum(0) / x.mask.sum(0)
    filled = x.filled_with(np.broadcast_to(mu, (n, p)))
    for it in range(opts.svd_max_iters):
        u, d, vt = np.linalg.svd(filled - mu, full_matrices=False)
        recon = (u[:, :rank] * d[:rank]) @ vt[:rank] + mu
        change = float(np.max(np.abs(recon[hole] - filled[hole])))
        filled[hole] = recon[hole]
        if change < opts.svd_tol:
            return ImputationReport(filled, None, [], it + 1, "svd",
                                    {"rank": rank})
    raise ConvergenceError(
        f"svd imputation hit the cap ({opts.svd_max_iters} passes, "
        f"last change {change:.3e})",
        iterations=opts.svd_max_iters, residual=change, payload=filled,
    )


def knn_impute(x: MaskedMatrix, k: int,
               opts: BaselineOptions | None = None) -> ImputationReport:
    """Nearest-neighbor rows by pairwise-complete correlation.

    Column means (over observed cells) are removed, each missing cell is
    filled with the |correlation|-weighted average of the k most correlated
    rows observing that column, and the means are added back.  Correlation
    ties break toward the lower row index; cells with no usable neighbor
    fall back to the column mean and are counted in the report.
    """
    opts = opts or BaselineOptions()
    n, p = x.shape
    if not 1 <= k < n:
        raise ValueError(f"k must be in [1, {n - 1}]")
    col_means = np.where(x.mask, x.values, 0.0).sum(0) / x.mask.sum(0)
    centered = np.where(x.mask, x.values - col_means, np.nan)
    corr, valid = backend.pairwise_complete_corr(
        np.ascontiguousarray(np.where(x.mask, centered, 0.0)),
        np.ascontiguousarray(x.mask), int(opts.knn_min_overlap))
    completed = x.values.copy()
    fallbacks = []
    for i in range(n):
        mis = x.row_mis[i]
        if mis.size == 0:
            continue
        cand_all = np.flatnonzero(valid[i])
        for j in mis:
            cand = cand_all[x.mask[cand_all, j]]
            if cand.size == 0:
                completed[i, j] = col_means[j]
                fallbacks.append((int(i), int(j)))
                continue
            strength = np.abs(corr[i, cand])
            order = np.lexsort((cand, -strength))
            top = cand[order[:k]]
            w = np.abs(corr[i, top])
            if opts.knn_weighted and w.sum() > 0:
                val = float(w @ centered[top, j] / w.sum())
            else:
                val = float(centered[top, j].mean())
            completed[i, j] = val + col_means[j]
    return ImputationReport(completed, None, [], 1, "knn",
                            {"k": k, "weighted": opts.knn_weighted},
                            extras={"fallback_cells": fallbacks})


def mean_impute(x: MaskedMatrix, axis: str = "cols") -> ImputationReport:
    """Fill with column means, row means, or the additive two-way fit."""
    if axis == "cols":
        fill = np.where(x.mask, x.values, 0.0).sum(0) / x.mask.sum(0)
        fill = np.broadcast_to(fill, x.shape)
    elif axis == "rows":
        fill = np.where(x.mask, x.values, 0.0).sum(1) / x.mask.sum(1)
        fill = np.broadcast_to(fill[:, None], x.shape)
    elif axis == "additive":
        fill = estimate_means(x).matrix()
    else:
        raise ValueError("axis must be 'cols', 'rows' or 'additive'")
    return ImputationReport(x.filled_with(fill), None, [], 1, "mean",
                            {"axis": axis})
