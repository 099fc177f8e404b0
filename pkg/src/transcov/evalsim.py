"""Simulation generators, missingness injectors, scoring, entry-wise
cross-validation, and the benchmark harness."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .baselines import BaselineOptions, knn_impute, mean_impute, svd_impute
from .errors import ConvergenceError, NumericalError, TranscovError
from .imputation import (
    ImputeOptions,
    rcm_impute,
    trcm_impute_mcecm,
    trcm_impute_onestep,
)
from .model import CovParams, MaskedMatrix, MeanParams, PenaltySpec, TrcmModel, sample

DEFAULT_RHO_GRID = tuple(float(v) for v in np.logspace(-2.0, 2.0, 9))
DEFAULT_K_GRID = (1, 3, 5, 10, 15)
DEFAULT_CV_FOLDS = 5


@dataclass(frozen=True)
class CovStructure:
    """One of the four benchmark covariance shapes, all unit-diagonal."""

    kind: str
    dim: int
    value: float
    block: int = 5
    lag: int = 5

    def __post_init__(self):
        if self.kind not in ("autoregressive", "equal_offdiag", "blocked", "banded"):
            raise ValueError(f"unknown covariance kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dimension must be >= 1")


def gen_covariance(spec: CovStructure) -> np.ndarray:
    """Materialize a CovStructure; the result is checked PD, not assumed."""
    k, v = spec.dim, spec.value
    idx = np.arange(k)
    dist = np.abs(idx[:, None] - idx[None, :])
    if spec.kind == "autoregressive":
        out = v ** dist.astype(float)
    elif spec.kind == "equal_offdiag":
        out = np.full((k, k), v)
        np.fill_diagonal(out, 1.0)
    elif spec.kind == "blocked":
        out = np.zeros((k, k))
        for start in range(0, k, spec.block):
            stop = min(start + spec.block, k)
            out[start:stop, start:stop] = v
        np.fill_diagonal(out, 1.0)
    else:  # banded
        out = np.where((dist % spec.lag == 0) & (dist > 0), v, 0.0)
        np.fill_diagonal(out, 1.0)
    w = np.linalg.eigvalsh(out)
    if w[0] <= 0:
        raise NumericalError(
            f"{spec.kind} structure at dim {k}, value {v} is not PD "
            f"(min eig {w[0]:.3e})"
        )
    return out


@dataclass
class MethodSpec:
    """An imputation method plus its tuning grid for cross-validation."""

    tag: str
    grid: list = field(default_factory=list)

    def __post_init__(self):
        if self.tag not in METHOD_TAGS:
            raise ValueError(f"unknown method tag {self.tag!r}")


@dataclass
class ExperimentSpec:
    n: int
    p: int
    row_structure: CovStructure | None
    col_structure: CovStructure | None
    methods: list
    noise: str = "gaussian"
    miss_kind: str = "mcar"
    miss_fraction: float = 0.25
    pattern_template: MaskedMatrix | None = None
    replicates: int = 50
    folds: int = DEFAULT_CV_FOLDS
    seed: int = 0
    options: ImputeOptions = field(default_factory=ImputeOptions)
    baseline_options: BaselineOptions = field(default_factory=BaselineOptions)

    def __post_init__(self):
        if not 0.0 <= self.miss_fraction < 1.0:
            raise ValueError("missing fraction must be in [0, 1)")
        if self.replicates < 1:
            raise ValueError("replicate count must be >= 1")
        if self.noise not in ("gaussian", "chisq3", "poisson3"):
            raise ValueError(f"unknown noise kind {self.noise!r}")


def inject_mcar(x: np.ndarray, fraction: float, seed: int,
                max_attempts: int = 100) -> MaskedMatrix:
    """Mask exactly floor(fraction * n * p) cells uniformly at random.

    Draws are retried (same deterministic stream) until every row and
    column keeps at least one observed cell.
    """
    x = np.asarray(x, dtype=float)
    n, p = x.shape
    count = int(np.floor(fraction * n * p))
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        mask = np.ones(n * p, dtype=bool)
        if count:
            mask[rng.choice(n * p, size=count, replace=False)] = False
        mask = mask.reshape(n, p)
        if mask.any(axis=1).all() and mask.any(axis=0).all():
            return MaskedMatrix(x, mask)
    raise TranscovError(
        f"could not draw a feasible mask at fraction {fraction} "
        f"in {max_attempts} attempts"
    )


def inject_pattern(x: np.ndarray, template: MaskedMatrix, seed: int,
                   max_attempts: int = 100) -> MaskedMatrix:
    """Give each row the missingness footprint of a random template row."""
    x = np.asarray(x, dtype=float)
    n, p = x.shape
    if template.p != p:
        raise ValueError("template column count must match the data")
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        picks = rng.integers(0, template.n, size=n)
        mask = template.mask[picks]
        if mask.any(axis=1).all() and mask.any(axis=0).all():
            return MaskedMatrix(x, mask)
    raise TranscovError(
        f"could not draw a feasible pattern mask in {max_attempts} attempts"
    )


@dataclass(frozen=True)
class ScoreResult:
    mse: float
    rmse: float
    abs_errors: np.ndarray


def score(completed: np.ndarray, truth: np.ndarray, holdout: np.ndarray) -> ScoreResult:
    """Errors over held-out cells only (holdout True = scored)."""
    holdout = np.asarray(holdout, dtype=bool)
    if not holdout.any():
        raise ValueError("no held-out cells to score")
    err = np.asarray(completed, float)[holdout] - np.asarray(truth, float)[holdout]
    mse = float(np.mean(err * err))
    return ScoreResult(mse, float(np.sqrt(mse)), np.abs(err))


def default_grid(tag: str, n: int, p: int) -> list:
    """Documented default tuning grids per method."""
    if tag in ("trcm-onestep", "trcm-mcecm"):
        return [{"rho_r": r, "rho_c": r} for r in DEFAULT_RHO_GRID]
    if tag in ("rcm-rows", "rcm-cols"):
        return [{"rho": r} for r in DEFAULT_RHO_GRID]
    if tag == "svd":
        return [{"rank": r} for r in range(1, min(10, n, p) + 1)]
    if tag == "knn":
        return [{"k": k} for k in DEFAULT_K_GRID if k < n]
    return [{}]


def run_method(x: MaskedMatrix, tag: str, params: dict,
               opts: ImputeOptions | None = None,
               pen: PenaltySpec | None = None,
               baseline_opts: BaselineOptions | None = None):
    """Dispatch one imputation run; returns an ImputationReport."""
    opts = opts or ImputeOptions()
    pen = pen or PenaltySpec()
    baseline_opts = baseline_opts or BaselineOptions()
    if tag == "mean-cols":
        return mean_impute(x, "cols")
    if tag == "mean-rows":
        return mean_impute(x, "rows")
    if tag == "mean-additive":
        return mean_impute(x, "additive")
    if tag == "svd":
        return svd_impute(x, int(params["rank"]), baseline_opts)
    if tag == "knn":
        return knn_impute(x, int(params["k"]), baseline_opts)
    if tag == "rcm-cols":
        return rcm_impute(x, float(params["rho"]), int(params.get("q", pen.q_c)),
                          "cols", opts)
    if tag == "rcm-rows":
        return rcm_impute(x, float(params["rho"]), int(params.get("q", pen.q_r)),
                          "rows", opts)
    spec = PenaltySpec(
        int(params.get("q_r", pen.q_r)), int(params.get("q_c", pen.q_c)),
        float(params.get("rho_r", pen.rho_r)), float(params.get("rho_c", pen.rho_c)),
    )
    if tag == "trcm-mcecm":
        return trcm_impute_mcecm(x, spec, opts)
    if tag == "trcm-onestep":
        return trcm_impute_onestep(x, spec, opts)
    raise ValueError(f"unknown method tag {tag!r}")


METHOD_TAGS = (
    "mean-cols", "mean-rows", "mean-additive", "svd", "knn",
    "rcm-cols", "rcm-rows", "trcm-mcecm", "trcm-onestep",
)


def _tie_key(params: dict):
    # prefer the simplest model among exact CV ties: heavier shrinkage,
    # smaller rank, fewer neighbors
    return (
        -(params.get("rho", 0.0) + params.get("rho_r", 0.0) + params.get("rho_c", 0.0)),
        params.get("rank", 0),
        params.get("k", 0),
    )


def make_folds(x: MaskedMatrix, folds: int, seed: int, max_attempts: int = 20):
    """Partition the observed cells into entry-wise folds.

    Every fold, when additionally masked, must leave a valid MaskedMatrix;
    infeasible partitions are redrawn from the same stream.
    """
    obs = np.argwhere(x.mask)
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        perm = rng.permutation(obs.shape[0])
        chunks = np.array_split(perm, folds)
        plans = []
        ok = True
        for ch in chunks:
            extra = np.zeros(x.shape, dtype=bool)
            extra[obs[ch, 0], obs[ch, 1]] = True
            keep = x.mask & ~extra
            if not (keep.any(axis=1).all() and keep.any(axis=0).all()):
                ok = False
                break
            plans.append(extra)
        if ok:
            return plans
    raise TranscovError(f"could not partition observed cells into {folds} folds")


def cross_validate(x: MaskedMatrix, tag: str, grid: list, folds: int = DEFAULT_CV_FOLDS,
                   seed: int = 0, opts: ImputeOptions | None = None,
                   baseline_opts: BaselineOptions | None = None):
    """Entry-wise K-fold selection of a method's tuning parameters.

    Returns (best_params, table); the table has one row per grid point with
    per-fold and mean held-out MSE.  Exact ties go to the simpler model.
    A grid point whose solver fails to converge is recorded as failed and
    excluded from selection; if every point fails the error propagates.
    """
    if not grid:
        raise ValueError("grid must be nonempty")
    opts = opts or ImputeOptions()
    plans = make_folds(x, folds, seed)
    table = []
    last_exc = None
    for params in grid:
        errs = []
        row = {"params": dict(params), "fold_mse": errs,
               "mean_mse": np.inf, "failed": False, "error": ""}
        try:
            for extra in plans:
                x_train = x.with_extra_mask(extra)
                rep = run_method(x_train, tag, params, opts,
                                 baseline_opts=baseline_opts)
                errs.append(score(rep.completed, x.values, extra).mse)
            row["mean_mse"] = float(np.mean(errs))
        except ConvergenceError as exc:
            row.update(failed=True, error=str(exc))
            last_exc = exc
        table.append(row)
    usable = [row for row in table if not row["failed"]]
    if not usable:
        raise ConvergenceError(
            f"every grid point failed to converge for method {tag!r}",
            payload=table,
        ) from last_exc
    best = min(usable, key=lambda row: (row["mean_mse"], _tie_key(row["params"])))
    return dict(best["params"]), table


ONESTEP_CANDIDATES = ("rcm-cols", "rcm-rows", "trcm")


def select_onestep_model(x: MaskedMatrix, pen_grid: list, folds: int = DEFAULT_CV_FOLDS,
                         seed: int = 0, opts: ImputeOptions | None = None,
                         pen: PenaltySpec | None = None):
    """Cross-validate the three one-step candidate completions jointly.

    Each one-step run yields marginal-rows, marginal-columns and
    transposable completions; all three are scored on every fold and the
    best (candidate, penalty) pair wins.  Marginal candidates win exact
    ties, being the simpler models.
    """
    if not pen_grid:
        raise ValueError("penalty grid must be nonempty")
    opts = opts or ImputeOptions()
    pen = pen or PenaltySpec()
    plans = make_folds(x, folds, seed)
    table = []
    last_exc = None
    for params in pen_grid:
        fold_errs = {c: [] for c in ONESTEP_CANDIDATES}
        failed, error = False, ""
        try:
            for extra in plans:
                x_train = x.with_extra_mask(extra)
                rep = run_method(x_train, "trcm-onestep", params, opts, pen)
                for cand in ONESTEP_CANDIDATES:
                    comp = rep.extras["candidates"][cand]
                    fold_errs[cand].append(score(comp, x.values, extra).mse)
        except ConvergenceError as exc:
            failed, error = True, str(exc)
            last_exc = exc
        for cand in ONESTEP_CANDIDATES:
            table.append({
                "candidate": cand,
                "params": dict(params),
                "fold_mse": fold_errs[cand],
                "mean_mse": np.inf if failed else float(np.mean(fold_errs[cand])),
                "failed": failed,
                "error": error,
            })
    usable = [row for row in table if not row["failed"]]
    if not usable:
        raise ConvergenceError(
            "every penalty grid point failed to converge", payload=table,
        ) from last_exc
    order = {c: i for i, c in enumerate(ONESTEP_CANDIDATES)}
    best = min(usable, key=lambda row: (row["mean_mse"], order[row["candidate"]],
                                        _tie_key(row["params"])))
    return best["candidate"], {"best": best, "table": table}


def _derive_seeds(master: int, replicate: int, count: int):
    ss = np.random.SeedSequence([int(master), int(replicate)])
    return [int(s) for s in ss.generate_state(count)]


def _standardized_quantile(noise: str):
    if noise == "chisq3":
        return lambda u: (stats.chi2.ppf(u, df=3) - 3.0) / np.sqrt(6.0)
    if noise == "poisson3":
        return lambda u: (stats.poisson.ppf(u, mu=3) - 3.0) / np.sqrt(3.0)
    raise ValueError(noise)


def generate_truth(spec: ExperimentSpec, seed: int) -> np.ndarray:
    """Zero-mean draw with the requested Kronecker correlation structure.

    Non-Gaussian marginals go through a Gaussian copula (normal CDF then
    target quantile) and are standardized by the target's own moments, so
    the induced correlation is approximately, not exactly, the nominal one.
    """
    sigma = gen_covariance(spec.row_structure) if spec.row_structure else np.eye(spec.n)
    delta = gen_covariance(spec.col_structure) if spec.col_structure else np.eye(spec.p)
    model = TrcmModel(MeanParams(np.zeros(spec.n), np.zeros(spec.p)),
                      CovParams(sigma, delta))
    z = sample(model, seed)
    if spec.noise == "gaussian":
        return z
    quantile = _standardized_quantile(spec.noise)
    return quantile(stats.norm.cdf(z))


def run_experiment(spec: ExperimentSpec):
    """Replicated benchmark: generate, mask, tune by CV, impute, score.

    Returns {"replicates": rows, "summary": rows}; failed replicates are
    recorded with their error, never dropped silently.  Bit-identical given
    an identical spec.
    """
    rows = []
    for rep_idx in range(spec.replicates):
        seed_data, seed_miss, seed_cv = _derive_seeds(spec.seed, rep_idx, 3)
        truth = generate_truth(spec, seed_data)
        if spec.miss_kind == "mcar":
            masked = inject_mcar(truth, spec.miss_fraction, seed_miss)
        elif spec.miss_kind == "pattern":
            if spec.pattern_template is None:
                raise ValueError("pattern missingness needs a template")
            masked = inject_pattern(truth, spec.pattern_template, seed_miss)
        else:
            raise ValueError(f"unknown missingness kind {spec.miss_kind!r}")
        holdout = ~masked.mask
        for method in spec.methods:
            grid = method.grid or default_grid(method.tag, spec.n, spec.p)
            row = {"replicate": rep_idx, "method": method.tag, "failed": False,
                   "error": "", "params": {}, "mse": np.nan, "rmse": np.nan}
            try:
                if len(grid) > 1:
                    best, _ = cross_validate(masked, method.tag, grid,
                                             spec.folds, seed_cv, spec.options,
                                             spec.baseline_options)
                else:
                    best = dict(grid[0])
                rep = run_method(masked, method.tag, best, spec.options,
                                 baseline_opts=spec.baseline_options)
                sc = score(rep.completed, truth, holdout)
                row.update(params=best, mse=sc.mse, rmse=sc.rmse)
            except TranscovError as exc:
                row.update(failed=True, error=str(exc))
            rows.append(row)
    summary = []
    for method in spec.methods:
        got = [r for r in rows if r["method"] == method.tag and not r["failed"]]
        failed = sum(1 for r in rows if r["method"] == method.tag and r["failed"])
        mses = np.array([r["mse"] for r in got])
        summary.append({
            "method": method.tag,
            "replicates": len(got),
            "failed": failed,
            "mean_mse": float(mses.mean()) if mses.size else np.nan,
            "se_mse": float(mses.std(ddof=1) / np.sqrt(mses.size))
            if mses.size > 1 else np.nan,
        })
    return {"replicates": rows, "summary": summary}
