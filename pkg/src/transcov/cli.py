"""Batch command line: impute, estimate, cv, simulate.

Matrix files are delimited text with a configurable missing token; every
run writes a JSON sidecar report embedding the full configuration and the
literal argv, so any sidecar can be replayed bit-identically.
Exit codes: 0 success, 1 input error, 2 convergence failure (partial
results are still written, flagged as failed).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .baselines import BaselineOptions
from .errors import ConvergenceError, TranscovError
from .estimation import estimate_means, trcm_coordwise, trcm_l2l2
from .evalsim import (
    CovStructure,
    ExperimentSpec,
    MethodSpec,
    cross_validate,
    default_grid,
    run_experiment,
    run_method,
    score,
)
from .imputation import ImputeOptions
from .model import MaskedMatrix, PenaltySpec

SCHEMA = "transcov-report/1"


@dataclass
class RunConfig:
    input: str = ""
    output: str = ""
    method: str = "trcm-onestep"
    axis: str = "cols"
    q_row: int = 2
    q_col: int = 2
    rho_row: list = field(default_factory=lambda: [1.0])
    rho_col: list = field(default_factory=lambda: [1.0])
    rank: list = field(default_factory=lambda: [2])
    k: list = field(default_factory=lambda: [5])
    folds: int = 5
    seed: int = 0
    na_token: str = "NA"
    delimiter: str = ","
    header: bool = False
    rownames: bool = False
    transpose: bool = False
    truth: str = ""
    # tolerance overrides (module defaults when left alone)
    svd_tol: float = 1e-6
    svd_max_iters: int = 500
    em_tol: float = 1e-6
    mcecm_tol: float = 1e-6
    ace_tol: float = 1e-8
    glasso_tol: float = 1e-6


@dataclass
class ParsedMatrix:
    data: MaskedMatrix
    header: list | None
    rownames: list | None


def parse_matrix(path: str, cfg: RunConfig) -> ParsedMatrix:
    """Read a delimited matrix; the missing token and empty fields are
    missing cells.  Every parse failure names its line and column."""
    lines = Path(path).read_text().splitlines()
    rows = [ln for ln in lines if ln.strip() != ""]
    if not rows:
        raise ValueError(f"{path}: empty matrix file")
    header = None
    start = 0
    if cfg.header:
        header = rows[0].split(cfg.delimiter)
        if cfg.rownames:
            header = header[1:]
        start = 1
    rownames = [] if cfg.rownames else None
    values, mask = [], []
    width = None
    for lineno, ln in enumerate(rows[start:], start=start + 1):
        fields = ln.split(cfg.delimiter)
        if cfg.rownames:
            rownames.append(fields[0])
            fields = fields[1:]
        if width is None:
            width = len(fields)
        elif len(fields) != width:
            raise ValueError(
                f"{path}: line {lineno}: expected {width} fields, got {len(fields)}"
            )
        vrow, mrow = [], []
        for colno, tok in enumerate(fields, start=1):
            tok = tok.strip()
            if tok == cfg.na_token or tok == "":
                vrow.append(np.nan)
                mrow.append(False)
                continue
            try:
                vrow.append(float(tok))
            except ValueError:
                raise ValueError(
                    f"{path}: line {lineno}, column {colno}: cannot parse {tok!r}"
                ) from None
            mrow.append(True)
        values.append(vrow)
        mask.append(mrow)
    data = MaskedMatrix(np.array(values), np.array(mask, dtype=bool))
    return ParsedMatrix(data, header, rownames)


def format_matrix(values: np.ndarray, cfg: RunConfig,
                  header=None, rownames=None, mask=None) -> str:
    """Delimited text; floats use repr so reruns round-trip bit-identically.
    Cells where ``mask`` is False are written as the missing token."""
    out = []
    if header is not None:
        head = list(header)
        if rownames is not None:
            head = [""] + head
        out.append(cfg.delimiter.join(head))
    for i, row in enumerate(np.asarray(values)):
        cells = [
            cfg.na_token if (mask is not None and not mask[i, j]) else repr(float(v))
            for j, v in enumerate(row)
        ]
        if rownames is not None:
            cells = [str(rownames[i])] + cells
        out.append(cfg.delimiter.join(cells))
    return "\n".join(out) + "\n"


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()
                if not isinstance(v, np.ndarray)}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, PenaltySpec):
        return asdict(obj)
    return obj


def write_report(report: dict, path: str) -> None:
    payload = _json_safe(report)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _sidecar(cfg_record: dict, command: str, body: dict) -> dict:
    return {"schema": SCHEMA, "command": command, "config": cfg_record, **body}


def _penalty(cfg: RunConfig) -> PenaltySpec:
    return PenaltySpec(cfg.q_row, cfg.q_col, cfg.rho_row[0], cfg.rho_col[0])


def _options(cfg: RunConfig):
    opts = ImputeOptions(em_tol=cfg.em_tol, mcecm_tol=cfg.mcecm_tol,
                         ace_tol=cfg.ace_tol)
    opts.solver.glasso_tol = cfg.glasso_tol
    base = BaselineOptions(svd_tol=cfg.svd_tol, svd_max_iters=cfg.svd_max_iters)
    return opts, base


def _single_params(cfg: RunConfig) -> dict:
    if cfg.method == "svd":
        return {"rank": cfg.rank[0]}
    if cfg.method == "knn":
        return {"k": cfg.k[0]}
    if cfg.method in ("rcm-rows",):
        return {"rho": cfg.rho_row[0], "q": cfg.q_row}
    if cfg.method in ("rcm-cols",):
        return {"rho": cfg.rho_col[0], "q": cfg.q_col}
    if cfg.method.startswith("trcm"):
        return {"rho_r": cfg.rho_row[0], "rho_c": cfg.rho_col[0],
                "q_r": cfg.q_row, "q_c": cfg.q_col}
    return {}


def _maybe_transpose(cfg: RunConfig, parsed: ParsedMatrix):
    """Orient so rows are the long dimension when --transpose is set.

    Swaps the row/column roles of the method and penalties in place so the
    caller's semantics survive the flip; returns (data, flipped).  Callers
    must snapshot the config for the sidecar before invoking this.
    """
    data = parsed.data
    if not cfg.transpose or data.n >= data.p:
        return data, False
    cfg.q_row, cfg.q_col = cfg.q_col, cfg.q_row
    cfg.rho_row, cfg.rho_col = cfg.rho_col, cfg.rho_row
    swap = {"rcm-rows": "rcm-cols", "rcm-cols": "rcm-rows"}
    cfg.method = swap.get(cfg.method, cfg.method)
    if cfg.axis in ("rows", "cols"):
        cfg.axis = "rows" if cfg.axis == "cols" else "cols"
    return data.transposed(), True


def cmd_impute(cfg: RunConfig) -> int:
    cfg_record = asdict(cfg)
    parsed = parse_matrix(cfg.input, cfg)
    data, flipped = _maybe_transpose(cfg, parsed)
    method = cfg.method if cfg.method != "mean" else f"mean-{cfg.axis}"
    params = _single_params(cfg)
    opts, base = _options(cfg)
    failed, error = False, ""
    try:
        rep = run_method(data, method, params, opts, _penalty(cfg), base)
        completed = rep.completed
        body = {"method": rep.method, "params": _json_safe(rep.params),
                "iterations": rep.iterations,
                "objective_trace": [float(v) for v in rep.objective_trace],
                "extras": _json_safe(rep.extras)}
    except ConvergenceError as exc:
        failed, error = True, str(exc)
        payload = getattr(exc, "payload", None)
        if hasattr(payload, "completed"):
            completed = payload.completed
        elif isinstance(payload, np.ndarray):
            completed = payload
        else:
            completed = data.filled_with(0.0)
        body = {"method": method, "params": params, "iterations": 0,
                "objective_trace": []}
    if flipped:
        completed = np.ascontiguousarray(completed.T)
    body.update(failed=failed, error=error,
                input_shape=list(parsed.data.shape),
                n_missing=parsed.data.n_missing,
                missing_fraction=parsed.data.missing_fraction)
    if cfg.truth and not failed:
        truth = parse_matrix(cfg.truth, cfg).data
        sc = score(completed, truth.values, ~parsed.data.mask)
        body["metrics"] = {"mse": sc.mse, "rmse": sc.rmse}
    Path(cfg.output).write_text(
        format_matrix(completed, cfg, parsed.header, parsed.rownames))
    write_report(_sidecar(cfg_record, "impute", body),
                 cfg.output + ".report.json")
    return 2 if failed else 0


def cmd_estimate(cfg: RunConfig) -> int:
    cfg_record = asdict(cfg)
    parsed = parse_matrix(cfg.input, cfg)
    data, flipped = _maybe_transpose(cfg, parsed)
    means = estimate_means(data)
    filled = data.filled_with(means.matrix())
    centered = filled - means.matrix()
    pen = _penalty(cfg)
    spectral = None
    if pen.q_r == 2 and pen.q_c == 2:
        covs, sol = trcm_l2l2(centered, pen.rho_r, pen.rho_c)
        spectral = {"singular_values": sol.d.tolist(),
                    "beta": sol.beta.tolist(), "theta": sol.theta.tolist(),
                    "coeffs": sol.coeffs.tolist(), "rank": sol.rank}
    else:
        covs = trcm_coordwise(centered, pen)
    nu, mu, sigma, delta = means.nu, means.mu, covs.sigma, covs.delta
    if flipped:
        nu, mu = mu, nu
        sigma, delta = delta, sigma
    out = Path(cfg.output)
    Path(str(out) + ".sigma.csv").write_text(format_matrix(sigma, cfg))
    Path(str(out) + ".delta.csv").write_text(format_matrix(delta, cfg))
    Path(str(out) + ".means.csv").write_text(
        "nu," + ",".join(repr(float(v)) for v in nu) + "\n"
        "mu," + ",".join(repr(float(v)) for v in mu) + "\n")
    body = {"penalty": asdict(pen), "spectral": spectral,
            "n_missing": parsed.data.n_missing, "mean_filled": parsed.data.n_missing > 0}
    write_report(_sidecar(cfg_record, "estimate", body),
                 str(out) + ".report.json")
    return 0


def _grid_from_cfg(cfg: RunConfig, data: MaskedMatrix) -> list:
    method = cfg.method
    if method == "svd":
        return [{"rank": int(r)} for r in cfg.rank]
    if method == "knn":
        return [{"k": int(k)} for k in cfg.k]
    if method == "rcm-rows":
        return [{"rho": float(r), "q": cfg.q_row} for r in cfg.rho_row]
    if method == "rcm-cols":
        return [{"rho": float(r), "q": cfg.q_col} for r in cfg.rho_col]
    if method.startswith("trcm"):
        return [{"rho_r": float(a), "rho_c": float(b),
                 "q_r": cfg.q_row, "q_c": cfg.q_col}
                for a in cfg.rho_row for b in cfg.rho_col]
    return default_grid(method, data.n, data.p)


def cmd_cv(cfg: RunConfig) -> int:
    cfg_record = asdict(cfg)
    parsed = parse_matrix(cfg.input, cfg)
    data, _ = _maybe_transpose(cfg, parsed)
    method = cfg.method if cfg.method != "mean" else f"mean-{cfg.axis}"
    grid = _grid_from_cfg(cfg, data)
    opts, base = _options(cfg)
    best, table = cross_validate(data, method, grid, cfg.folds, cfg.seed,
                                 opts, base)
    body = {"method": method, "best": best, "table": _json_safe(table)}
    write_report(_sidecar(cfg_record, "cv", body), cfg.output)
    return 0


def parse_spec_file(path: str) -> dict:
    """Flat key = value config; '#' starts a comment, keys are dotted."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}: line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def _coerce(value: str):
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        return value


def _structure_from_keys(kv: dict, prefix: str, dim: int) -> CovStructure | None:
    kind = kv.get(f"{prefix}.kind", "")
    if not kind or kind == "identity":
        return None
    return CovStructure(
        kind, dim, float(kv.get(f"{prefix}.value", 0.8)),
        block=int(kv.get(f"{prefix}.block", 5)), lag=int(kv.get(f"{prefix}.lag", 5)),
    )


def spec_from_file(path: str) -> ExperimentSpec:
    kv = parse_spec_file(path)
    n = int(kv["n"])
    p = int(kv["p"])
    methods = []
    for tag in (t.strip() for t in kv.get("methods", "trcm-onestep").split(",")):
        grid = []
        params = sorted(k.split(".")[2] for k in kv if k.startswith(f"grid.{tag}."))
        if params:
            lists = {prm: [_coerce(v.strip())
                           for v in kv[f"grid.{tag}.{prm}"].split(",")]
                     for prm in params}
            grid = [dict()]
            for prm, vals in lists.items():
                grid = [dict(g, **{prm: v}) for g in grid for v in vals]
            if tag.startswith("trcm") and grid and "rho" in grid[0]:
                grid = [{"rho_r": g["rho"], "rho_c": g["rho"]} for g in grid]
        methods.append(MethodSpec(tag, grid))
    baseline = BaselineOptions(
        svd_tol=float(kv.get("baseline.svd_tol", 1e-6)),
        svd_max_iters=int(kv.get("baseline.svd_max_iters", 500)),
        knn_min_overlap=int(kv.get("baseline.knn_min_overlap", 2)),
        knn_weighted=kv.get("baseline.knn_weighted", "true").lower() != "false",
    )
    return ExperimentSpec(
        n=n, p=p,
        row_structure=_structure_from_keys(kv, "row", n),
        col_structure=_structure_from_keys(kv, "col", p),
        methods=methods,
        noise=kv.get("noise", "gaussian"),
        miss_kind=kv.get("missing.kind", "mcar"),
        miss_fraction=float(kv.get("missing.fraction", 0.25)),
        replicates=int(kv.get("replicates", 50)),
        folds=int(kv.get("folds", 5)),
        seed=int(kv.get("seed", 0)),
        baseline_options=baseline,
    )


def cmd_simulate(spec_path: str, output: str) -> int:
    spec = spec_from_file(spec_path)
    result = run_experiment(spec)
    with open(output, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["replicate", "method", "mse", "rmse", "failed", "params"])
        for row in result["replicates"]:
            writer.writerow([
                row["replicate"], row["method"], repr(row["mse"]),
                repr(row["rmse"]), int(row["failed"]),
                json.dumps(_json_safe(row["params"]), sort_keys=True),
            ])
    body = {"spec_file": spec_path, "spec_keys": parse_spec_file(spec_path),
            "summary": _json_safe(result["summary"])}
    write_report({"schema": SCHEMA, "command": "simulate", **body},
                 output + ".report.json")
    any_failed = any(r["failed"] for r in result["replicates"])
    return 2 if any_failed else 0


def _float_list(text: str):
    return [float(v) for v in str(text).split(",") if v != ""]


def _int_list(text: str):
    return [int(v) for v in str(text).split(",") if v != ""]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="transcov",
        description="Transposable covariance models: imputation and estimation",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp, output_required=True):
        sp.add_argument("--input", required=True)
        sp.add_argument("--output", required=output_required)
        sp.add_argument("--method", default="trcm-onestep")
        sp.add_argument("--axis", default="cols",
                        choices=["cols", "rows", "additive"])
        sp.add_argument("--q-row", type=int, default=2, choices=[1, 2])
        sp.add_argument("--q-col", type=int, default=2, choices=[1, 2])
        sp.add_argument("--rho-row", type=_float_list, default=[1.0])
        sp.add_argument("--rho-col", type=_float_list, default=[1.0])
        sp.add_argument("--rank", type=_int_list, default=[2])
        sp.add_argument("--k", type=_int_list, default=[5])
        sp.add_argument("--folds", type=int, default=5)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--na-token", default="NA")
        sp.add_argument("--delimiter", default=",")
        sp.add_argument("--header", action="store_true")
        sp.add_argument("--rownames", action="store_true")
        sp.add_argument("--transpose", action="store_true")
        sp.add_argument("--truth", default="")
        sp.add_argument("--svd-tol", type=float, default=1e-6)
        sp.add_argument("--svd-max-iters", type=int, default=500)
        sp.add_argument("--em-tol", type=float, default=1e-6)
        sp.add_argument("--mcecm-tol", type=float, default=1e-6)
        sp.add_argument("--ace-tol", type=float, default=1e-8)
        sp.add_argument("--glasso-tol", type=float, default=1e-6)

    common(sub.add_parser("impute", help="impute one matrix with one method"))
    common(sub.add_parser("estimate", help="fit means and covariances"))
    common(sub.add_parser("cv", help="grid-search tuning parameters"))
    sim = sub.add_parser("simulate", help="run a replicated benchmark")
    sim.add_argument("--spec", required=True)
    sim.add_argument("--output", required=True)
    return ap


def _config_from_args(args) -> RunConfig:
    return RunConfig(
        input=args.input, output=args.output, method=args.method, axis=args.axis,
        q_row=args.q_row, q_col=args.q_col, rho_row=args.rho_row,
        rho_col=args.rho_col, rank=args.rank, k=args.k, folds=args.folds,
        seed=args.seed, na_token=args.na_token, delimiter=args.delimiter,
        header=args.header, rownames=args.rownames, transpose=args.transpose,
        truth=args.truth, svd_tol=args.svd_tol, svd_max_iters=args.svd_max_iters,
        em_tol=args.em_tol, mcecm_tol=args.mcecm_tol, ace_tol=args.ace_tol,
        glasso_tol=args.glasso_tol,
    )


def config_to_args(config: dict) -> list:
    """Rebuild the argv of a sidecar's embedded config (for replays)."""
    cfg = RunConfig(**config)
    out = ["--input", cfg.input, "--output", cfg.output, "--method", cfg.method,
           "--axis", cfg.axis, "--q-row", str(cfg.q_row), "--q-col", str(cfg.q_col),
           "--rho-row", ",".join(repr(v) for v in cfg.rho_row),
           "--rho-col", ",".join(repr(v) for v in cfg.rho_col),
           "--rank", ",".join(str(v) for v in cfg.rank),
           "--k", ",".join(str(v) for v in cfg.k),
           "--folds", str(cfg.folds), "--seed", str(cfg.seed),
           "--na-token", cfg.na_token, "--delimiter", cfg.delimiter,
           "--svd-tol", repr(cfg.svd_tol), "--svd-max-iters", str(cfg.svd_max_iters),
           "--em-tol", repr(cfg.em_tol), "--mcecm-tol", repr(cfg.mcecm_tol),
           "--ace-tol", repr(cfg.ace_tol), "--glasso-tol", repr(cfg.glasso_tol)]
    for flag, on in (("--header", cfg.header), ("--rownames", cfg.rownames),
                     ("--transpose", cfg.transpose)):
        if on:
            out.append(flag)
    if cfg.truth:
        out += ["--truth", cfg.truth]
    return out


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return cmd_simulate(args.spec, args.output)
        cfg = _config_from_args(args)
        if args.command == "impute":
            return cmd_impute(cfg)
        if args.command == "estimate":
            return cmd_estimate(cfg)
        return cmd_cv(cfg)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TranscovError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
