import json

import numpy as np
import pytest

from conftest import rand_mask
from transcov.cli import (
    RunConfig,
    config_to_args,
    format_matrix,
    main,
    parse_matrix,
    parse_spec_file,
    spec_from_file,
)


def write(path, text):
    path.write_text(text)
    return str(path)


def make_instance(tmp_path, rng, n=10, p=8, frac=0.2, name="x.csv"):
    xf = rng.standard_normal((n, p))
    mask = rand_mask(n, p, frac, rng)
    rows = [
        ",".join(repr(float(xf[i, j])) if mask[i, j] else "NA" for j in range(p))
        for i in range(n)
    ]
    path = write(tmp_path / name, "\n".join(rows) + "\n")
    truth = write(tmp_path / ("t_" + name),
                  "\n".join(",".join(repr(float(v)) for v in row) for row in xf) + "\n")
    return path, truth, xf, mask


class TestParseMatrix:
    def test_basic_na(self, tmp_path):
        path = write(tmp_path / "m.csv", "1,NA\n2,3\n")
        parsed = parse_matrix(path, RunConfig())
        assert parsed.data.shape == (2, 2)
        assert not parsed.data.mask[0, 1]
        assert parsed.data.values[1, 1] == 3.0

    def test_empty_field_is_missing(self, tmp_path):
        path = write(tmp_path / "m.csv", "1,\n2,3\n")
        parsed = parse_matrix(path, RunConfig())
        assert not parsed.data.mask[0, 1]

    def test_custom_token(self, tmp_path):
        path = write(tmp_path / "m.csv", "1,?\n2,3\n")
        parsed = parse_matrix(path, RunConfig(na_token="?"))
        assert not parsed.data.mask[0, 1]

    def test_token_case_sensitive(self, tmp_path):
        path = write(tmp_path / "m.csv", "1,na\n2,3\n")
        with pytest.raises(ValueError, match="line 1, column 2"):
            parse_matrix(path, RunConfig())

    def test_ragged_row_reports_line(self, tmp_path):
        path = write(tmp_path / "m.csv", "1,2\n3\n")
        with pytest.raises(ValueError, match="line 2"):
            parse_matrix(path, RunConfig())

    def test_header_rownames_roundtrip(self, tmp_path, rng):
        cfg = RunConfig(header=True, rownames=True)
        path = write(tmp_path / "m.csv",
                     ",a,b\nr1,1.5,NA\nr2,-2.25,0.125\n")
        parsed = parse_matrix(path, cfg)
        out = format_matrix(parsed.data.values, cfg, parsed.header,
                            parsed.rownames, parsed.data.mask)
        reparsed = parse_matrix(write(tmp_path / "m2.csv", out), cfg)
        assert np.array_equal(reparsed.data.mask, parsed.data.mask)
        obs = parsed.data.mask
        assert np.array_equal(reparsed.data.values[obs], parsed.data.values[obs])
        assert reparsed.header == parsed.header
        assert reparsed.rownames == parsed.rownames


class TestImputeCommand:
    def test_mean_impute_deterministic_value(self, tmp_path):
        path = write(tmp_path / "m.csv", "1,NA\n2,3\n")
        out = str(tmp_path / "out.csv")
        rc = main(["impute", "--input", path, "--output", out,
                   "--method", "mean", "--axis", "cols"])
        assert rc == 0
        comp = parse_matrix(out, RunConfig())
        assert comp.data.is_fully_observed()
        assert comp.data.values[0, 1] == 3.0

    def test_completed_has_no_missing_tokens(self, tmp_path, rng):
        path, _, _, _ = make_instance(tmp_path, rng)
        out = str(tmp_path / "out.csv")
        rc = main(["impute", "--input", path, "--output", out,
                   "--method", "trcm-onestep", "--rho-row", "1", "--rho-col", "1"])
        assert rc == 0
        assert "NA" not in (tmp_path / "out.csv").read_text()

    def test_sidecar_replay_bit_identical(self, tmp_path, rng):
        path, truth, _, _ = make_instance(tmp_path, rng)
        out = str(tmp_path / "out.csv")
        rc = main(["impute", "--input", path, "--output", out,
                   "--method", "trcm-onestep", "--rho-row", "1",
                   "--rho-col", "1", "--seed", "9", "--truth", truth])
        assert rc == 0
        first_matrix = (tmp_path / "out.csv").read_bytes()
        first_report = (tmp_path / "out.csv.report.json").read_bytes()
        sidecar = json.loads(first_report)
        rc = main(["impute"] + config_to_args(sidecar["config"]))
        assert rc == 0
        assert (tmp_path / "out.csv").read_bytes() == first_matrix
        assert (tmp_path / "out.csv.report.json").read_bytes() == first_report

    def test_metrics_and_trace_contract(self, tmp_path, rng):
        path, truth, _, _ = make_instance(tmp_path, rng)
        out = str(tmp_path / "out.csv")
        rc = main(["impute", "--input", path, "--output", out,
                   "--method", "rcm-cols", "--rho-col", "0.5", "--truth", truth])
        assert rc == 0
        rep = json.loads((tmp_path / "out.csv.report.json").read_text())
        assert rep["schema"] == "transcov-report/1"
        assert len(rep["objective_trace"]) == rep["iterations"]
        assert rep["metrics"]["mse"] >= 0.0

    def test_parse_error_exit_code(self, tmp_path, capsys):
        path = write(tmp_path / "m.csv", "1,zap\n2,3\n")
        rc = main(["impute", "--input", path, "--output",
                   str(tmp_path / "o.csv"), "--method", "mean"])
        assert rc == 1
        assert "column 2" in capsys.readouterr().err

    def test_convergence_failure_exit_two_with_partial(self, tmp_path, rng):
        path, _, _, _ = make_instance(tmp_path, rng, n=12, p=8, frac=0.3,
                                      name="hard.csv")
        out = str(tmp_path / "out.csv")
        rc = main(["impute", "--input", path, "--output", out,
                   "--method", "svd", "--rank", "6",
                   "--svd-tol", "1e-12", "--svd-max-iters", "3"])
        assert rc == 2
        rep = json.loads((tmp_path / "out.csv.report.json").read_text())
        assert rep["failed"] is True
        assert (tmp_path / "out.csv").exists()

    def test_transpose_round_trip(self, tmp_path, rng):
        # wide input: transposing must return the original orientation and
        # match the equivalent run on the transposed data with swapped roles
        xf = rng.standard_normal((4, 9))
        mask = rand_mask(4, 9, 0.2, rng)
        rows = [",".join(repr(float(xf[i, j])) if mask[i, j] else "NA"
                         for j in range(9)) for i in range(4)]
        path = write(tmp_path / "wide.csv", "\n".join(rows) + "\n")
        out_a = str(tmp_path / "a.csv")
        rc = main(["impute", "--input", path, "--output", out_a,
                   "--method", "trcm-onestep", "--rho-row", "0.5",
                   "--rho-col", "2.0", "--transpose"])
        assert rc == 0
        a = parse_matrix(out_a, RunConfig())
        assert a.data.shape == (4, 9)

        rows_t = [",".join(repr(float(xf.T[i, j])) if mask.T[i, j] else "NA"
                           for j in range(4)) for i in range(9)]
        path_t = write(tmp_path / "tall.csv", "\n".join(rows_t) + "\n")
        out_b = str(tmp_path / "b.csv")
        rc = main(["impute", "--input", path_t, "--output", out_b,
                   "--method", "trcm-onestep", "--rho-row", "2.0",
                   "--rho-col", "0.5"])
        assert rc == 0
        b = parse_matrix(out_b, RunConfig())
        assert np.max(np.abs(a.data.values - b.data.values.T)) < 1e-12


class TestEstimateCommand:
    def test_outputs_and_spectral(self, tmp_path, rng):
        path, _, _, _ = make_instance(tmp_path, rng)
        out = str(tmp_path / "est")
        rc = main(["estimate", "--input", path, "--output", out,
                   "--rho-row", "1", "--rho-col", "1"])
        assert rc == 0
        rep = json.loads((tmp_path / "est.report.json").read_text())
        assert rep["spectral"]["rank"] >= 1
        sigma = parse_matrix(out + ".sigma.csv", RunConfig()).data.values
        assert sigma.shape == (10, 10)
        assert np.linalg.eigvalsh(sigma).min() > 0


class TestCvCommand:
    def test_grid_search_writes_table(self, tmp_path, rng):
        path, _, _, _ = make_instance(tmp_path, rng, frac=0.15)
        out = str(tmp_path / "cv.json")
        rc = main(["cv", "--input", path, "--output", out, "--method", "knn",
                   "--k", "1,3,5", "--folds", "3", "--seed", "4"])
        assert rc == 0
        rep = json.loads((tmp_path / "cv.json").read_text())
        assert rep["best"]["k"] in (1, 3, 5)
        assert len(rep["table"]) == 3

    def test_single_point_grid(self, tmp_path, rng):
        path, _, _, _ = make_instance(tmp_path, rng, frac=0.15)
        out = str(tmp_path / "cv.json")
        rc = main(["cv", "--input", path, "--output", out, "--method", "knn",
                   "--k", "3", "--folds", "3"])
        assert rc == 0
        rep = json.loads((tmp_path / "cv.json").read_text())
        assert rep["best"] == {"k": 3}


class TestSimulateCommand:
    def test_spec_file_round_trip(self, tmp_path):
        spec_text = (
            "# tiny benchmark\n"
            "n = 10\np = 8\n"
            "row.kind = autoregressive\nrow.value = 0.8\n"
            "col.kind = autoregressive\ncol.value = 0.6\n"
            "missing.fraction = 0.2\nreplicates = 2\nfolds = 3\nseed = 5\n"
            "methods = mean-cols,trcm-onestep\n"
            "grid.trcm-onestep.rho = 1\n"
        )
        spec_path = write(tmp_path / "spec.conf", spec_text)
        spec = spec_from_file(spec_path)
        assert spec.n == 10 and spec.replicates == 2
        assert spec.methods[1].grid == [{"rho_r": 1, "rho_c": 1}]
        out = str(tmp_path / "sim.csv")
        rc = main(["simulate", "--spec", spec_path, "--output", out])
        assert rc == 0
        lines = (tmp_path / "sim.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + 2 * 2  # header + methods x replicates
        rep = json.loads((tmp_path / "sim.csv.report.json").read_text())
        methods = {s["method"] for s in rep["summary"]}
        assert methods == {"mean-cols", "trcm-onestep"}

    def test_simulate_deterministic(self, tmp_path):
        spec_path = write(tmp_path / "spec.conf",
                          "n = 8\np = 6\nmissing.fraction = 0.2\n"
                          "replicates = 2\nfolds = 3\nseed = 1\n"
                          "methods = mean-cols\n")
        out1 = str(tmp_path / "s1.csv")
        out2 = str(tmp_path / "s2.csv")
        assert main(["simulate", "--spec", spec_path, "--output", out1]) == 0
        assert main(["simulate", "--spec", spec_path, "--output", out2]) == 0
        assert (tmp_path / "s1.csv").read_bytes() == (tmp_path / "s2.csv").read_bytes()

    def test_parse_spec_rejects_garbage(self, tmp_path):
        spec_path = write(tmp_path / "spec.conf", "n 10\n")
        with pytest.raises(ValueError, match="line 1"):
            parse_spec_file(spec_path)
