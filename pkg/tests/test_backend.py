"""Parity of the numba kernels with their pure-numpy reference twins."""

import os
import subprocess
import sys

import numpy as np
import pytest

from conftest import ar_cov, rand_mask
from transcov.backend import _numba, _numpy


@pytest.fixture
def setup(rng):
    n, p = 14, 11
    ls = np.linalg.cholesky(ar_cov(n, 0.7))
    ld = np.linalg.cholesky(ar_cov(p, 0.5))
    x = ls @ rng.standard_normal((n, p)) @ ld.T
    mask = rand_mask(n, p, 0.25, rng)
    sigma = ar_cov(n, 0.7)
    delta = ar_cov(p, 0.5)
    return x, mask, sigma, np.linalg.inv(sigma), delta, np.linalg.inv(delta)


def test_glasso_core_parity(rng):
    a = rng.standard_normal((30, 8))
    s = np.ascontiguousarray(a.T @ a / 30)
    args = (s, 0.12, 1e-8, 1e-10, 500)
    outs = []
    for mod in (_numpy, _numba):
        w = s.copy()
        theta = np.diag(1.0 / (np.diag(s) + 0.12)).copy()
        outs.append(mod.glasso_core(*args, w, theta))
    w_np, t_np, _, gap_np = outs[0]
    w_nb, t_nb, _, gap_nb = outs[1]
    assert np.max(np.abs(w_np - w_nb)) < 1e-12
    assert np.max(np.abs(t_np - t_nb)) < 1e-12
    assert abs(gap_np - gap_nb) < 1e-12
    # identical sparsity pattern, exact zeros
    assert np.array_equal(t_np == 0.0, t_nb == 0.0)


def test_ace_sweeps_parity(setup):
    x, mask, sigma, sigma_inv, delta, delta_inv = setup
    m = np.zeros_like(x)
    res = []
    for mod in (_numpy, _numba):
        values = np.where(mask, x, 0.0)
        out = mod.ace_sweeps(values, mask, m, sigma, sigma_inv, delta,
                             delta_inv, 1e-10, 500)
        res.append((values, out))
    (v_np, o_np), (v_nb, o_nb) = res
    assert o_np[2] and o_nb[2]
    assert np.max(np.abs(v_np - v_nb)) < 1e-12


def test_rows_conditional_fill_parity(setup, rng):
    x, mask, _, _, delta, delta_inv = setup
    mu = rng.standard_normal(x.shape[1])
    values = np.where(mask, x, 0.0)
    xh_np, c_np = _numpy.rows_conditional_fill(values, mask, mu, delta, delta_inv)
    xh_nb, c_nb = _numba.rows_conditional_fill(values, mask, mu, delta, delta_inv)
    assert np.max(np.abs(xh_np - xh_nb)) < 1e-12
    assert np.max(np.abs(c_np - c_nb)) < 1e-12


def test_pairwise_corr_parity(setup):
    x, mask, *_ = setup
    values = np.where(mask, x, 0.0)
    c_np, v_np = _numpy.pairwise_complete_corr(values, mask, 2)
    c_nb, v_nb = _numba.pairwise_complete_corr(values, mask, 2)
    assert np.array_equal(v_np, v_nb)
    assert np.max(np.abs(c_np - c_nb)) < 1e-12


def test_env_flag_selects_numpy():
    code = "import transcov.backend as b; print(b.BACKEND)"
    env = dict(os.environ, TRANSCOV_BACKEND="numpy")
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_env_flag_rejects_unknown():
    code = "import transcov.backend"
    env = dict(os.environ, TRANSCOV_BACKEND="cuda")
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True)
    assert out.returncode != 0
