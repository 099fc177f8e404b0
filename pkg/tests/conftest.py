import numpy as np
import pytest

from transcov.model import CovParams, MaskedMatrix, MeanParams, TrcmModel


def rand_spd(k, rng, lo=0.4, hi=2.5):
    """Random SPD matrix with eigenvalues in [lo, hi] (well conditioned)."""
    q, _ = np.linalg.qr(rng.standard_normal((k, k)))
    return (q * rng.uniform(lo, hi, k)) @ q.T


def ar_cov(k, r):
    i = np.arange(k)
    return r ** np.abs(i[:, None] - i[None, :]).astype(float)


def rand_model(n, p, rng, mean_scale=1.0, lo=0.4, hi=2.5):
    return TrcmModel(
        MeanParams(mean_scale * rng.standard_normal(n),
                   mean_scale * rng.standard_normal(p)),
        CovParams(rand_spd(n, rng, lo, hi), rand_spd(p, rng, lo, hi)),
    )


def rand_mask(n, p, frac, rng):
    """Random mask with the requested missing fraction, rows/cols kept valid."""
    for _ in range(200):
        mask = rng.uniform(size=(n, p)) > frac
        if mask.any(axis=1).all() and mask.any(axis=0).all():
            return mask
    raise RuntimeError("could not draw a valid mask")


def masked_instance(n, p, frac, rng, mean_scale=1.0, lo=0.4, hi=2.5):
    from transcov.model import sample

    model = rand_model(n, p, rng, mean_scale, lo, hi)
    x = sample(model, int(rng.integers(1 << 31)))
    mask = rand_mask(n, p, frac, rng)
    return MaskedMatrix(x, mask), x, model


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
