from pathlib import Path

import numpy as np
import pytest

from spanel.weights import WeightScheme, row_standardize

DATA_DIR = Path(__file__).parent / "data"


def make_units(n):
    return [f"u{i + 1:03d}" for i in range(n)]


def random_w(rng, n, density=0.2, standardize=True, allow_isolated=False):
    """Random sparse nonnegative weight scheme with zero diagonal."""
    m = (rng.random((n, n)) < density) * rng.random((n, n))
    np.fill_diagonal(m, 0.0)
    if not allow_isolated:
        empty = np.flatnonzero(m.sum(axis=1) == 0)
        for i in empty:
            j = (i + 1) % n
            m[i, j] = rng.random() + 0.1
    w = WeightScheme(m, make_units(n))
    return row_standardize(w) if standardize else w


def correlated_het_spec(n, t, k, w, seed, base_beta=1.0, shift=0.6,
                        noise_sd=0.5):
    """Heterogeneous DGP whose first slope correlates with the unit's
    regressor variance: pooled estimators tilt toward high-variance units."""
    from spanel.simulate import DgpSpec

    draw = np.random.default_rng(seed + 777)
    x_sd = np.where(draw.random(n) < 0.5, 0.6, 1.8)
    beta = np.full((n, k), base_beta)
    beta[:, 0] = base_beta + shift * (x_sd - x_sd.mean())
    psi = np.clip(draw.normal(0.35, 0.15, n), -0.9, 0.9)
    delta = draw.normal(-0.1, 0.02, n)
    spec = DgpSpec(n=n, t=t, k=k, w_true=w, delta=delta, psi=psi, beta=beta,
                   x_noise_sd=x_sd, noise_sd=noise_sd, seed=seed)
    truth_mean = np.concatenate([[delta.mean(), psi.mean()], beta.mean(axis=0)])
    return spec, truth_mean


@pytest.fixture
def rng():
    return np.random.default_rng(20250808)
