import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import make_units, random_w
from spanel.effects import average_effects, multiplier, pairwise_effect
from spanel.errors import InputError, StabilityError
from spanel.panel import first_differences
from spanel.simulate import DgpSpec, brute_force_effects, simulate
from spanel.weights import WeightScheme, spatial_lag


def two_unit_w():
    return WeightScheme(np.array([[0.0, 1.0], [1.0, 0.0]]), ["A", "B"],
                        row_standardized=True)


class TestSimulate:
    def test_deterministic_given_seed(self, rng):
        w = random_w(rng, 8)
        spec = DgpSpec(n=8, t=30, k=2, w_true=w, r_f=1, seed=11)
        a = simulate(spec)
        b = simulate(spec)
        assert (a.panel.y == b.panel.y).all()
        assert (a.panel.x == b.panel.x).all()
        assert (a.truth.eps == b.truth.eps).all()

    def test_null_system_is_flat(self, rng):
        w = random_w(rng, 5)
        spec = DgpSpec(n=5, t=20, k=1, w_true=w, delta=0.0, psi=0.0, beta=0.0,
                       noise_sd=0.0, x_noise_sd=1.0, seed=0)
        sim = simulate(spec)
        assert_allclose(first_differences(sim.panel.y), 0.0, atol=1e-14)

    def test_two_unit_closed_form(self):
        # with common psi and the swap matrix, each period solves a 2x2 system
        w = two_unit_w()
        psi = 0.5
        spec = DgpSpec(n=2, t=12, k=1, w_true=w, delta=-0.2, psi=psi, beta=1.0,
                       noise_sd=0.7, seed=5)
        sim = simulate(spec)
        y = sim.panel.y
        dy = first_differences(y)
        s_inv = np.linalg.inv(np.eye(2) - psi * w.mats)
        u = sim.truth.u()
        for t in range(1, sim.panel.t):
            rhs = sim.truth.delta * y[:, t - 1] \
                + (sim.truth.beta * sim.panel.x[:, t, :]).sum(axis=1) + u[:, t]
            assert_allclose(dy[:, t - 1], s_inv @ rhs, atol=1e-10)

    def test_residual_identity(self, rng):
        w = random_w(rng, 10)
        spec = DgpSpec(n=10, t=40, k=2, w_true=w, delta=(-0.1, 0.03),
                       psi=(0.3, 0.1), beta=(1.0, 0.2), r_f=2, r_g=1,
                       noise_sd=0.5, seed=3)
        sim = simulate(spec)
        y = sim.panel.y
        dy = first_differences(y)
        wdy = spatial_lag(w, dy)
        u = sim.truth.u()
        for t in range(1, sim.panel.t):
            lhs = dy[:, t - 1] - sim.truth.psi * wdy[:, t - 1] \
                - sim.truth.delta * y[:, t - 1] \
                - (sim.truth.beta * sim.panel.x[:, t, :]).sum(axis=1)
            assert_allclose(lhs, u[:, t], atol=1e-10)

    def test_loading_correlation_knob(self, rng):
        w = random_w(rng, 500)
        spec = DgpSpec(n=500, t=6, k=1, w_true=w, r_f=1, r_g=1,
                       loading_correlation=0.6, burn_in=50, seed=9)
        sim = simulate(spec)
        corr = np.corrcoef(sim.truth.gamma[:, 0, 0], sim.truth.lam[:, 0])[0, 1]
        assert abs(corr - 0.6) < 0.05

    def test_unstable_psi_rejected(self, rng):
        w = random_w(rng, 4)
        with pytest.raises(StabilityError):
            simulate(DgpSpec(n=4, t=10, k=1, w_true=w, psi=1.2, psi_clip=0.999,
                             seed=0))

    def test_psi_draws_clipped(self, rng):
        w = random_w(rng, 40)
        sim = simulate(DgpSpec(n=40, t=10, k=1, w_true=w, psi=(0.5, 0.6),
                               psi_clip=0.9, seed=2))
        assert np.abs(sim.truth.psi).max() <= 0.9

    def test_burn_in_floor(self, rng):
        w = random_w(rng, 4)
        with pytest.raises(InputError):
            DgpSpec(n=4, t=10, k=1, w_true=w, burn_in=10)

    def test_time_varying_w(self, rng):
        t = 16
        mats = np.stack([random_w(rng, 5).mats for _ in range(t - 1)])
        w = WeightScheme(mats, make_units(5), row_standardized=True)
        sim = simulate(DgpSpec(n=5, t=t, k=1, w_true=w, psi=0.4, seed=1))
        y = sim.panel.y
        dy = first_differences(y)
        u = sim.truth.u()
        # spell p uses the p-th period matrix
        for p in range(t - 1):
            rhs = sim.truth.delta * y[:, p] \
                + (sim.truth.beta * sim.panel.x[:, p + 1, :]).sum(axis=1) + u[:, p + 1]
            lhs = (np.eye(5) - sim.truth.psi[:, None] * mats[p]) @ dy[:, p]
            assert_allclose(lhs, rhs, atol=1e-10)


class TestBruteForceEffects:
    def test_agrees_with_multiplier_path(self, rng):
        for _ in range(25):
            n = int(rng.integers(3, 30))
            w = random_w(rng, n, density=0.4)
            psi = float(rng.uniform(-0.8, 0.9))
            beta = rng.standard_normal(3)
            delta = float(rng.standard_normal())
            oracle = brute_force_effects(w, psi, beta, delta)
            table = average_effects(multiplier(w, psi), beta, delta)
            assert_allclose(table.direct, oracle.direct, atol=1e-9)
            assert_allclose(table.indirect, oracle.indirect, atol=1e-9)
            assert_allclose(table.total, oracle.total, atol=1e-9)

    def test_zero_psi_identity(self, rng):
        w = random_w(rng, 6)
        beta = np.array([0.5, -0.2])
        t = brute_force_effects(w, 0.0, beta, -0.1)
        assert_allclose(t.direct[1:], beta, atol=1e-12)
        assert_allclose(t.indirect, 0.0, atol=1e-12)

    def test_block_diagonal_no_cross_effects(self, rng):
        blocks = np.zeros((6, 6))
        blocks[:3, :3] = random_w(rng, 3).mats
        blocks[3:, 3:] = random_w(rng, 3).mats
        w = WeightScheme(blocks, make_units(6), row_standardized=True)
        m = multiplier(w, 0.5)
        for i in range(3):
            for j in range(3, 6):
                assert pairwise_effect(m, 1.0, i, j) == 0.0
                assert pairwise_effect(m, 1.0, j, i) == 0.0
