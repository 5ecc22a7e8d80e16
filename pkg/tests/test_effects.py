import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import make_units, random_w
from spanel.effects import (
    average_effects,
    effect_standard_errors,
    multiplier,
    pairwise_effect,
    spill_in,
    spill_out,
)
from spanel.errors import DomainError, NotAvailableError, StabilityError
from spanel.weights import WeightScheme


def swap_w():
    return WeightScheme(np.array([[0.0, 1.0], [1.0, 0.0]]), ["A", "B"],
                        row_standardized=True)


class FakeEstimate:
    def __init__(self, theta, vcov):
        self.theta = np.asarray(theta, dtype=float)
        self.vcov = np.asarray(vcov, dtype=float)


class TestMultiplier:
    def test_zero_psi_identity(self, rng):
        w = random_w(rng, 5)
        m = multiplier(w, 0.0)
        assert_allclose(m.s_inv, np.eye(5), atol=1e-12)

    def test_two_by_two_closed_form(self):
        m = multiplier(swap_w(), 0.5)
        expected = np.array([[1.0, 0.5], [0.5, 1.0]]) / 0.75
        assert_allclose(m.s_inv, expected, atol=1e-12)

    def test_unit_psi_boundary(self):
        with pytest.raises(StabilityError):
            multiplier(swap_w(), 1.0)

    def test_inverse_property(self, rng):
        w = random_w(rng, 8)
        psi = 0.6
        m = multiplier(w, psi)
        assert_allclose((np.eye(8) - psi * w.mats) @ m.s_inv, np.eye(8), atol=1e-9)

    def test_heterogeneous_psi(self, rng):
        w = random_w(rng, 6)
        psi = rng.uniform(-0.5, 0.8, 6)
        m = multiplier(w, psi)
        s = np.eye(6) - psi[:, None] * w.mats
        assert_allclose(m.s_inv, np.linalg.inv(s), atol=1e-10)

    def test_neumann_series_bound(self, rng):
        w = random_w(rng, 7)
        psi = 0.55
        m = multiplier(w, psi)
        rho = abs(psi) * np.abs(w.mats).sum(axis=1).max()
        for p_order in (3, 6, 10):
            series = np.zeros((7, 7))
            wp = np.eye(7)
            for p in range(p_order + 1):
                series += (psi ** p) * wp
                wp = wp @ w.mats
            err = np.abs(m.s_inv - series).sum(axis=1).max()
            bound = rho ** (p_order + 1) / (1.0 - rho)
            assert err <= bound + 1e-12


class TestAverageEffects:
    def test_zero_psi_direct_only(self, rng):
        w = random_w(rng, 6)
        beta = np.array([0.4, -0.1, 2.0])
        table = average_effects(multiplier(w, 0.0), beta, -0.05)
        assert_allclose(table.direct[1:], beta, atol=1e-12)
        assert_allclose(table.indirect, 0.0, atol=1e-12)
        assert_allclose(table.total[0], -0.05, atol=1e-12)

    def test_total_identity_and_ratio_invariance(self, rng):
        w = random_w(rng, 10)
        beta = rng.uniform(0.5, 2.0, 4)
        table = average_effects(multiplier(w, 0.45), beta, -0.2)
        assert_allclose(table.total, table.direct + table.indirect, atol=0)
        ratios = table.indirect / table.total
        assert ratios.max() - ratios.min() < 1e-13

    def test_row_standardized_total_closed_form(self, rng):
        w = random_w(rng, 9)
        psi, beta = 0.35, np.array([1.5])
        table = average_effects(multiplier(w, psi), beta, 0.0, per_unit=True)
        assert_allclose(table.per_unit_total[1], beta[0] / (1.0 - psi), atol=1e-9)
        assert_allclose(table.total[1], beta[0] / (1.0 - psi), atol=1e-9)

    def test_time_varying_average(self, rng):
        mats = np.stack([random_w(rng, 4).mats for _ in range(3)])
        w = WeightScheme(mats, make_units(4), row_standardized=True)
        table = average_effects(multiplier(w, 0.3), [1.0], 0.0)
        per_period = [average_effects(multiplier(
            WeightScheme(mats[t], make_units(4), row_standardized=True), 0.3),
            [1.0], 0.0) for t in range(3)]
        assert_allclose(table.direct[1],
                        np.mean([p.direct[1] for p in per_period]), atol=1e-12)
        assert table.time_varying
        assert table.se_direct is None


class TestPairwise:
    def test_own_effect_at_zero_psi(self, rng):
        w = random_w(rng, 5)
        m = multiplier(w, 0.0)
        assert pairwise_effect(m, 0.7, 2, 2) == pytest.approx(0.7, abs=1e-12)
        assert pairwise_effect(m, 0.7, 1, 3) == pytest.approx(0.0, abs=1e-12)

    def test_two_by_two_cross(self):
        m = multiplier(swap_w(), 0.5)
        assert pairwise_effect(m, 0.05, 0, 1) == pytest.approx(0.05 * 0.5 / 0.75,
                                                               abs=1e-12)

    def test_out_of_range(self):
        m = multiplier(swap_w(), 0.5)
        with pytest.raises(IndexError):
            pairwise_effect(m, 1.0, 0, 5)


class TestSpill:
    def test_all_sources_recover_totals(self, rng):
        w = random_w(rng, 6)
        m = multiplier(w, 0.4)
        res = spill_out(m, 1.2, w.unit_ids)
        table = average_effects(m, [1.2], 0.0, per_unit=True)
        assert_allclose(res.total, table.per_unit_total[1], atol=1e-10)

    def test_block_diagonal_no_cross_spill(self, rng):
        blocks = np.zeros((6, 6))
        blocks[:3, :3] = random_w(rng, 3).mats
        blocks[3:, 3:] = random_w(rng, 3).mats
        w = WeightScheme(blocks, make_units(6), row_standardized=True)
        m = multiplier(w, 0.5)
        res = spill_out(m, 1.0, w.unit_ids[:3])
        assert_allclose(res.total[3:], 0.0, atol=1e-12)

    def test_singleton_source_matches_column(self, rng):
        w = random_w(rng, 7)
        m = multiplier(w, 0.3)
        res = spill_out(m, 0.8, [w.unit_ids[4]])
        assert_allclose(res.total, 0.8 * m.s_inv[:, 4], atol=1e-12)

    def test_empty_source_rejected(self, rng):
        with pytest.raises(DomainError):
            spill_out(multiplier(random_w(rng, 4), 0.2), 1.0, [])

    def test_spill_in_zero_psi(self, rng):
        w = random_w(rng, 5)
        m = multiplier(w, 0.0)
        vec = spill_in(m, 1.0, w.unit_ids[2])
        expected = np.zeros(5)
        expected[2] = 1.0
        assert_allclose(vec, expected, atol=1e-12)

    def test_symmetric_w_in_equals_out(self):
        mat = np.array([[0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]])
        w = WeightScheme(mat, ["A", "B", "C"], row_standardized=True)
        m = multiplier(w, 0.4)
        vec_in = spill_in(m, 1.0, "B")
        vec_out = spill_out(m, 1.0, ["B"]).total
        assert_allclose(vec_in, vec_out, atol=1e-12)

    def test_asymmetric_row_oracle(self, rng):
        w = random_w(rng, 6)
        m = multiplier(w, 0.45)
        vec = spill_in(m, 0.9, w.unit_ids[1])
        assert_allclose(vec, 0.9 * np.linalg.inv(np.eye(6) - 0.45 * w.mats)[1],
                        atol=1e-10)


class TestStandardErrors:
    def _setup(self, rng, n=8):
        w = random_w(rng, n)
        theta = np.array([-0.1, 0.4, 1.0, 0.5])
        base = rng.standard_normal((4, 4)) * 0.01
        vcov = base @ base.T + np.diag([1e-4, 4e-4, 1e-3, 1e-3])
        return w, FakeEstimate(theta, vcov)

    def test_zero_vcov_zero_ses(self, rng):
        w, est = self._setup(rng)
        est.vcov = np.zeros((4, 4))
        table = effect_standard_errors(est, w, method="delta")
        assert_allclose(table.se_direct, 0.0, atol=1e-15)
        assert_allclose(table.se_total, 0.0, atol=1e-15)

    def test_delta_close_to_simulation(self, rng):
        w, est = self._setup(rng)
        t_delta = effect_standard_errors(est, w, method="delta")
        t_sim = effect_standard_errors(est, w, method="sim", draws=20000, seed=4)
        for a, b in ((t_delta.se_direct, t_sim.se_direct),
                     (t_delta.se_indirect, t_sim.se_indirect),
                     (t_delta.se_total, t_sim.se_total)):
            assert_allclose(a, b, rtol=0.10)

    def test_time_varying_not_available(self, rng):
        mats = np.stack([random_w(rng, 4).mats for _ in range(3)])
        w = WeightScheme(mats, make_units(4), row_standardized=True)
        est = FakeEstimate([-0.1, 0.3, 1.0, 0.5], np.eye(4) * 1e-4)
        with pytest.raises(NotAvailableError):
            effect_standard_errors(est, w)

    def test_point_estimates_match_plain_table(self, rng):
        w, est = self._setup(rng)
        t_se = effect_standard_errors(est, w, method="delta")
        t_plain = average_effects(multiplier(w, est.theta[1]), est.theta[2:],
                                  est.theta[0])
        assert_allclose(t_se.direct, t_plain.direct, atol=1e-12)
        assert_allclose(t_se.total, t_plain.total, atol=1e-12)
