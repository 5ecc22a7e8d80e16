import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import make_units
from spanel.bolmt import (
    BolmtConfig,
    _ols_fit,
    _scan_step,
    pairwise_t,
    recover_network,
    recover_row,
)
from spanel.errors import DegenerateCandidateError, DomainError
from spanel.panel import build_transformed
from spanel.simulate import DgpSpec, simulate
from spanel.weights import WeightScheme, row_standardize


def sparse_true_w(rng, n, max_links=3):
    m = np.zeros((n, n))
    for i in range(n):
        others = [x for x in range(n) if x != i]
        for j in rng.choice(others, size=rng.integers(1, max_links + 1),
                            replace=False):
            m[i, j] = 1.0
    return row_standardize(WeightScheme(m, make_units(n)))


def signal_spec(w, seed, n=30, t=300):
    return DgpSpec(n=n, t=t, k=2, w_true=w, delta=-0.15, psi=0.7, beta=1.0,
                   noise_sd=0.3, x_ar=0.5, seed=seed)


def null_spec(n, seed, t=300):
    w0 = WeightScheme(np.zeros((n, n)), make_units(n))
    return DgpSpec(n=n, t=t, k=2, w_true=w0, delta=-0.15, psi=0.0, beta=1.0,
                   noise_sd=0.3, x_ar=0.5, seed=seed)


class TestPairwiseT:
    def test_null_candidate_is_small(self, rng):
        hits = 0
        for _ in range(200):
            t_len = 150
            xi = rng.standard_normal((t_len, 2))
            xj = rng.standard_normal((t_len, 2))
            yi = xi @ np.array([1.0, -0.5]) + 0.5 * rng.standard_normal(t_len)
            yj = xj @ np.array([0.8, 0.3]) + 0.5 * rng.standard_normal(t_len)
            hits += abs(pairwise_t(yi, yj, xi, xj)) > 1.96
        assert 0.01 <= hits / 200 <= 0.12

    def test_true_link_detected(self, rng):
        detections = 0
        for _ in range(50):
            t_len = 200
            xi = rng.standard_normal((t_len, 2))
            xj = rng.standard_normal((t_len, 2))
            yj = xj @ np.array([1.0, 1.0]) + 0.3 * rng.standard_normal(t_len)
            yi = 0.8 * yj + xi @ np.array([1.0, -0.5]) \
                + 0.3 * rng.standard_normal(t_len)
            detections += abs(pairwise_t(yi, yj, xi, xj)) > 3.0
        assert detections / 50 >= 0.99

    def test_annihilated_candidate_rejected(self, rng):
        t_len = 100
        xi = rng.standard_normal((t_len, 2))
        xj = xi.copy()                 # candidate fitted values live in span(xi)
        yi = rng.standard_normal(t_len)
        yj = xj @ np.array([1.0, 1.0])
        with pytest.raises(DegenerateCandidateError):
            pairwise_t(yi, yj, xi, xj)

    def test_matches_scan_step_on_exogenous_controls(self, rng):
        t_len = 120
        xi = rng.standard_normal((t_len, 2))
        xj = rng.standard_normal((t_len, 2))
        ctrl = rng.standard_normal((t_len, 1))
        yj = xj @ np.array([1.0, 0.5]) + 0.4 * rng.standard_normal(t_len)
        yi = 0.4 * yj + xi @ np.array([1.0, -0.5]) + ctrl[:, 0] \
            + 0.4 * rng.standard_normal(t_len)
        ref = pairwise_t(yi, yj, xi, xj, current_controls=ctrl)
        yhat = _ols_fit(xj, yj)
        b_mat = np.hstack([xi, ctrl])
        ts, valid = _scan_step(yi, yhat[:, None], yj[:, None], b_mat, b_mat)
        assert valid[0]
        assert_allclose(ts[0], ref, rtol=1e-9)

    def test_scale_free_in_candidate(self, rng):
        t_len = 150
        xi = rng.standard_normal((t_len, 2))
        xj = rng.standard_normal((t_len, 2))
        yj = xj @ np.array([1.0, 1.0]) + 0.3 * rng.standard_normal(t_len)
        yi = 0.5 * yj + xi[:, 0] + 0.3 * rng.standard_normal(t_len)
        t1 = pairwise_t(yi, yj, xi, xj)
        t2 = pairwise_t(yi, 7.5 * yj, xi, xj)
        assert_allclose(t1, t2, rtol=1e-9)


class TestRecoverRow:
    def test_cap_binds(self, rng):
        w = sparse_true_w(rng, 12)
        tp = build_transformed(simulate(signal_spec(w, 3, n=12, t=250)).panel,
                               "unit_only")
        sel = recover_row(0, tp, BolmtConfig(max_links_per_row=1))
        assert len(sel.selected) <= 1

    def test_accepted_values_exceed_threshold(self, rng):
        w = sparse_true_w(rng, 12)
        tp = build_transformed(simulate(signal_spec(w, 4, n=12, t=250)).panel,
                               "unit_only")
        sel = recover_row(2, tp)
        assert len(sel.step_thresholds) == len(sel.steps)
        for (j, abs_t, accepted), c in zip(sel.steps, sel.step_thresholds):
            if accepted:
                assert abs_t > c >= sel.threshold
            else:
                assert abs_t <= c

    def test_candidate_rescaling_leaves_support(self, rng):
        w = sparse_true_w(rng, 10)
        sim = simulate(signal_spec(w, 5, n=10, t=250))
        tp = build_transformed(sim.panel, "unit_only")
        base = recover_row(0, tp)
        # scale unit 3's outcome and covariates by a positive constant
        scl = 5.0
        dy = tp.dy.copy(); dy[3] *= scl
        y_lag = tp.y_lag.copy(); y_lag[3] *= scl
        tp2 = type(tp)(dy=dy, y_lag=y_lag, x0=tp.x0, x1=tp.x1, x2=tp.x2,
                       t_eff=tp.t_eff, demean_mode=tp.demean_mode,
                       unit_ids=tp.unit_ids, covariate_names=tp.covariate_names)
        again = recover_row(0, tp2)
        assert again.selected == base.selected

    def test_rows_are_independent(self, rng):
        w = sparse_true_w(rng, 10)
        sim = simulate(signal_spec(w, 6, n=10, t=250))
        tp = build_transformed(sim.panel, "unit_only")
        base = recover_row(4, tp)
        # shuffling another row's covariates must not change row 4's scan
        x0 = tp.x0.copy()
        x0[7] = x0[7][rng.permutation(tp.t_eff)]
        tp2 = type(tp)(dy=tp.dy, y_lag=tp.y_lag, x0=x0, x1=tp.x1, x2=tp.x2,
                       t_eff=tp.t_eff, demean_mode=tp.demean_mode,
                       unit_ids=tp.unit_ids, covariate_names=tp.covariate_names)
        again = recover_row(4, tp2)
        own_scan_unaffected = [s for s in again.selected if s != 7]
        base_wo_7 = [s for s in base.selected if s != 7]
        assert own_scan_unaffected == base_wo_7


class TestRecoverNetwork:
    def test_support_recovery_and_fpr(self, rng):
        tpr_n = tpr_d = fpr_n = fpr_d = 0
        n = 30
        for rep in range(8):
            w = sparse_true_w(rng, n)
            tp = build_transformed(simulate(signal_spec(w, 100 + rep)).panel,
                                   "unit_only")
            net = recover_network(tp)
            a = w.mats > 0
            f = net.w_hat.mats > 0
            tpr_n += (a & f).sum()
            tpr_d += a.sum()
            off = ~np.eye(n, dtype=bool)
            fpr_n += (~a & f & off).sum()
            fpr_d += (~a & off).sum()
        assert tpr_n / tpr_d >= 0.9
        assert fpr_n / fpr_d <= 0.01

    def test_null_network_stays_sparse(self, rng):
        false_links = 0
        n, reps = 20, 10
        for rep in range(reps):
            tp = build_transformed(simulate(null_spec(n, 500 + rep, t=250)).panel,
                                   "unit_only")
            net = recover_network(tp)
            false_links += (net.w_hat.mats > 0).sum()
        assert false_links / (reps * n) <= 0.08

    def test_rows_standardized_and_traced(self, rng):
        w = sparse_true_w(rng, 12)
        tp = build_transformed(simulate(signal_spec(w, 9, n=12, t=250)).panel,
                               "unit_only")
        net = recover_network(tp)
        sums = net.w_hat.mats.sum(axis=1)
        assert_allclose(sums[sums > 0], 1.0, atol=1e-12)
        edges = net.edge_frame()
        assert set(edges.columns) == {"from", "to", "abs_t", "step"}
        assert len(edges) == (net.w_hat.mats > 0).sum()

    def test_accepts_panel_dataset(self, rng):
        w = sparse_true_w(rng, 10)
        sim = simulate(signal_spec(w, 11, n=10, t=250))
        via_panel = recover_network(sim.panel)
        via_tp = recover_network(build_transformed(sim.panel, "unit_only"))
        assert_allclose(via_panel.w_hat.mats, via_tp.w_hat.mats, atol=0)

    def test_fixed_threshold_rule(self, rng):
        w = sparse_true_w(rng, 10)
        tp = build_transformed(simulate(signal_spec(w, 12, n=10, t=250)).panel,
                               "unit_only")
        loose = recover_network(tp, BolmtConfig(threshold_rule="fixed",
                                                fixed_threshold=2.0))
        tight = recover_network(tp, BolmtConfig(threshold_rule="fixed",
                                                fixed_threshold=20.0))
        assert (loose.w_hat.mats > 0).sum() >= (tight.w_hat.mats > 0).sum()
        assert tight.density <= loose.density

    def test_bad_config(self):
        with pytest.raises(DomainError):
            BolmtConfig(alpha=1.5)
        with pytest.raises(DomainError):
            BolmtConfig(threshold_rule="fixed")
