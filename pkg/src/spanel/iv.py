"""Defactored-instrument IV estimation: unit-level, and pooled two-step.

Instruments stack six blocks per unit: the unit's own covariates at lags
0/1/2 and their spatial lags, each projected off the estimated factor space
of the matching lag. The unit estimator weights moments by the inverse
instrument Gram matrix; the pooled estimator stacks unit moments into a
two-step solve with a cluster-by-unit weighting matrix, J-test, and the
factor variance share rho.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import (
    DomainError,
    NumericError,
    RankError,
    SingularError,
    UnderIdentifiedError,
    WeakInstrumentError,
)
from .factors import Annihilator, FactorBasis, pooled_outer_eigs, select_rank
from .panel import TransformedPanel
from .weights import WeightScheme, spatial_lag, spatial_lag_covariates

_RANK_TOL = 1e-10
_COND_LIMIT = 1e12

OWN_BLOCKS = ("lag0", "lag1", "lag2")


def window_weights(w: WeightScheme, t_eff: int) -> WeightScheme:
    """Align a weight scheme to the estimation window.

    Time-varying schemes may carry one matrix per estimation period, per
    growth spell, or per raw time point; the trailing ``t_eff`` matrices are
    the ones in force on the window.
    """
    if w.kind == "static":
        return w
    tp = w.mats.shape[0]
    if tp < t_eff:
        raise DomainError(f"time-varying W has {tp} periods, need >= {t_eff}")
    if tp == t_eff:
        return w
    return WeightScheme(w.mats[-t_eff:], w.unit_ids,
                        row_standardized=w.row_standardized)


@dataclass(frozen=True)
class InstrumentSet:
    """Per-unit defactored instrument matrix with column provenance."""

    unit: object
    z: np.ndarray
    block_labels: list
    has_spatial: bool

    @property
    def q(self) -> int:
        return self.z.shape[1]


def _project_block(x_block: np.ndarray, anns) -> np.ndarray:
    """Apply a chain of annihilators along the time axis of N x T x k."""
    n, t, k = x_block.shape
    flat = x_block.transpose(1, 0, 2).reshape(t, n * k)
    for ann in anns:
        flat = ann.project_out(flat)
    return flat.reshape(t, n, k).transpose(1, 0, 2)


def build_instruments(tp: TransformedPanel, w: WeightScheme,
                      fb: FactorBasis | None = None,
                      blocks=OWN_BLOCKS,
                      include_spatial: bool = True) -> list[InstrumentSet]:
    """Assemble the per-unit instrument sets.

    With all blocks enabled the count is q = 6k per unit (3k own + 3k
    spatially lagged). Units with an all-zero weight row get no spatial
    blocks. ``fb=None`` skips the defactoring entirely (identity
    projections).
    """
    taus = sorted(int(b[-1]) for b in blocks)
    xs = {0: tp.x0, 1: tp.x1, 2: tp.x2}
    if fb is not None:
        ann0 = fb.annihilator(0)
        anns = {tau: [fb.annihilator(tau), ann0] if tau else [ann0] for tau in taus}
    else:
        anns = {tau: [] for tau in taus}

    own = {tau: _project_block(xs[tau], anns[tau]) for tau in taus}
    w_win = window_weights(w, tp.t_eff)
    isolated = w_win.isolated_units()
    if include_spatial:
        sp = {tau: _project_block(spatial_lag_covariates(w_win, xs[tau]), anns[tau])
              for tau in taus}

    names = tp.covariate_names or [f"x{l + 1}" for l in range(tp.k)]
    out = []
    for i, unit in enumerate(tp.unit_ids or range(tp.n)):
        cols, labels = [], []
        for tau in taus:
            cols.append(own[tau][i])
            labels += [f"x:{nm}:lag{tau}" for nm in names]
        with_spatial = include_spatial and not isolated[i]
        if with_spatial:
            for tau in taus:
                cols.append(sp[tau][i])
                labels += [f"wx:{nm}:lag{tau}" for nm in names]
        z = np.hstack(cols)
        sv = np.linalg.svd(z, compute_uv=False)
        if sv[0] <= 0 or sv[-1] / sv[0] < _RANK_TOL:
            raise WeakInstrumentError(unit, f"(min/max singular value "
                                            f"{sv[-1] / max(sv[0], 1e-300):.2e})")
        out.append(InstrumentSet(unit=unit, z=z, block_labels=labels,
                                 has_spatial=with_spatial))
    return out


@dataclass(frozen=True)
class UnitEstimate:
    """Unit-specific IV estimate; theta is (delta, psi, beta_1..k) with a NaN
    psi entry when the unit is isolated in the network."""

    unit: object
    theta: np.ndarray
    sigma_hat: float
    cond: float
    excluded_spatial: bool = False

    def residuals(self, c, y):
        th = self.theta[~np.isnan(self.theta)] if self.excluded_spatial else self.theta
        return np.asarray(y) - np.asarray(c) @ th


def iv_solve(c: np.ndarray, y: np.ndarray, z: np.ndarray):
    """Minimum-distance IV solve with inverse-Gram weighting.

    Returns (theta, sigma_hat, cond). Reduces to 2SLS, and to OLS when the
    instruments equal the regressors.
    """
    c = np.asarray(c, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    z = np.asarray(z, dtype=float)
    t, p = c.shape
    q = z.shape[1]
    if q < p:
        raise UnderIdentifiedError(f"q={q} instruments for p={p} parameters")
    b = z.T @ z / t
    cond_b = np.linalg.cond(b)
    if not np.isfinite(cond_b) or cond_b > _COND_LIMIT:
        raise SingularError(f"singular instrument Gram matrix (cond {cond_b:.3g})")
    a = z.T @ c / t
    cvec = z.T @ y / t
    binv_a = np.linalg.solve(b, a)
    m = a.T @ binv_a
    cond_m = np.linalg.cond(m)
    if not np.isfinite(cond_m) or cond_m > _COND_LIMIT:
        raise SingularError(f"collinear design (cond {cond_m:.3g})")
    theta = np.linalg.solve(m, binv_a.T @ cvec)
    resid = y - c @ theta
    dof = max(t - p, 1)
    sigma = float(np.sqrt(resid @ resid / dof))
    return theta, sigma, float(cond_b)


def estimate_unit(ci, yi, zi) -> UnitEstimate:
    """IV estimate for one unit from an explicit design and instrument set."""
    z = zi.z if isinstance(zi, InstrumentSet) else np.asarray(zi)
    unit = zi.unit if isinstance(zi, InstrumentSet) else None
    theta, sigma, cond = iv_solve(ci, yi, z)
    return UnitEstimate(unit=unit, theta=theta, sigma_hat=sigma, cond=cond)


def unit_designs(tp: TransformedPanel, w: WeightScheme):
    """Per-unit design matrices (y_lag, spatial dy lag, X) and outcomes.

    Isolated units get a design without the spatial-lag column. Returns
    (designs, outcomes, isolated mask).
    """
    w_win = window_weights(w, tp.t_eff)
    wdy = spatial_lag(w_win, tp.dy)
    isolated = w_win.isolated_units()
    designs, ys = [], []
    for i in range(tp.n):
        cols = [tp.y_lag[i][:, None], wdy[i][:, None], tp.x0[i]]
        if isolated[i]:
            del cols[1]
        designs.append(np.hstack(cols))
        ys.append(tp.dy[i])
    return designs, ys, isolated


def estimate_units(tp: TransformedPanel, w: WeightScheme,
                   fb: FactorBasis | None = None,
                   instruments: list[InstrumentSet] | None = None) -> list[UnitEstimate]:
    """Unit-by-unit IV estimates over the whole panel."""
    if instruments is None:
        instruments = build_instruments(tp, w, fb)
    designs, ys, isolated = unit_designs(tp, w)
    units = tp.unit_ids or list(range(tp.n))
    out = []
    for i in range(tp.n):
        theta_red, sigma, cond = iv_solve(designs[i], ys[i], instruments[i].z)
        if isolated[i]:
            theta = np.insert(theta_red, 1, np.nan)
        else:
            theta = theta_red
        out.append(UnitEstimate(unit=units[i], theta=theta, sigma_hat=sigma,
                                cond=cond, excluded_spatial=bool(isolated[i])))
    return out


@dataclass(frozen=True)
class PooledEstimate:
    """Two-step pooled IV estimate under common slopes."""

    theta: np.ndarray
    vcov: np.ndarray
    j_stat: float | None
    j_dof: int
    j_pvalue: float | None
    rho: float | None
    r_y: int | None
    q: int
    n_units: int
    names: list

    @property
    def ses(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.vcov), 0.0, None))


def compute_rho(residuals: np.ndarray, r_y: int) -> float:
    """Share of residual variance captured by r_y principal-component
    factors extracted from the residual outer-product matrix."""
    u = np.asarray(residuals, dtype=float)
    ss_before = float((u ** 2).sum())
    if not np.isfinite(u).all():
        raise DomainError("residuals contain non-finite values")
    if ss_before <= 1e-300:
        raise DomainError("zero residual variance")
    _, vecs = pooled_outer_eigs(u[:, :, None])
    g = vecs[:, :r_y]
    proj = Annihilator(g).project_out(u.T)
    return float(np.clip(1.0 - (proj ** 2).sum() / ss_before, 0.0, 1.0))


def select_residual_rank(residuals: np.ndarray, r_max: int = 8) -> int:
    """Eigenvalue-ratio rank choice on the residual outer products."""
    vals, _ = pooled_outer_eigs(np.asarray(residuals)[:, :, None])
    n, t = residuals.shape
    return select_rank(vals, r_max=max(1, min(r_max, min(n, t) // 2)))


def estimate_pooled(tp: TransformedPanel, w: WeightScheme,
                    fb: FactorBasis | None = None,
                    r_y: int | None = None,
                    instruments: list[InstrumentSet] | None = None) -> PooledEstimate:
    """Two-step pooled IV with stacked unit moments.

    Step one weights by the pooled instrument Gram matrix; step two by the
    inverse cluster-by-unit moment covariance, which also feeds the
    overidentification J statistic (absent in the just-identified case) and
    the coefficient covariance. The clustered covariance has rank at most N,
    so when it cannot be inverted (few units relative to instruments) the
    one-step estimate is kept with a sandwich covariance and no J statistic.
    Isolated units contribute to the lagged level and covariate moments but
    not to the spatial lag.
    """
    if instruments is None:
        instruments = build_instruments(tp, w, fb)
    designs, ys, isolated = unit_designs(tp, w)
    n, t, k = tp.n, tp.t_eff, tp.k
    all_isolated = bool(isolated.all())
    p = (1 + k) if all_isolated else (2 + k)
    q = max(inst.q for inst in instruments)

    z_full, c_full = [], []
    for i in range(n):
        z = instruments[i].z
        c = designs[i]
        if z.shape[1] < q:             # zero-pad the missing spatial blocks
            z = np.hstack([z, np.zeros((t, q - z.shape[1]))])
        if not all_isolated and c.shape[1] < p:
            c = np.insert(c, 1, 0.0, axis=1)
        z_full.append(z)
        c_full.append(c)
    z_full = np.stack(z_full)          # N x T x q
    c_full = np.stack(c_full)          # N x T x p
    y_full = np.stack(ys)              # N x T

    if q < p:
        raise UnderIdentifiedError(f"q={q} instruments for p={p} parameters")

    a_bar = np.einsum("itq,itp->qp", z_full, c_full) / (n * t)
    c_bar = np.einsum("itq,it->q", z_full, y_full) / (n * t)

    def _solve_step(weight_inv):
        aw = np.linalg.solve(weight_inv, a_bar)
        m = a_bar.T @ aw
        if not np.isfinite(m).all() or np.linalg.cond(m) > _COND_LIMIT:
            raise SingularError("singular pooled moment matrix")
        return np.linalg.solve(m, aw.T @ c_bar), m

    gram = np.einsum("itq,itr->qr", z_full, z_full) / (n * t)
    if np.linalg.cond(gram) > _COND_LIMIT:
        raise SingularError("singular pooled instrument Gram matrix")
    theta1, _ = _solve_step(gram)

    u1 = y_full - np.einsum("itp,p->it", c_full, theta1)
    g1 = np.einsum("itq,it->iq", z_full, u1) / t
    s_mat = g1.T @ g1 / n
    cond_s = np.linalg.cond(s_mat)
    j_dof = q - p

    if np.isfinite(cond_s) and cond_s <= _COND_LIMIT:
        theta, m2 = _solve_step(s_mat)
        vcov = np.linalg.inv(m2) / n
        u2 = y_full - np.einsum("itp,p->it", c_full, theta)
        g2 = np.einsum("itq,it->iq", z_full, u2) / t
        g_bar = g2.mean(axis=0)
        if j_dof > 0:
            j_stat = float(n * g_bar @ np.linalg.solve(s_mat, g_bar))
            j_pvalue = float(stats.chi2.sf(j_stat, j_dof))
        else:
            j_stat, j_pvalue = None, None
    else:
        # the clustered covariance has rank <= N; with few units it cannot be
        # inverted, so keep the one-step estimate with a sandwich covariance
        # and report the J statistic as unavailable
        theta = theta1
        aw1 = np.linalg.solve(gram, a_bar)
        m1 = a_bar.T @ aw1
        bread = np.linalg.inv(m1)
        vcov = bread @ (aw1.T @ s_mat @ aw1) @ bread / n
        u2 = u1
        j_stat, j_pvalue = None, None

    if r_y is None:
        try:
            r_y = select_residual_rank(u1)
        except (RankError, NumericError):
            r_y = None
    rho = None
    if r_y is not None:
        try:
            rho = compute_rho(u2, r_y)
        except DomainError:
            rho = None

    names = ["lag_level"] + (["spatial_lag"] if not all_isolated else []) \
        + list(tp.covariate_names or [f"x{l + 1}" for l in range(k)])
    if all_isolated:
        theta = np.insert(theta, 1, np.nan)
        vcov = _pad_vcov(vcov)
        names.insert(1, "spatial_lag")
    return PooledEstimate(theta=theta, vcov=vcov, j_stat=j_stat, j_dof=j_dof,
                          j_pvalue=j_pvalue, rho=rho, r_y=r_y, q=q,
                          n_units=n, names=names)


def _pad_vcov(v):
    out = np.full((v.shape[0] + 1, v.shape[1] + 1), np.nan)
    out[0, 0] = v[0, 0]
    out[2:, 0] = v[1:, 0]
    out[0, 2:] = v[0, 1:]
    out[2:, 2:] = v[1:, 1:]
    return out
