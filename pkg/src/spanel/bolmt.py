"""Data-driven recovery of the spatial weight matrix.

For each unit the procedure scans all other units' outcome series one at a
time, instrumenting each candidate by its own covariates, and greedily adds
the candidate with the largest absolute IV t-statistic as long as it clears
a multiple-testing threshold; selected series join the conditioning set
(instrumented by their own first-stage fits) and the scan repeats. Selected
links enter with weight one and each row is standardized at the end.

The scans are calibrated for unit-demeaned input: time demeaning would weave
a cross-section aggregate into every series and inflate the t-statistics,
so common shocks are left to the defactored instruments instead. Passing a
:class:`~spanel.panel.PanelDataset` lets :func:`recover_network` build the
appropriate transform itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats

from .errors import DegenerateCandidateError, DomainError
from .factors import FactorBasis
from .panel import PanelDataset, TransformedPanel, build_transformed
from .weights import WeightScheme, network_stats, row_standardize

_DEGENERATE_TOL = 1e-10


@dataclass(frozen=True)
class BolmtConfig:
    """Scan configuration.

    ``threshold_rule='bonferroni'`` uses the familywise-level critical value
    Phi^{-1}(1 - alpha / (2 (N-1))) per row; ``'fixed'`` uses
    ``fixed_threshold``. ``instrument_spec`` names which covariate lag
    blocks feed the pairwise regressions (contemporaneous only by default).
    """

    alpha: float = 0.05
    max_links_per_row: int | None = None
    threshold_rule: str = "bonferroni"
    fixed_threshold: float | None = None
    instrument_spec: tuple = ("lag0",)
    include_own_lag: bool = True

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise DomainError("alpha must lie in (0, 1)")
        if self.max_links_per_row is not None and self.max_links_per_row < 1:
            raise DomainError("max_links_per_row must be >= 1")
        if self.threshold_rule not in ("bonferroni", "fixed"):
            raise DomainError(f"unknown threshold rule {self.threshold_rule!r}")
        if self.threshold_rule == "fixed" and self.fixed_threshold is None:
            raise DomainError("fixed threshold rule needs fixed_threshold")

    def threshold(self, n: int, step: int = 1) -> float:
        """Critical value in force at a given scan step (1-based).

        The row's alpha budget is split geometrically across steps, so the
        whole stepwise procedure (not just one scan) keeps its familywise
        false-positive rate at alpha.
        """
        if self.threshold_rule == "fixed":
            return float(self.fixed_threshold)
        level = self.alpha / (2.0 * (n - 1) * 2.0 ** step)
        return float(stats.norm.ppf(1.0 - level))


@dataclass(frozen=True)
class RowSelection:
    """Per-row scan record: every argmax candidate with its |t| and verdict."""

    unit: int
    selected: list
    steps: list               # (candidate index, |t|, accepted)
    threshold: float          # critical value in force at the first step
    step_thresholds: list = field(default_factory=list)
    skipped: list = field(default_factory=list)


@dataclass(frozen=True)
class RecoveredNetwork:
    w_hat: WeightScheme
    selection_trace: list
    density: float

    def edge_frame(self) -> pd.DataFrame:
        """Edge list `from,to,abs_t,step` (from = influencing unit)."""
        units = self.w_hat.unit_ids
        rows = []
        for sel in self.selection_trace:
            step = 0
            for j, abs_t, accepted in sel.steps:
                if accepted:
                    step += 1
                    rows.append({"from": units[j], "to": units[sel.unit],
                                 "abs_t": abs_t, "step": step})
        return pd.DataFrame(rows, columns=["from", "to", "abs_t", "step"])


def _ols_fit(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least-squares fitted values of y on x."""
    coef, *_ = np.linalg.lstsq(x, y, rcond=None)
    return x @ coef


def pairwise_t(yi, yj, xi, xj, current_controls=None) -> float:
    """IV t-statistic for one candidate link.

    The candidate outcome is instrumented by the fitted values of its own
    covariates; the statistic divides the covariance of the instrumented
    candidate with the outcome (after annihilating own covariates and
    controls) by its residual scale. Controls are treated as exogenous here;
    the row scans generalize this to instrumented conditioning sets.
    Candidates annihilated by the controls raise
    :class:`DegenerateCandidateError`.
    """
    yi = np.asarray(yi, dtype=float).ravel()
    yj = np.asarray(yj, dtype=float).ravel()
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    xj = np.atleast_2d(np.asarray(xj, dtype=float))
    if xi.shape[0] != yi.size:
        xi = xi.T
    if xj.shape[0] != yi.size:
        xj = xj.T
    t_len = yi.size
    b_mat = xi
    if current_controls is not None and np.size(current_controls):
        ctrl = np.asarray(current_controls, dtype=float).reshape(t_len, -1)
        b_mat = np.hstack([xi, ctrl])
    p = b_mat.shape[1] + 1
    if t_len <= p:
        raise DomainError(f"need T > {p} observations, got {t_len}")

    yhat = _ols_fit(xj, yj)
    q_mat, _ = np.linalg.qr(b_mat)
    m_yhat = yhat - q_mat @ (q_mat.T @ yhat)
    den = float(m_yhat @ m_yhat)
    scale = float(yhat @ yhat)
    if den <= _DEGENERATE_TOL * max(scale, 1e-30):
        raise DegenerateCandidateError("candidate annihilated by controls")
    num = float(m_yhat @ yi)
    b = num / float(m_yhat @ yj)
    gamma, *_ = np.linalg.lstsq(b_mat, yi - yj * b, rcond=None)
    resid = yi - b_mat @ gamma - yj * b
    sigma2 = float(resid @ resid) / (t_len - p)
    if sigma2 <= 0:
        raise DegenerateCandidateError("zero residual variance")
    return num / (np.sqrt(sigma2) * np.sqrt(den))


def _scan_step(y_i, yhat_cand, y_cand, b_inst, b_act):
    """IV t-statistics for every candidate given one conditioning set.

    Each candidate enters a just-identified IV regression with regressors
    [b_act, y_j] and instruments [b_inst, yhat_j]; the returned statistic is
    the candidate coefficient over its IV standard error. With exogenous
    controls this equals the ratio form computed by :func:`pairwise_t`.
    Returns (t-stats, valid mask).
    """
    t_len = y_i.size
    m = yhat_cand.shape[1]
    p = b_inst.shape[1] + 1
    dof = t_len - p

    bv_ba = b_inst.T @ b_act
    bv_bv = b_inst.T @ b_inst
    bv_y = b_inst.T @ y_i
    bv_h = b_inst.T @ yhat_cand
    bv_r = b_inst.T @ y_cand
    h_y = yhat_cand.T @ y_i
    h_ba = yhat_cand.T @ b_act
    h_r = np.einsum("tj,tj->j", yhat_cand, y_cand)
    h_h = np.einsum("tj,tj->j", yhat_cand, yhat_cand)
    ba_y = b_act.T @ y_i
    ba_ba = b_act.T @ b_act
    ba_r = b_act.T @ y_cand
    r_r = np.einsum("tj,tj->j", y_cand, y_cand)
    r_y = y_cand.T @ y_i
    yy = float(y_i @ y_i)

    # degenerate candidates: instrumented series annihilated by the controls
    q_mat, _ = np.linalg.qr(b_inst)
    m_h = yhat_cand - q_mat @ (q_mat.T @ yhat_cand)
    leverage = np.einsum("tj,tj->j", m_h, m_h)
    valid = leverage > _DEGENERATE_TOL * np.maximum(h_h, 1e-30)

    tstats = np.zeros(m)
    for j in range(m):
        if not valid[j]:
            continue
        vr = np.empty((p, p))
        vr[:-1, :-1] = bv_ba
        vr[:-1, -1] = bv_r[:, j]
        vr[-1, :-1] = h_ba[j]
        vr[-1, -1] = h_r[j]
        vv = np.empty((p, p))
        vv[:-1, :-1] = bv_bv
        vv[:-1, -1] = bv_h[:, j]
        vv[-1, :-1] = bv_h[:, j]
        vv[-1, -1] = h_h[j]
        vy = np.concatenate([bv_y, [h_y[j]]])
        try:
            theta = np.linalg.solve(vr, vy)
            core = np.linalg.solve(vr, vv) @ np.linalg.inv(vr).T
        except np.linalg.LinAlgError:
            valid[j] = False
            continue
        # residual sum of squares via precomputed inner products
        ry = np.concatenate([ba_y, [r_y[j]]])
        rr = np.empty((p, p))
        rr[:-1, :-1] = ba_ba
        rr[:-1, -1] = ba_r[:, j]
        rr[-1, :-1] = ba_r[:, j]
        rr[-1, -1] = r_r[j]
        rss = yy - 2.0 * theta @ ry + theta @ rr @ theta
        sigma2 = max(rss, 0.0) / dof
        var_b = sigma2 * core[-1, -1]
        if not np.isfinite(var_b) or var_b <= 0:
            valid[j] = False
            continue
        tstats[j] = theta[-1] / np.sqrt(var_b)
    return tstats, valid


def _candidate_blocks(tp: TransformedPanel, fb: FactorBasis | None,
                      spec: tuple) -> np.ndarray:
    """Per-unit covariate blocks (defactored on request) used in the scans."""
    from .iv import _project_block

    taus = sorted(int(s[-1]) for s in spec)
    xs = {0: tp.x0, 1: tp.x1, 2: tp.x2}
    if fb is not None:
        ann0 = fb.annihilator(0)
        anns = {tau: [fb.annihilator(tau), ann0] if tau else [ann0] for tau in taus}
    else:
        anns = {tau: [] for tau in taus}
    pieces = [_project_block(xs[tau], anns[tau]) for tau in taus]
    return np.concatenate(pieces, axis=2)       # N x T x (k * len(spec))


def _scan_transform(data, demean_mode: str) -> TransformedPanel:
    if isinstance(data, TransformedPanel):
        return data
    if isinstance(data, PanelDataset):
        return build_transformed(data, demean_mode)
    raise DomainError("expected a PanelDataset or TransformedPanel")


def recover_row(i: int, data, cfg: BolmtConfig | None = None,
                fb: FactorBasis | None = None, demean_mode: str = "unit_only",
                _xblocks=None, _yhat=None) -> RowSelection:
    """Stepwise link selection for one row of the network."""
    cfg = cfg or BolmtConfig()
    tp = _scan_transform(data, demean_mode)
    if _xblocks is None:
        _xblocks = _candidate_blocks(tp, fb, cfg.instrument_spec)
    if _yhat is None:
        _yhat = np.stack([_ols_fit(_xblocks[j], tp.dy[j]) for j in range(tp.n)],
                         axis=1)
    n = tp.n
    cap = cfg.max_links_per_row or (n - 1)
    y_i = tp.dy[i]

    own = [_xblocks[i]]
    if cfg.include_own_lag:
        own.append(tp.y_lag[i][:, None])
    own = np.hstack(own)
    b_inst = [own]           # instrument side: first-stage fits of selections
    b_act = [own]            # regressor side: actual selected outcomes

    remaining = [j for j in range(n) if j != i]
    selected, steps, skipped, thresholds = [], [], [], []
    while remaining and len(selected) < cap:
        inst_mat = np.hstack(b_inst)
        act_mat = np.hstack(b_act)
        if y_i.size <= inst_mat.shape[1] + 1:
            break
        cand = np.array(remaining)
        tstats, valid = _scan_step(y_i, _yhat[:, cand], tp.dy[cand].T,
                                   inst_mat, act_mat)
        skipped.extend(int(c) for c in cand[~valid])
        if not valid.any():
            break
        threshold = cfg.threshold(n, step=len(selected) + 1)
        thresholds.append(threshold)
        abs_t = np.where(valid, np.abs(tstats), -np.inf)
        best = int(np.argmax(abs_t))        # ties resolve to the smaller index
        j_star = int(cand[best])
        accepted = abs_t[best] > threshold
        steps.append((j_star, float(abs_t[best]), bool(accepted)))
        if not accepted:
            break
        selected.append(j_star)
        b_inst.append(_yhat[:, [j_star]])
        b_act.append(tp.dy[j_star][:, None])
        remaining.remove(j_star)
    return RowSelection(unit=i, selected=selected, steps=steps,
                        threshold=cfg.threshold(n, step=1),
                        step_thresholds=thresholds, skipped=sorted(set(skipped)))


def recover_network(data, cfg: BolmtConfig | None = None,
                    fb: FactorBasis | None = None,
                    demean_mode: str = "unit_only") -> RecoveredNetwork:
    """Run the row scans for every unit and assemble the standardized
    recovered weight matrix."""
    cfg = cfg or BolmtConfig()
    tp = _scan_transform(data, demean_mode)
    xblocks = _candidate_blocks(tp, fb, cfg.instrument_spec)
    yhat = np.stack([_ols_fit(xblocks[j], tp.dy[j]) for j in range(tp.n)], axis=1)
    n = tp.n
    mat = np.zeros((n, n))
    trace = []
    for i in range(n):
        sel = recover_row(i, tp, cfg, fb, _xblocks=xblocks, _yhat=yhat)
        trace.append(sel)
        for j in sel.selected:
            mat[i, j] = 1.0
    units = tp.unit_ids or list(range(n))
    w_hat = row_standardize(WeightScheme(mat, list(units)))
    density = float((mat > 0).sum() / (n * (n - 1)))
    return RecoveredNetwork(w_hat=w_hat, selection_trace=trace, density=density)


def recovered_stats(net: RecoveredNetwork):
    """Summary in the density / average-links format."""
    return network_stats(net.w_hat)
