"""Reduced-form marginal effects through the spatial multiplier.

With S(psi) = I - psi W, the effect of covariate l is governed by
beta_l * S^{-1}(psi): diagonal entries are direct (own) effects, off-diagonal
entries are indirect (spillover) effects, and row sums give totals. The same
decomposition applies to the lagged-level coefficient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import ConditionError, DomainError, NotAvailableError, StabilityError
from .weights import WeightScheme

_COND_LIMIT = 1e12


@dataclass(frozen=True)
class Multiplier:
    """Dense inverse of S(psi), one matrix per period when time-varying."""

    s_inv: np.ndarray            # N x N, or T x N x N
    psi: np.ndarray | float
    w_ref: WeightScheme
    cond: float

    @property
    def time_varying(self) -> bool:
        return self.s_inv.ndim == 3

    @property
    def n(self) -> int:
        return self.s_inv.shape[-1]

    def stack(self) -> np.ndarray:
        return self.s_inv if self.time_varying else self.s_inv[None]


def multiplier(w: WeightScheme, psi) -> Multiplier:
    """Invert I - psi W (or I - diag(psi) W for unit-specific psi).

    Row-standardized schemes require |psi| < 1; otherwise the spectral
    radius of psi W must be below one.
    """
    psi_arr = np.asarray(psi, dtype=float)
    n = w.n
    if psi_arr.ndim == 0:
        scaled_abs = abs(float(psi_arr))
    elif psi_arr.shape == (n,):
        scaled_abs = float(np.abs(psi_arr).max())
    else:
        raise DomainError(f"psi must be scalar or length-{n}, got shape {psi_arr.shape}")

    mats = w.mats if w.kind == "time_varying" else w.mats[None]
    inv, conds = [], []
    eye = np.eye(n)
    for m in mats:
        pw = psi_arr * m if psi_arr.ndim == 0 else psi_arr[:, None] * m
        if w.row_standardized:
            if scaled_abs >= 1.0:
                raise StabilityError(
                    f"|psi| = {scaled_abs:g} >= 1 with a row-standardized W")
        else:
            rad = np.abs(np.linalg.eigvals(pw)).max() if n else 0.0
            if rad >= 1.0 - 1e-12:
                raise StabilityError(f"spectral radius of psi W is {rad:g} >= 1")
        s = eye - pw
        c = float(np.linalg.cond(s))
        if not np.isfinite(c) or c > _COND_LIMIT:
            raise ConditionError(f"S(psi) is near-singular (condition {c:.3g})")
        inv.append(np.linalg.inv(s))
        conds.append(c)
    s_inv = np.stack(inv) if w.kind == "time_varying" else inv[0]
    psi_out = float(psi_arr) if psi_arr.ndim == 0 else psi_arr
    return Multiplier(s_inv=s_inv, psi=psi_out, w_ref=w, cond=max(conds))


@dataclass(frozen=True)
class EffectsTable:
    """Average direct/indirect/total effects per coefficient.

    Row 0 is the lagged-level coefficient; remaining rows follow the
    covariate order. Standard errors are None until filled in (and stay
    None for time-varying weights).
    """

    names: list
    direct: np.ndarray
    indirect: np.ndarray
    total: np.ndarray
    se_direct: np.ndarray | None = None
    se_indirect: np.ndarray | None = None
    se_total: np.ndarray | None = None
    per_unit_direct: np.ndarray | None = None   # m x N
    per_unit_total: np.ndarray | None = None
    time_varying: bool = False
    se_method: str | None = None

    def to_frame(self) -> pd.DataFrame:
        data = {"effect": self.names, "direct": self.direct,
                "indirect": self.indirect, "total": self.total}
        if self.se_direct is not None:
            data["se_direct"] = self.se_direct
            data["se_indirect"] = self.se_indirect
            data["se_total"] = self.se_total
        return pd.DataFrame(data)


def _diag_rowsum(m: Multiplier) -> tuple[np.ndarray, np.ndarray]:
    """Per-unit diagonal and row sums of S^{-1}, time-averaged."""
    stack = m.stack()
    diags = stack[:, np.arange(m.n), np.arange(m.n)].mean(axis=0)
    rowsums = stack.sum(axis=2).mean(axis=0)
    return diags, rowsums


def average_effects(m: Multiplier, beta, delta: float,
                    names=None, per_unit: bool = False) -> EffectsTable:
    """Average direct/indirect/total effects for delta and each beta."""
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    coefs = np.concatenate([[float(delta)], beta])
    if names is None:
        names = [f"x{l + 1}" for l in range(beta.size)]
    labels = ["lag_level"] + list(names)
    diags, rowsums = _diag_rowsum(m)
    d_bar, r_bar = diags.mean(), rowsums.mean()
    direct = coefs * d_bar
    total = coefs * r_bar
    indirect = total - direct
    pud = np.outer(coefs, diags) if per_unit else None
    put = np.outer(coefs, rowsums) if per_unit else None
    return EffectsTable(names=labels, direct=direct, indirect=indirect,
                        total=total, per_unit_direct=pud, per_unit_total=put,
                        time_varying=m.time_varying)


def pairwise_effect(m: Multiplier, beta_l: float, i: int, j: int) -> float:
    """Response of unit i to a covariate change in unit j (time-averaged)."""
    n = m.n
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"unit indices ({i}, {j}) out of range for N={n}")
    return float(beta_l * m.stack()[:, i, j].mean())


@dataclass(frozen=True)
class SpillResult:
    """Per-unit response decomposition for a group shock."""

    units: list
    total: np.ndarray
    own: np.ndarray
    spill: np.ndarray


def spill_out(m: Multiplier, beta_l: float, source_set) -> SpillResult:
    """Response of every unit to a unit shock applied uniformly over
    ``source_set``; the own (diagonal) response of source units is reported
    separately from the spill component."""
    src = list(source_set)
    if not src:
        raise DomainError("source_set must be nonempty")
    labels = list(m.w_ref.unit_ids)
    pos = {u: i for i, u in enumerate(labels)}
    try:
        cols = [pos[u] for u in src]
    except KeyError as exc:
        raise DomainError(f"unknown unit {exc.args[0]!r} in source_set") from None
    stack = m.stack()
    total = beta_l * stack[:, :, cols].sum(axis=2).mean(axis=0)
    own = np.zeros(m.n)
    diag = beta_l * stack[:, np.arange(m.n), np.arange(m.n)].mean(axis=0)
    own[cols] = diag[cols]
    return SpillResult(units=labels, total=total, own=own, spill=total - own)


def spill_in(m: Multiplier, beta_l: float, target) -> np.ndarray:
    """Per-source responses received by ``target``: beta_l times the target
    row of S^{-1} (the entry at the target itself is its own effect)."""
    labels = list(m.w_ref.unit_ids)
    try:
        row = labels.index(target)
    except ValueError:
        raise DomainError(f"unknown target unit {target!r}") from None
    return beta_l * m.stack()[:, row, :].mean(axis=0)


# --- standard errors ---------------------------------------------------------


def _theta_vcov(est):
    theta = getattr(est, "theta", None)
    if theta is None:
        theta = est.theta_bar
    return np.asarray(theta, dtype=float), np.asarray(est.vcov, dtype=float)


def effect_standard_errors(est, w: WeightScheme, method: str = "delta",
                           draws: int = 5000, seed: int = 0,
                           names=None) -> EffectsTable:
    """Effects table with standard errors propagated from (psi, beta, delta).

    ``est`` is any estimate object exposing ``theta`` (delta, psi, beta...)
    and ``vcov``. ``method='delta'`` uses first-order propagation;
    ``method='sim'`` draws from the asymptotic normal and reports the
    empirical spread. Time-varying weights are refused: those tables carry
    no standard errors.
    """
    if w.kind == "time_varying":
        raise NotAvailableError(
            "standard errors for time-varying marginal effects are not computed")
    theta, vcov = _theta_vcov(est)
    delta, psi, beta = float(theta[0]), float(theta[1]), theta[2:]
    m = multiplier(w, psi)
    table = average_effects(m, beta, delta, names=names)

    if method == "delta":
        ses = _delta_method_ses(m, theta, vcov)
    elif method == "sim":
        ses = _simulation_ses(w, theta, vcov, draws=draws, seed=seed)
    else:
        raise DomainError(f"unknown SE method {method!r}")
    return EffectsTable(names=table.names, direct=table.direct,
                        indirect=table.indirect, total=table.total,
                        se_direct=ses[0], se_indirect=ses[1], se_total=ses[2],
                        se_method=method)


def _delta_method_ses(m: Multiplier, theta, vcov):
    s = m.s_inv
    n = m.n
    w_mat = m.w_ref.mats
    ds = s @ w_mat @ s                      # d S^{-1} / d psi
    d_bar = np.trace(s) / n
    r_bar = s.sum() / n
    dd = np.trace(ds) / n
    dr = ds.sum() / n
    coefs = np.concatenate([[theta[0]], theta[2:]])
    p = len(theta)
    se_d, se_i, se_t = [], [], []
    for row, c in enumerate(coefs):
        ci = 0 if row == 0 else row + 1     # position of this coefficient in theta
        for level, dlevel, out in ((d_bar, dd, se_d),
                                   (r_bar - d_bar, dr - dd, se_i),
                                   (r_bar, dr, se_t)):
            grad = np.zeros(p)
            grad[ci] = level
            grad[1] = c * dlevel
            out.append(float(np.sqrt(max(grad @ vcov @ grad, 0.0))))
    return np.array(se_d), np.array(se_i), np.array(se_t)


def _simulation_ses(w, theta, vcov, draws: int, seed: int):
    rng = np.random.default_rng(seed)
    p = len(theta)
    z = rng.multivariate_normal(np.zeros(p), vcov, size=draws, method="svd")
    samples = theta + z
    rows = []
    for s in samples:
        psi_s = s[1]
        if w.row_standardized and abs(psi_s) >= 1.0:
            continue
        try:
            m = multiplier(w, psi_s)
        except (StabilityError, ConditionError):
            continue
        t = average_effects(m, s[2:], s[0])
        rows.append(np.concatenate([t.direct, t.indirect, t.total]))
    if len(rows) < max(10, draws // 10):
        raise DomainError("too few stable simulation draws for effect SEs")
    arr = np.asarray(rows)
    k1 = len(theta) - 1                      # delta plus covariates
    sd = arr.std(axis=0, ddof=1)
    return sd[:k1], sd[k1:2 * k1], sd[2 * k1:]
