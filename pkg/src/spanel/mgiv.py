"""Mean-group aggregation of unit-specific IV estimates.

The mean-group estimator averages the unit coefficient vectors; its
covariance is the cross-unit sample covariance divided by N. Units excluded
from spatial-lag estimation (isolated rows) carry a NaN there and simply do
not contribute to that coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import DomainError, InsufficientUnitsError
from .iv import UnitEstimate


@dataclass(frozen=True)
class MgEstimate:
    theta_bar: np.ndarray
    vcov: np.ndarray
    n_used: np.ndarray
    unit_table: list
    names: list

    @property
    def theta(self) -> np.ndarray:
        return self.theta_bar

    @property
    def ses(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.vcov), 0.0, None))

    def unit_frame(self) -> pd.DataFrame:
        """Per-unit coefficient table `unit,delta,psi,beta_1..k,
        excluded_spatial` (feeds external heat maps)."""
        k = len(self.theta_bar) - 2
        cols = ["delta", "psi"] + [f"beta_{l + 1}" for l in range(k)]
        rows = []
        for ue in self.unit_table:
            rows.append({"unit": ue.unit,
                         **{nm: ue.theta[j] for j, nm in enumerate(cols)},
                         "excluded_spatial": ue.excluded_spatial})
        return pd.DataFrame(rows)


def _stack(units: list[UnitEstimate]) -> np.ndarray:
    return np.stack([np.asarray(u.theta, dtype=float) for u in units])


def _pairwise_meangroup(mat: np.ndarray, keep: np.ndarray):
    """Mean and dispersion-based covariance over the kept entries.

    Covariance entries use pairwise-complete units, centered at the
    per-coordinate means, with an (m - 1) divisor and a final division by
    the pairwise count (the sqrt-N scaling of the mean).
    """
    n_used = keep.sum(axis=0)
    if (n_used < 2).any():
        short = int(np.flatnonzero(n_used < 2)[0])
        raise InsufficientUnitsError(
            f"coefficient {short} has {int(n_used[short])} contributing units")
    vals = np.where(keep, mat, 0.0)
    theta_bar = vals.sum(axis=0) / n_used
    centered = np.where(keep, mat - theta_bar, 0.0)
    m_ab = keep.T.astype(float) @ keep.astype(float)
    s = centered.T @ centered
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(m_ab > 1, s / np.maximum(m_ab - 1.0, 1.0), np.nan)
        vcov = np.where(m_ab > 0, s / np.maximum(m_ab, 1.0), np.nan)
    return theta_bar, vcov, n_used.astype(int)


def mean_group(units: list[UnitEstimate], names=None) -> MgEstimate:
    """Coefficient-wise average with the dispersion covariance."""
    if len(units) < 2:
        raise InsufficientUnitsError(f"need at least 2 units, got {len(units)}")
    mat = _stack(units)
    keep = np.isfinite(mat)
    theta_bar, vcov, n_used = _pairwise_meangroup(mat, keep)
    if names is None:
        k = mat.shape[1] - 2
        names = ["lag_level", "spatial_lag"] + [f"x{l + 1}" for l in range(k)]
    return MgEstimate(theta_bar=theta_bar, vcov=vcov, n_used=n_used,
                      unit_table=list(units), names=list(names))


def trimmed_mean_group(units: list[UnitEstimate], trim_fraction: float,
                       names=None) -> MgEstimate:
    """Symmetric coefficient-wise trimming before averaging.

    ``trim_fraction=0`` reproduces :func:`mean_group` exactly.
    """
    if not 0.0 <= trim_fraction < 0.5:
        raise DomainError("trim_fraction must lie in [0, 0.5)")
    if len(units) < 2:
        raise InsufficientUnitsError(f"need at least 2 units, got {len(units)}")
    mat = _stack(units)
    keep = np.isfinite(mat)
    if trim_fraction > 0:
        keep = keep.copy()
        for j in range(mat.shape[1]):
            present = np.flatnonzero(keep[:, j])
            g = int(np.floor(trim_fraction * present.size))
            if g:
                order = present[np.argsort(mat[present, j], kind="stable")]
                keep[order[:g], j] = False
                keep[order[-g:], j] = False
    theta_bar, vcov, n_used = _pairwise_meangroup(mat, keep)
    if names is None:
        k = mat.shape[1] - 2
        names = ["lag_level", "spatial_lag"] + [f"x{l + 1}" for l in range(k)]
    return MgEstimate(theta_bar=theta_bar, vcov=vcov, n_used=n_used,
                      unit_table=list(units), names=list(names))
