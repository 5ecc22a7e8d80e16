"""Balanced panel ingestion, lagging/differencing, and within transformation.

The canonical input is a long-format CSV with one row per (unit, time) cell.
All estimation runs on a :class:`TransformedPanel`, whose series live on a
common estimation window that starts at the third time point so that two
covariate lags exist for every observation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import (
    BalanceError,
    DuplicateError,
    InputError,
    InsufficientTimeError,
    ParseError,
)

DEMEAN_MODES = ("two_way", "unit_only", "none")


@dataclass(frozen=True)
class IngestConfig:
    """Column mapping and transformation options for :func:`load_panel`."""

    unit_col: str = "unit"
    time_col: str = "time"
    y_col: str = "y"
    x_cols: tuple[str, ...] = ()
    demean: str = "two_way"

    @classmethod
    def from_file(cls, path) -> "IngestConfig":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        known = {k: v for k, v in raw.items()
                 if k in ("unit_col", "time_col", "y_col", "x_cols", "demean")}
        if "x_cols" in known:
            known["x_cols"] = tuple(known["x_cols"])
        cfg = cls(**known)
        if cfg.demean not in DEMEAN_MODES:
            raise InputError(f"unknown demean mode {cfg.demean!r}")
        return cfg


@dataclass(frozen=True)
class PanelDataset:
    """Balanced N x T panel of an outcome level and k covariates.

    Attributes
    ----------
    unit_ids : list
        N unit labels, no duplicates.
    time_ids : list
        T strictly ordered time labels.
    y : ndarray, shape (N, T)
        Outcome levels (log population in the motivating application).
    x : ndarray, shape (N, T, k)
        Covariates.
    covariate_names : list of str
    """

    unit_ids: list
    time_ids: list
    y: np.ndarray
    x: np.ndarray
    covariate_names: list

    def __post_init__(self):
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 2:  # single covariate supplied as N x T
            x = x[:, :, None]
        object.__setattr__(self, "x", x)
        n, t = self.y.shape
        if n < 2:
            raise InputError(f"need at least 2 units, got {n}")
        if t < 2:
            raise InsufficientTimeError(f"need at least 2 time periods, got {t}")
        if len(self.unit_ids) != n or len(self.time_ids) != t:
            raise InputError("label lengths do not match data dimensions")
        if len(set(self.unit_ids)) != n:
            raise DuplicateError("duplicate unit labels")
        if len(set(self.time_ids)) != t:
            raise DuplicateError("duplicate time labels")
        if any(not (a < b) for a, b in zip(self.time_ids, self.time_ids[1:])):
            raise InputError("time labels must be strictly increasing")
        if self.x.shape[:2] != (n, t):
            raise InputError(f"x has shape {self.x.shape}, expected ({n}, {t}, k)")
        if len(self.covariate_names) != self.k:
            raise InputError("covariate_names length does not match k")
        if not np.isfinite(self.y).all() or not np.isfinite(self.x).all():
            raise BalanceError(_nonfinite_cells(self))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def t(self) -> int:
        return self.y.shape[1]

    @property
    def k(self) -> int:
        return self.x.shape[2]

    def to_frame(self) -> pd.DataFrame:
        """Long-format view, rows sorted unit-major then time."""
        recs = []
        for i, u in enumerate(self.unit_ids):
            for s, tt in enumerate(self.time_ids):
                recs.append((u, tt, self.y[i, s], *self.x[i, s, :]))
        cols = ["unit", "time", "y"] + list(self.covariate_names)
        return pd.DataFrame.from_records(recs, columns=cols)


def _nonfinite_cells(panel) -> list:
    cells = []
    bad_y = ~np.isfinite(panel.y)
    bad_x = ~np.isfinite(panel.x).all(axis=2)
    for i in range(panel.n):
        for s in range(panel.t):
            if bad_y[i, s] or bad_x[i, s]:
                cells.append((panel.unit_ids[i], panel.time_ids[s]))
    return cells


def load_panel(path, config: IngestConfig | None = None) -> PanelDataset:
    """Read a long-format CSV into a balanced :class:`PanelDataset`.

    Units are ordered by label, times ascending. A missing (unit, time)
    cell raises :class:`BalanceError` naming the offenders; a duplicate cell
    raises :class:`DuplicateError`; a non-numeric value raises
    :class:`ParseError` with the file row number (header = row 1).
    """
    cfg = config or IngestConfig()
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    needed = [cfg.unit_col, cfg.time_col, cfg.y_col, *cfg.x_cols]
    missing_cols = [c for c in needed if c not in df.columns]
    if missing_cols:
        raise InputError(f"missing columns in {path}: {missing_cols}")

    units = sorted(df[cfg.unit_col].unique())
    times_raw = df[cfg.time_col].unique()
    try:
        times = sorted(set(int(v) for v in times_raw))
        time_of = {str(v): int(v) for v in times_raw}
    except ValueError:
        times = sorted(set(times_raw))
        time_of = {v: v for v in times_raw}

    value_cols = [cfg.y_col, *cfg.x_cols]
    parsed = {}
    for col in value_cols:
        try:
            parsed[col] = df[col].astype(float).to_numpy()
        except ValueError:
            for row, v in enumerate(df[col]):
                try:
                    float(v)
                except ValueError:
                    raise ParseError(
                        f"non-numeric value {v!r} in column {col!r} at row "
                        f"{row + 2} of {path}") from None
            raise

    uidx = {u: i for i, u in enumerate(units)}
    tidx = {t: s for s, t in enumerate(times)}
    n, t, k = len(units), len(times), len(cfg.x_cols)
    y = np.full((n, t), np.nan)
    x = np.full((n, t, k), np.nan)
    seen = np.zeros((n, t), dtype=bool)
    for row in range(len(df)):
        i = uidx[df[cfg.unit_col].iloc[row]]
        s = tidx[time_of[df[cfg.time_col].iloc[row]]]
        if seen[i, s]:
            raise DuplicateError(
                f"duplicate cell ({units[i]!r}, {times[s]!r}) at row {row + 2}")
        seen[i, s] = True
        y[i, s] = parsed[cfg.y_col][row]
        for l, col in enumerate(cfg.x_cols):
            x[i, s, l] = parsed[col][row]

    if not seen.all():
        miss = [(units[i], times[s]) for i, s in zip(*np.where(~seen))]
        raise BalanceError(miss)
    return PanelDataset(list(units), list(times), y, x, list(cfg.x_cols))


def save_panel(panel: PanelDataset, path, config: IngestConfig | None = None) -> None:
    """Write the canonical long CSV; inverse of :func:`load_panel`."""
    cfg = config or IngestConfig(x_cols=tuple(panel.covariate_names))
    df = panel.to_frame()
    df.columns = [cfg.unit_col, cfg.time_col, cfg.y_col, *panel.covariate_names]
    df.to_csv(path, index=False)


# --- transformation -------------------------------------------------------------


def first_differences(y: np.ndarray) -> np.ndarray:
    """All N x (T-1) growth spells y[:, t+1] - y[:, t]."""
    y = np.asarray(y, dtype=float)
    return y[:, 1:] - y[:, :-1]


def demean(z: np.ndarray, mode: str = "two_way") -> np.ndarray:
    """Within transformation of an N x T array.

    ``two_way`` removes unit means then time means (iterated once each,
    exact for balanced panels); ``unit_only`` removes unit means; ``none``
    returns a copy.
    """
    z = np.asarray(z, dtype=float)
    if mode == "none":
        return z.copy()
    out = z - z.mean(axis=1, keepdims=True)
    if mode == "two_way":
        out = out - out.mean(axis=0, keepdims=True)
        return out
    if mode == "unit_only":
        return out
    raise InputError(f"unknown demean mode {mode!r}")


@dataclass(frozen=True)
class TransformedPanel:
    """Differenced, lagged, and demeaned series on a common window.

    The window starts at the third time point (1-indexed), so every
    observation carries the first difference, the lagged level, and
    covariates at lags 0, 1, and 2. ``t_eff = T - 2``.
    """

    dy: np.ndarray        # N x t_eff
    y_lag: np.ndarray     # N x t_eff
    x0: np.ndarray        # N x t_eff x k
    x1: np.ndarray
    x2: np.ndarray
    t_eff: int
    demean_mode: str
    unit_ids: list = field(default_factory=list)
    covariate_names: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.dy.shape[0]

    @property
    def k(self) -> int:
        return self.x0.shape[2]


def build_transformed(panel: PanelDataset, demean_mode: str = "two_way",
                      demean_before_diff: bool = False) -> TransformedPanel:
    """Difference, lag-trim, and demean a panel for estimation.

    By default levels are differenced first and every windowed series is
    demeaned afterwards; ``demean_before_diff`` flips the order (the two
    agree up to a second demeaning pass on balanced panels).
    """
    if demean_mode not in DEMEAN_MODES:
        raise InputError(f"unknown demean mode {demean_mode!r}")
    if panel.t < 4:
        raise InsufficientTimeError(
            f"T={panel.t} < 4: need two covariate lags plus a first difference")

    y = demean(panel.y, demean_mode) if demean_before_diff else panel.y
    dy_all = first_differences(y)        # spells at time points 2..T
    # estimation window: time points 3..T (1-indexed)
    dy = dy_all[:, 1:]
    y_lag = y[:, 1:-1]                   # y at points 2..T-1
    x0 = panel.x[:, 2:, :]
    x1 = panel.x[:, 1:-1, :]
    x2 = panel.x[:, :-2, :]

    def _dm(z):
        return demean(z, demean_mode)

    dy = _dm(dy)
    y_lag = _dm(y_lag)
    xs = []
    for xl in (x0, x1, x2):
        xs.append(np.stack([_dm(xl[:, :, l]) for l in range(panel.k)], axis=2)
                  if panel.k else xl.copy())
    return TransformedPanel(dy=dy, y_lag=y_lag, x0=xs[0], x1=xs[1], x2=xs[2],
                            t_eff=panel.t - 2, demean_mode=demean_mode,
                            unit_ids=list(panel.unit_ids),
                            covariate_names=list(panel.covariate_names))
