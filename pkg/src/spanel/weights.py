"""Spatial weight matrices: construction, validation, normalization, summaries.

Supported families mirror the usual empirical menu: binary contiguity,
thresholded inverse great-circle distance, and (time-averaged or
time-varying) flow-based weights. All matrices have zero diagonals and
nonnegative entries; row standardization is optional everywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import (
    DegenerateDistanceError,
    DomainError,
    InputError,
    LabelError,
    SelfLoopError,
    ShapeError,
)

EARTH_RADIUS_MILES = 3958.8

_ROWSUM_TOL = 1e-10


@dataclass(frozen=True)
class WeightScheme:
    """A static (N x N) or time-varying (T x N x N) spatial weight structure."""

    mats: np.ndarray
    unit_ids: list
    row_standardized: bool = False

    def __post_init__(self):
        m = np.asarray(self.mats, dtype=float)
        if m.ndim not in (2, 3):
            raise ShapeError(f"weights must be 2-d or 3-d, got ndim={m.ndim}")
        n = m.shape[-1]
        if m.shape[-2] != n:
            raise ShapeError(f"weight matrices must be square, got {m.shape}")
        if len(self.unit_ids) != n:
            raise InputError("unit_ids length does not match matrix size")
        if not np.isfinite(m).all():
            raise DomainError("weights contain non-finite entries")
        if (m < 0).any():
            raise DomainError("weights must be nonnegative")
        stack = m if m.ndim == 3 else m[None]
        diag = stack[:, np.arange(n), np.arange(n)]
        if np.abs(diag).max(initial=0.0) > 0:
            raise DomainError("weight matrices must have zero diagonals")
        if self.row_standardized:
            sums = stack.sum(axis=2)
            bad = (sums > 0) & (np.abs(sums - 1.0) > _ROWSUM_TOL)
            if bad.any():
                raise DomainError("row_standardized flag set but rows do not sum to 1")
        object.__setattr__(self, "mats", m)

    @property
    def kind(self) -> str:
        return "time_varying" if self.mats.ndim == 3 else "static"

    @property
    def n(self) -> int:
        return self.mats.shape[-1]

    @property
    def n_periods(self) -> int | None:
        return self.mats.shape[0] if self.kind == "time_varying" else None

    def at(self, t: int) -> np.ndarray:
        """Matrix in force at period t (static schemes ignore t)."""
        return self.mats if self.kind == "static" else self.mats[t]

    def isolated_units(self) -> np.ndarray:
        """Boolean mask of units whose row is all-zero (in every period)."""
        stack = self.mats if self.kind == "time_varying" else self.mats[None]
        return (stack.sum(axis=2) == 0).all(axis=0)


@dataclass(frozen=True)
class NetworkStats:
    density: float
    avg_out_links: float
    in_degree: np.ndarray
    out_degree: np.ndarray
    isolated_units: list


def network_stats(w: WeightScheme, threshold: float = 0.0) -> NetworkStats:
    """Density and degree summary; a link counts when its weight exceeds
    ``threshold`` (strictly). Time-varying schemes are averaged over periods.
    """
    stack = w.mats if w.kind == "time_varying" else w.mats[None]
    n = w.n
    off = ~np.eye(n, dtype=bool)
    links = (stack > threshold) & off
    density = float(links.sum(axis=(1, 2)).mean() / (n * (n - 1)))
    out_deg = links.sum(axis=2).mean(axis=0)
    in_deg = links.sum(axis=1).mean(axis=0)
    iso = [w.unit_ids[i] for i in np.flatnonzero(w.isolated_units())]
    return NetworkStats(density=density,
                        avg_out_links=float(out_deg.mean()),
                        in_degree=in_deg, out_degree=out_deg,
                        isolated_units=iso)


# --- constructors ------------------------------------------------------------


def contiguity_weights(adjacency, units, standardize: bool = False) -> WeightScheme:
    """Symmetric binary weights from a list of unordered border pairs."""
    units = list(units)
    idx = {u: i for i, u in enumerate(units)}
    n = len(units)
    m = np.zeros((n, n))
    for a, b in adjacency:
        if a not in idx or b not in idx:
            unknown = a if a not in idx else b
            raise LabelError(f"unknown unit label {unknown!r}")
        if a == b:
            raise SelfLoopError(f"self-pair ({a!r}, {b!r})")
        m[idx[a], idx[b]] = 1.0
        m[idx[b], idx[a]] = 1.0
    w = WeightScheme(m, units)
    return row_standardize(w) if standardize else w


def haversine_miles(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Great-circle distance in miles between points given in degrees."""
    p1, l1, p2, l2 = map(np.radians, (lat1, lon1, lat2, lon2))
    a = np.sin((p2 - p1) / 2.0) ** 2 + np.cos(p1) * np.cos(p2) * np.sin((l2 - l1) / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_MILES * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def inverse_distance_weights(coords, units=None, percentile_cutoff: float = 100.0,
                             standardize: bool = False) -> WeightScheme:
    """Inverse great-circle distance weights with a hard percentile threshold.

    ``w[i, j] = 1/d[i, j]`` when ``d[i, j] <= c`` and 0 otherwise, where c is
    the given percentile (linear interpolation) of the N(N-1)/2 unique
    off-diagonal distances. Ties at the cutoff are included.
    """
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ShapeError("coords must be an N x 2 array of (lat, lon)")
    n = coords.shape[0]
    units = list(units) if units is not None else list(range(n))
    lat, lon = coords[:, 0], coords[:, 1]
    if (np.abs(lat) > 90).any():
        raise DomainError("latitudes must lie in [-90, 90]")
    if (np.abs(lon) > 180).any():
        raise DomainError("longitudes must lie in [-180, 180]")
    if not 0 < percentile_cutoff <= 100:
        raise DomainError("percentile_cutoff must lie in (0, 100]")

    d = haversine_miles(lat[:, None], lon[:, None], lat[None, :], lon[None, :])
    iu = np.triu_indices(n, k=1)
    zero_pairs = [(a, b) for a, b in zip(*iu) if d[a, b] == 0]
    if zero_pairs:
        i, j = zero_pairs[0]
        raise DegenerateDistanceError(
            f"coincident coordinates for units {units[i]!r} and {units[j]!r}")
    c = np.percentile(d[iu], percentile_cutoff)
    m = np.zeros((n, n))
    keep = (d <= c) & ~np.eye(n, dtype=bool)
    m[keep] = 1.0 / d[keep]
    w = WeightScheme(m, units)
    return row_standardize(w) if standardize else w


def flow_weights(flows, units=None, mode: str = "time_averaged",
                 literal_inverse: bool = False,
                 standardize: bool = False) -> WeightScheme:
    """Weights from an N x N x T array of inflows (``flows[i, j, t]`` is the
    flow from j into i).

    By default the weight is proportional to the (time-mean) inflow, so that
    larger trading partners carry larger weights; ``literal_inverse`` uses
    1/flow instead (zero flows stay zero either way).
    """
    flows = np.asarray(flows, dtype=float)
    if flows.ndim == 2:
        flows = flows[:, :, None]
    if flows.ndim != 3 or flows.shape[0] != flows.shape[1]:
        raise ShapeError(f"flows must be N x N x T, got {flows.shape}")
    if (flows < 0).any():
        raise DomainError("flows must be nonnegative")
    if mode not in ("time_averaged", "time_varying"):
        raise InputError(f"unknown mode {mode!r}")
    n = flows.shape[0]
    units = list(units) if units is not None else list(range(n))
    base = flows.mean(axis=2) if mode == "time_averaged" else np.moveaxis(flows, 2, 0)
    if literal_inverse:
        m = np.zeros_like(base)
        np.divide(1.0, base, out=m, where=base > 0)
    else:
        m = base.copy()
    eye = np.eye(n, dtype=bool)
    if m.ndim == 3:
        m[:, eye] = 0.0
    else:
        m[eye] = 0.0
    w = WeightScheme(m, units)
    return row_standardize(w) if standardize else w


def row_standardize(w: WeightScheme) -> WeightScheme:
    """Divide each nonzero row by its sum; all-zero rows are left alone."""
    stack = w.mats if w.kind == "time_varying" else w.mats[None]
    sums = stack.sum(axis=2, keepdims=True)
    out = np.divide(stack, sums, out=stack.copy(), where=sums > 0)
    if w.kind == "static":
        out = out[0]
    return replace(w, mats=out, row_standardized=True)


def spatial_lag(w: WeightScheme, series: np.ndarray) -> np.ndarray:
    """Network-weighted average of other units' series, period by period.

    ``series`` is N x T; time-varying schemes apply their period-t matrix to
    the period-t cross-section (Hadamard-over-time construction).
    """
    z = np.asarray(series, dtype=float)
    if z.ndim != 2 or z.shape[0] != w.n:
        raise ShapeError(f"series must be N x T with N={w.n}, got {z.shape}")
    if w.kind == "static":
        return w.mats @ z
    if w.mats.shape[0] != z.shape[1]:
        raise ShapeError(
            f"time-varying scheme has {w.mats.shape[0]} periods, series has "
            f"{z.shape[1]}")
    return np.einsum("tij,jt->it", w.mats, z)


def spatial_lag_covariates(w: WeightScheme, x: np.ndarray) -> np.ndarray:
    """Spatial lag of an N x T x k covariate array, one call per lag block."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 3 or x.shape[0] != w.n:
        raise ShapeError(f"x must be N x T x k with N={w.n}, got {x.shape}")
    if w.kind == "static":
        return np.einsum("ij,jtk->itk", w.mats, x)
    if w.mats.shape[0] != x.shape[1]:
        raise ShapeError("time-varying scheme period count mismatch")
    return np.einsum("tij,jtk->itk", w.mats, x)


# --- I/O -------------------------------------------------------------------


def save_weights(w: WeightScheme, path) -> None:
    """Dense CSV with unit labels as header; time-varying schemes go to a
    directory with one file per period plus a manifest."""
    path = Path(path)
    if w.kind == "static":
        pd.DataFrame(w.mats, index=w.unit_ids, columns=w.unit_ids).to_csv(path)
        return
    path.mkdir(parents=True, exist_ok=True)
    files = []
    for t in range(w.mats.shape[0]):
        name = f"w_{t:04d}.csv"
        pd.DataFrame(w.mats[t], index=w.unit_ids, columns=w.unit_ids).to_csv(path / name)
        files.append(name)
    manifest = {"kind": "time_varying", "files": files,
                "row_standardized": w.row_standardized}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_weights(path, row_standardized: bool | None = None) -> WeightScheme:
    """Inverse of :func:`save_weights`."""
    path = Path(path)
    if path.is_dir():
        manifest = json.loads((path / "manifest.json").read_text())
        mats, units = [], None
        for name in manifest["files"]:
            df = pd.read_csv(path / name, index_col=0)
            units = [str(c) for c in df.columns]
            mats.append(df.to_numpy(dtype=float))
        flag = manifest.get("row_standardized", False) \
            if row_standardized is None else row_standardized
        return WeightScheme(np.stack(mats), units, row_standardized=flag)
    df = pd.read_csv(path, index_col=0)
    units = [str(c) for c in df.columns]
    m = df.to_numpy(dtype=float)
    if row_standardized is None:
        sums = m.sum(axis=1)
        row_standardized = bool(np.all((sums == 0) | (np.abs(sums - 1) < _ROWSUM_TOL)))
    return WeightScheme(m, units, row_standardized=row_standardized)


def load_coordinates(path) -> tuple[list, np.ndarray]:
    """Read a `unit,lat,lon` CSV; returns (units, N x 2 array)."""
    df = pd.read_csv(path)
    for col in ("unit", "lat", "lon"):
        if col not in df.columns:
            raise InputError(f"coordinates file {path} needs column {col!r}")
    return list(df["unit"]), df[["lat", "lon"]].to_numpy(dtype=float)


def load_pairs(path) -> list:
    """Read a `from,to` CSV of border pairs."""
    df = pd.read_csv(path)
    if df.shape[1] < 2:
        raise InputError(f"pairs file {path} needs two columns")
    return list(zip(df.iloc[:, 0], df.iloc[:, 1]))
