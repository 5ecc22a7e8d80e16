"""Synthetic panel generator for the full structural model.

Generates balanced panels from the simultaneous growth system with latent
common factors loading on both the covariates and the error term. Every
estimator and diagnostic in the package is validated against panels drawn
here, where the truth is known exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .effects import EffectsTable
from .errors import InputError, SingularError, StabilityError
from .panel import PanelDataset
from .weights import WeightScheme


@dataclass(frozen=True)
class DgpSpec:
    """Parameters of the synthetic data-generating process.

    ``delta``, ``psi``, and ``beta`` accept a scalar (common value), a
    ``(mean, sd)`` tuple (independent normal draws per unit), or an explicit
    array. ``x_noise_sd`` may be a scalar, a per-unit array, or a per-unit,
    per-covariate array, which lets regressor variances differ across units
    (and correlate with the slopes, for pooled-bias experiments). ``x_ar``
    and ``factor_ar`` put AR(1) persistence into the idiosyncratic covariate
    noise (scalar or per-unit) and the common factors, respectively.
    """

    n: int
    t: int
    k: int
    w_true: WeightScheme
    delta: object = -0.05
    psi: object = 0.3
    beta: object = 1.0
    burn_in: int = 100
    r_f: int = 0
    r_g: int = 0
    loading_dispersion: float = 1.0
    loading_correlation: float = 0.0
    noise_sd: float = 1.0
    x_noise_sd: object = 1.0
    factor_ar: float = 0.0
    x_ar: object = 0.0
    psi_clip: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if self.n < 2 or self.t < 4 or self.k < 1:
            raise InputError("need n >= 2, t >= 4, k >= 1")
        if self.burn_in < 50:
            raise InputError("burn_in must be at least 50")
        if not 0.0 <= self.loading_correlation < 1.0:
            raise InputError("loading_correlation must lie in [0, 1)")
        if self.w_true.n != self.n:
            raise InputError("w_true size does not match n")
        if not 0 < self.psi_clip < 1:
            raise InputError("psi_clip must lie in (0, 1)")


@dataclass(frozen=True)
class DgpTruth:
    """Everything needed to recompute the latent paths of a draw."""

    delta: np.ndarray          # N
    psi: np.ndarray            # N
    beta: np.ndarray           # N x k
    w: WeightScheme
    f: np.ndarray              # t x r_f (kept window, time-point aligned)
    g: np.ndarray              # t x r_g
    lam: np.ndarray            # N x r_f
    phi: np.ndarray            # N x r_g
    gamma: np.ndarray          # N x r_f x k
    eps: np.ndarray            # N x t idiosyncratic outcome noise
    v: np.ndarray              # N x t x k idiosyncratic covariate noise

    def u(self) -> np.ndarray:
        """Composite error at every kept time point."""
        out = self.eps.copy()
        if self.f.shape[1]:
            out += self.lam @ self.f.T
        if self.g.shape[1]:
            out += self.phi @ self.g.T
        return out


@dataclass(frozen=True)
class SimulatedPanel:
    panel: PanelDataset
    truth: DgpTruth


def _materialize(value, rng, shape):
    if isinstance(value, tuple) and len(value) == 2 and np.isscalar(value[0]):
        mean, sd = value
        return mean + sd * rng.standard_normal(shape)
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(shape, float(arr))
    if arr.shape == shape:
        return arr.copy()
    if len(shape) == 2 and arr.shape == (shape[1],):   # per-covariate means
        return np.tile(arr, (shape[0], 1))
    raise InputError(f"cannot broadcast parameter of shape {arr.shape} to {shape}")


def _factor_system(psi, w_mat, row_standardized):
    """LU factorization of I - diag(psi) W with stability checks."""
    n = len(psi)
    scaled = psi[:, None] * w_mat
    if not row_standardized:
        rad = np.abs(np.linalg.eigvals(scaled)).max() if n else 0.0
        if rad >= 1.0:
            raise StabilityError(f"spectral radius {rad:g} >= 1")
    try:
        return lu_factor(np.eye(n) - scaled)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularError(str(exc)) from None


def _factor_path(rng, t_total, r, ar):
    f = rng.standard_normal((t_total, r))
    if r and ar:
        innov_sd = np.sqrt(1.0 - ar ** 2)
        for s in range(1, t_total):
            f[s] = ar * f[s - 1] + innov_sd * f[s]
    return f


def simulate(spec: DgpSpec) -> SimulatedPanel:
    """Draw one panel; deterministic (bit-identical) given ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    n, t, k = spec.n, spec.t, spec.k
    t_total = spec.burn_in + t

    delta = _materialize(spec.delta, rng, (n,))
    psi = _materialize(spec.psi, rng, (n,))
    if isinstance(spec.psi, tuple):
        # random draws are clipped into the stable region; explicit values
        # must already satisfy the stability invariant
        psi = np.clip(psi, -spec.psi_clip, spec.psi_clip)
    beta = _materialize(spec.beta, rng, (n, k))

    if spec.w_true.row_standardized and np.abs(psi).max() >= 1.0:
        raise StabilityError("sup |psi_i| >= 1 with a row-standardized W")

    c = spec.loading_correlation
    a, b = np.sqrt(c), np.sqrt(1.0 - c)
    disp = spec.loading_dispersion
    base = rng.standard_normal(n)
    gamma = disp * (a * base[:, None, None]
                    + b * rng.standard_normal((n, spec.r_f, k)))
    lam = disp * (a * base[:, None] + b * rng.standard_normal((n, spec.r_f)))
    phi = disp * (a * base[:, None] + b * rng.standard_normal((n, spec.r_g)))

    f = _factor_path(rng, t_total, spec.r_f, spec.factor_ar)
    g = _factor_path(rng, t_total, spec.r_g, spec.factor_ar)

    x_sd = np.asarray(spec.x_noise_sd, dtype=float)
    if x_sd.ndim == 0:
        v_scale = float(x_sd)
    elif x_sd.shape == (n,):
        v_scale = x_sd[:, None, None]
    elif x_sd.shape == (n, k):
        v_scale = x_sd[:, None, :]
    else:
        raise InputError(f"x_noise_sd has shape {x_sd.shape}, want scalar, "
                         f"({n},) or ({n}, {k})")
    v = rng.standard_normal((n, t_total, k)) * v_scale
    x_ar = np.broadcast_to(np.asarray(spec.x_ar, dtype=float), (n,))
    if np.abs(x_ar).max() > 0:
        if np.abs(x_ar).max() >= 1:
            raise InputError("x_ar must lie in (-1, 1)")
        innov = np.sqrt(1.0 - x_ar ** 2)[:, None]
        for s in range(1, t_total):
            v[:, s, :] = x_ar[:, None] * v[:, s - 1, :] + innov * v[:, s, :]
    eps = spec.noise_sd * rng.standard_normal((n, t_total))

    x = v.copy()
    if spec.r_f:
        x += np.einsum("irk,sr->isk", gamma, f)
    u = eps.copy()
    if spec.r_f:
        u += lam @ f.T
    if spec.r_g:
        u += phi @ g.T

    # simultaneous growth system, solved exactly period by period
    static = spec.w_true.kind == "static"
    if static:
        lus = [_factor_system(psi, spec.w_true.mats, spec.w_true.row_standardized)]
    else:
        # one matrix per kept growth spell; burn-in reuses the first
        if spec.w_true.mats.shape[0] != t - 1:
            raise InputError(
                f"time-varying w_true needs {t - 1} period matrices, got "
                f"{spec.w_true.mats.shape[0]}")
        lus = [_factor_system(psi, m, spec.w_true.row_standardized)
               for m in spec.w_true.mats]

    y = np.zeros((n, t_total))
    for s in range(1, t_total):
        rhs = delta * y[:, s - 1] + np.einsum("ik,ik->i", beta, x[:, s, :]) + u[:, s]
        if static:
            lu = lus[0]
        else:
            lu = lus[max(s - spec.burn_in - 1, 0)]
        y[:, s] = y[:, s - 1] + lu_solve(lu, rhs)

    keep = slice(spec.burn_in, t_total)
    panel = PanelDataset(
        unit_ids=[f"u{i + 1:03d}" for i in range(n)],
        time_ids=list(range(1, t + 1)),
        y=y[:, keep],
        x=x[:, keep, :],
        covariate_names=[f"x{l + 1}" for l in range(k)],
    )
    truth = DgpTruth(delta=delta, psi=psi, beta=beta, w=spec.w_true,
                     f=f[keep], g=g[keep], lam=lam, phi=phi, gamma=gamma,
                     eps=eps[:, keep], v=v[:, keep, :])
    return SimulatedPanel(panel=panel, truth=truth)


# --- independent effects oracle ------------------------------------------------


def brute_force_effects(w: WeightScheme, psi: float, beta, delta: float = 0.0,
                        names=None) -> EffectsTable:
    """Direct/indirect/total averages computed by linear solves only.

    Cross-validates :func:`spanel.effects.average_effects` without ever
    forming the inverse of I - psi W.
    """
    if w.kind != "static":
        raise InputError("brute-force effects require a static W")
    n = w.n
    if w.row_standardized and abs(psi) >= 1.0:
        raise StabilityError(f"|psi| = {abs(psi):g} >= 1")
    s_mat = np.eye(n) - psi * w.mats
    try:
        lu = lu_factor(s_mat)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularError(str(exc)) from None
    rowsums = lu_solve(lu, np.ones(n))
    diag = np.empty(n)
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        diag[j] = lu_solve(lu, e)[j]
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    coefs = np.concatenate([[float(delta)], beta])
    if names is None:
        names = [f"x{l + 1}" for l in range(beta.size)]
    direct = coefs * diag.mean()
    total = coefs * rowsums.mean()
    return EffectsTable(names=["lag_level"] + list(names), direct=direct,
                        indirect=total - direct, total=total)


def brute_force_effects_from_truth(truth: DgpTruth) -> EffectsTable:
    """Oracle effects evaluated at the population means of the truth."""
    return brute_force_effects(truth.w, float(truth.psi.mean()),
                               truth.beta.mean(axis=0),
                               float(truth.delta.mean()))
