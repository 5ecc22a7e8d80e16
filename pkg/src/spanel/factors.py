"""Principal-component factor extraction and annihilator projections.

Factors are estimated, separately for each covariate lag, as sqrt(T) times
the leading eigenvectors of the pooled T x T outer-product matrix of the
covariates; the factor count comes from the eigenvalue-ratio rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, RankError, SingularError

_SIGN_TOL = 1e-12
DEFAULT_R_MAX = 8


def pooled_outer_eigs(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of sum_i X_i X_i' / (N T) for an N x T x k array.

    Returns eigenvalues (descending, clipped at zero) and the matching
    eigenvectors as columns.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x[:, :, None]
    if not np.isfinite(x).all():
        raise NumericError("covariates contain non-finite values")
    n, t, _ = x.shape
    a = np.einsum("itk,isk->ts", x, x) / (n * t)
    vals, vecs = np.linalg.eigh(a)
    order = np.argsort(vals)[::-1]
    return np.clip(vals[order], 0.0, None), vecs[:, order]


def _fix_signs(f: np.ndarray) -> np.ndarray:
    """Make the first nonzero entry of each column positive."""
    f = f.copy()
    for j in range(f.shape[1]):
        col = f[:, j]
        nz = np.flatnonzero(np.abs(col) > _SIGN_TOL * max(1.0, np.abs(col).max()))
        if nz.size and col[nz[0]] < 0:
            f[:, j] = -col
    return f


def extract_factors(x: np.ndarray, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-r factor estimates from an N x T x k covariate array.

    Returns (F, eigvals) with F of shape T x r normalized so F'F = T I,
    and the full descending eigenvalue list.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x[:, :, None]
    n, t, k = x.shape
    if r < 1:
        raise RankError(f"factor count must be >= 1, got {r}")
    if r > min(n * k, t):
        raise RankError(f"r={r} exceeds min(N*k, T) = {min(n * k, t)}")
    vals, vecs = pooled_outer_eigs(x)
    scale = vals[0]
    if scale <= 0 or vals[r - 1] <= 1e-14 * max(scale, 1.0):
        raise RankError(f"matrix has fewer than {r} nonzero eigenvalues")
    f = _fix_signs(vecs[:, :r]) * np.sqrt(t)
    return f, vals


def select_rank(eigvals, r_max: int = DEFAULT_R_MAX) -> int:
    """Eigenvalue-ratio estimator: argmax over 1..r_max of lam_j / lam_{j+1}.

    Ties break at the smallest index. ``r_max`` is shrunk when there are
    fewer than r_max + 1 positive eigenvalues; fewer than two positive
    eigenvalues is an error.
    """
    vals = np.asarray(eigvals, dtype=float)
    pos = vals[vals > 0]
    if pos.size < 2:
        raise RankError("need at least 2 positive eigenvalues to pick a rank")
    r_max = int(min(r_max, pos.size - 1))
    if r_max < 1:
        raise RankError("r_max must be at least 1")
    ratios = pos[:r_max] / pos[1:r_max + 1]
    return int(np.argmax(ratios)) + 1


@dataclass(frozen=True)
class Annihilator:
    """Projection M = I - F (F'F)^{-1} F' applied without forming M."""

    basis: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.basis, dtype=float)
        if b.ndim != 2:
            raise RankError("annihilator basis must be 2-d")
        object.__setattr__(self, "basis", b)
        gram = b.T @ b
        if b.shape[1] and np.linalg.cond(gram) > 1e12:
            raise SingularError("rank-deficient factor basis")
        object.__setattr__(self, "_gram", gram)

    @property
    def t(self) -> int:
        return self.basis.shape[0]

    def project_out(self, z: np.ndarray) -> np.ndarray:
        """M z = z - F (F'F)^{-1} F'z."""
        z = np.asarray(z, dtype=float)
        if z.shape[0] != self.t:
            raise RankError(f"z has {z.shape[0]} rows, expected {self.t}")
        if self.basis.shape[1] == 0:
            return z.copy()
        coef = np.linalg.solve(self._gram, self.basis.T @ z)
        return z - self.basis @ coef

    def matrix(self) -> np.ndarray:
        """Dense M, for diagnostics and oracle checks."""
        return self.project_out(np.eye(self.t))


def identity_annihilator(t: int) -> Annihilator:
    """No-op projection (used when defactoring is switched off)."""
    return Annihilator(np.zeros((t, 0)))


def project_out(ann: Annihilator, z: np.ndarray) -> np.ndarray:
    return ann.project_out(z)


@dataclass(frozen=True)
class FactorBasis:
    """Factor estimates and eigenvalues for covariate lags 0, 1, 2."""

    f_hat: dict            # lag -> T x r_x factor matrix
    eigvals: dict          # lag -> descending eigenvalue array
    r_x: int
    r_y: int | None = None
    annihilators: dict = field(default_factory=dict)

    def __post_init__(self):
        anns = {tau: Annihilator(f) for tau, f in self.f_hat.items()}
        object.__setattr__(self, "annihilators", anns)

    def annihilator(self, tau: int) -> Annihilator:
        return self.annihilators[tau]

    def to_csv(self, directory) -> list:
        """Dump each lag's factor matrix for diagnostics; returns the paths."""
        from pathlib import Path

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for tau, f in sorted(self.f_hat.items()):
            path = directory / f"factors_lag{tau}.csv"
            header = ",".join(f"f{r + 1}" for r in range(f.shape[1]))
            np.savetxt(path, f, delimiter=",", header=header, comments="")
            paths.append(path)
        return paths


def build_factor_basis(tp, r_x: int | None = None,
                       r_max: int = DEFAULT_R_MAX) -> FactorBasis:
    """Extract factor bases from the lag-0/1/2 covariate blocks of a
    :class:`~spanel.panel.TransformedPanel`.

    When ``r_x`` is None, it is selected by the eigenvalue-ratio rule on the
    contemporaneous block, capped at floor(min(N, T_eff) / 2).
    """
    n, t = tp.n, tp.t_eff
    cap = max(1, min(n, t) // 2)
    if r_x is None:
        vals, _ = pooled_outer_eigs(tp.x0)
        r_x = select_rank(vals, r_max=min(r_max, cap))
    if not 1 <= r_x <= cap:
        raise RankError(f"r_x={r_x} outside [1, {cap}]")
    f_hat, eigvals = {}, {}
    for tau, x in ((0, tp.x0), (1, tp.x1), (2, tp.x2)):
        f, vals = extract_factors(x, r_x)
        f_hat[tau] = f
        eigvals[tau] = vals
    return FactorBasis(f_hat=f_hat, eigvals=eigvals, r_x=int(r_x))
