"""Diagnostics for a recovered network: regional homophily and a
bias-corrected link-formation logit on bilateral covariates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .errors import (
    DegenerateGroupingError,
    DomainError,
    SeparationError,
)
from .weights import WeightScheme

_PERM_BATCH = 2048


@dataclass(frozen=True)
class HomophilyResult:
    l_same: float
    l_total: float
    h_hat: float
    h_null_mean: float
    rhi: float
    excess: float
    p_value: float
    b: int
    seed: int


def _group_codes(w: WeightScheme, groups) -> np.ndarray:
    if isinstance(groups, dict):
        try:
            labels = [groups[u] for u in w.unit_ids]
        except KeyError as exc:
            raise DomainError(f"unit {exc.args[0]!r} has no group label") from None
    else:
        labels = list(groups)
        if len(labels) != w.n:
            raise DomainError("group labels length does not match N")
    _, codes = np.unique(np.asarray(labels, dtype=object), return_inverse=True)
    if codes.max(initial=0) == 0 and len(codes):
        raise DegenerateGroupingError("all units share a single group")
    return codes


def _off_matrix(w) -> np.ndarray:
    mats = w.mats if isinstance(w, WeightScheme) else np.asarray(w, dtype=float)
    if mats.ndim != 2:
        raise DomainError("homophily diagnostics need a static network")
    out = mats.copy()
    np.fill_diagonal(out, 0.0)
    return out


def homophily_test(w: WeightScheme, groups, b: int = 10000,
                   seed: int = 0) -> HomophilyResult:
    """Label-permutation test of within-group link concentration.

    ``h_hat`` is the share of total link weight on same-group pairs; the
    permutation null reshuffles labels while preserving group sizes. The
    one-sided p-value is the plain proportion of permuted statistics at or
    above the observed one; the ratio of ``h_hat`` to the permutation mean
    is the relative homophily index and their difference the excess.
    """
    if b < 100:
        raise DomainError("need at least 100 permutations")
    codes = _group_codes(w, groups)
    mat = _off_matrix(w)
    n = mat.shape[0]
    l_total = float(mat.sum())
    if l_total <= 0:
        raise DomainError("network has no links")
    same = codes[:, None] == codes[None, :]
    np.fill_diagonal(same, False)
    l_same = float((mat * same).sum())
    h_hat = l_same / l_total

    rng = np.random.default_rng(seed)
    l_perm = np.empty(b)
    done = 0
    while done < b:
        batch = min(_PERM_BATCH, b - done)
        perm_codes = rng.permuted(np.tile(codes, (batch, 1)), axis=1)
        same_b = perm_codes[:, :, None] == perm_codes[:, None, :]
        same_b[:, np.arange(n), np.arange(n)] = False
        l_perm[done:done + batch] = np.einsum("ij,bij->b", mat, same_b)
        done += batch

    h_null_mean = float(l_perm.mean() / l_total)
    p_value = float((l_perm >= l_same).mean())
    rhi = h_hat / h_null_mean if h_null_mean > 0 else float("nan")
    return HomophilyResult(l_same=l_same, l_total=l_total, h_hat=h_hat,
                           h_null_mean=h_null_mean, rhi=rhi,
                           excess=h_hat - h_null_mean, p_value=p_value,
                           b=b, seed=seed)


def relative_homophily(h_hat: float, h_null_mean: float) -> float:
    """Observed within-group share relative to its permutation mean."""
    return h_hat / h_null_mean


def homophily_excess(h_hat: float, h_null_mean: float) -> float:
    """Within-group share minus its permutation mean (percentage points)."""
    return h_hat - h_null_mean


def count_same_links(w_binary, groups) -> int:
    """Integer count of directed links between same-group pairs."""
    if isinstance(w_binary, WeightScheme):
        codes = _group_codes(w_binary, groups)
        mat = _off_matrix(w_binary)
    else:
        mat = _off_matrix(np.asarray(w_binary, dtype=float))
        labels = list(groups) if not isinstance(groups, dict) else None
        if labels is None or len(labels) != mat.shape[0]:
            raise DomainError("groups must align with the matrix")
        _, codes = np.unique(np.asarray(labels, dtype=object), return_inverse=True)
    same = codes[:, None] == codes[None, :]
    np.fill_diagonal(same, False)
    return int(((mat != 0) & same).sum())


# --- link-formation logit -------------------------------------------------------


@dataclass(frozen=True)
class LinkLogitResult:
    alpha_hat: float
    pi_hat: np.ndarray
    ses: np.ndarray            # intercept first, then covariates
    p_values: np.ndarray
    odds_ratios: np.ndarray
    n_links: int
    n_pairs: int
    n_used: int
    correction: str
    loglik: float
    n_iter: int
    names: list


def vec_off(mat: np.ndarray) -> np.ndarray:
    """Stack the off-diagonal elements of a square matrix (row-major)."""
    mat = np.asarray(mat)
    n = mat.shape[0]
    mask = ~np.eye(n, dtype=bool)
    return mat[mask]


def bilateral_log_average(flows: np.ndarray, offset: float | None = None) -> np.ndarray:
    """Time-average of logged bilateral flows.

    Pairs with a zero flow in any period become NaN when ``offset`` is None
    (they drop out of the logit); otherwise ``log(flow + offset)`` is used.
    """
    flows = np.asarray(flows, dtype=float)
    if flows.ndim == 2:
        flows = flows[:, :, None]
    if (flows < 0).any():
        raise DomainError("flows must be nonnegative")
    if offset is None:
        with np.errstate(divide="ignore"):
            logs = np.where(flows > 0, np.log(np.where(flows > 0, flows, 1.0)), np.nan)
    else:
        logs = np.log(flows + offset)
    out = logs.mean(axis=2)
    np.fill_diagonal(out, np.nan)
    return out


def _loglik(y, eta):
    # numerically stable Bernoulli log-likelihood
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def _hat_diag(x, w_sqrt):
    q, _ = np.linalg.qr(w_sqrt[:, None] * x)
    return np.einsum("ij,ij->i", q, q)


def _newton_logit(x, y, firth: bool, max_iter: int = 100, tol: float = 1e-10,
                  max_halving: int = 25):
    coef = np.zeros(x.shape[1])
    eta = x @ coef
    pen = 0.0
    if firth:
        w0 = np.full(x.shape[0], 0.25)
        pen = 0.5 * np.linalg.slogdet(x.T @ (w0[:, None] * x))[1]
    ll = _loglik(y, eta) + pen
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        p = expit(eta)
        w = p * (1.0 - p)
        info = x.T @ (w[:, None] * x)
        if firth:
            h = _hat_diag(x, np.sqrt(w))
            score = x.T @ (y - p + h * (0.5 - p))
        else:
            score = x.T @ (y - p)
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise SeparationError("singular information matrix; try the "
                                  "rare-events correction") from None
        new_coef = coef + step
        for _ in range(max_halving + 1):
            eta_new = x @ new_coef
            ll_new = _loglik(y, eta_new)
            if firth:
                p_new = expit(eta_new)
                w_new = p_new * (1.0 - p_new)
                sign, logdet = np.linalg.slogdet(x.T @ (w_new[:, None] * x))
                ll_new += 0.5 * logdet if sign > 0 else -np.inf
            if ll_new >= ll - 1e-12:
                break
            step *= 0.5
            new_coef = coef + step
        rel = abs(ll_new - ll) / max(abs(ll), 1e-12)
        coef, eta, ll = new_coef, x @ new_coef, ll_new
        if rel < tol and n_iter > 1:
            break
    else:
        if not firth:
            raise SeparationError("logit failed to converge; possible complete "
                                  "separation, try the rare-events correction")
    if not firth and np.abs(coef).max() > 50:
        raise SeparationError("diverging coefficients indicate complete "
                              "separation; try the rare-events correction")
    p = expit(eta)
    info = x.T @ ((p * (1.0 - p))[:, None] * x)
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(info)
    return coef, cov, ll, n_iter


def link_logit(w_binary, bilateral, names=None,
               correction: str = "rare_events") -> LinkLogitResult:
    """Logistic regression of link presence on bilateral covariates.

    Off-diagonal entries are vectorized into N(N-1) directed pairs; pairs
    with missing covariates drop out. ``correction='rare_events'`` fits the
    Firth-penalized likelihood, appropriate for the very low positive rates
    of sparse networks; ``'none'`` is plain maximum likelihood.
    """
    if correction not in ("none", "rare_events"):
        raise DomainError(f"unknown correction {correction!r}")
    if isinstance(w_binary, WeightScheme):
        mat = _off_matrix(w_binary)
    else:
        mat = _off_matrix(np.asarray(w_binary, dtype=float))
    n = mat.shape[0]
    y_all = (vec_off(mat) != 0).astype(float)
    covs = [vec_off(np.asarray(b, dtype=float)) for b in bilateral]
    if names is None:
        names = [f"p{l + 1}" for l in range(len(covs))]
    x_all = np.column_stack([np.ones(y_all.size)] + covs)
    used = np.isfinite(x_all).all(axis=1)
    x, y = x_all[used], y_all[used]
    n_links = int(y.sum())
    if n_links == 0:
        raise DomainError("network has no links; logit undefined")
    if n_links == y.size:
        raise DomainError("network is complete; logit undefined")

    coef, cov, ll, n_iter = _newton_logit(x, y, firth=(correction == "rare_events"))
    ses = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        zvals = np.where(ses > 0, coef / ses, np.inf)
    p_values = 2.0 * norm.sf(np.abs(zvals))
    return LinkLogitResult(alpha_hat=float(coef[0]), pi_hat=coef[1:],
                           ses=ses, p_values=p_values,
                           odds_ratios=np.exp(coef[1:]),
                           n_links=n_links, n_pairs=n * (n - 1),
                           n_used=int(used.sum()), correction=correction,
                           loglik=ll, n_iter=n_iter, names=list(names))
