"""Vertex component analysis and fully constrained least squares."""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import nnls

from .errors import DegenerateInputError, ParameterError
from .hsi import EndmemberSet

log = logging.getLogger(__name__)

FCLS_DELTA = 1e3


@dataclass
class VcaConfig:
    p: int
    seed: int = 0
    snr_estimate_override: Optional[float] = None


@dataclass
class VcaResult:
    endmembers: EndmemberSet
    indices: np.ndarray
    snr_db: float
    projective: bool


def estimate_snr(Y, mean, x_proj):
    """SNR estimate (dB) from the p-dimensional projection of mean-removed data."""
    L, n = Y.shape
    p = x_proj.shape[0]
    p_y = np.sum(Y ** 2) / n
    p_x = np.sum(x_proj ** 2) / n + np.sum(mean ** 2)
    num = p_x - p / L * p_y
    den = p_y - p_x
    if den <= 0 or num <= 0:
        return np.inf if den <= 0 else -np.inf
    return 10 * np.log10(num / den)


def vca(Y, cfg):
    """Extract ``cfg.p`` endmembers from the (L, n) data matrix ``Y``.

    Follows Nascimento & Bioucas-Dias: the data is projected onto a p (high
    SNR) or p-1 (low SNR) dimensional subspace and, p times, the pixel with
    the largest |f^T y| is picked, f being a random direction orthogonal to
    the pixels already chosen. The chosen original columns are returned.
    """
    Y = np.asarray(Y, dtype=float)
    L, n = Y.shape
    p = cfg.p
    if p < 2 or p > min(L, n):
        raise ParameterError(f"vca: need 2 <= p <= min(L, n), got p={p}, L={L}, n={n}")
    rng = np.random.default_rng(cfg.seed)

    sv = np.linalg.svd(Y, compute_uv=False)
    if sv[p - 1] <= sv[0] * 1e-10:
        raise DegenerateInputError(f"vca: data rank below p={p}")

    mean = Y.mean(axis=1, keepdims=True)
    Yo = Y - mean
    if cfg.snr_estimate_override is not None:
        snr = float(cfg.snr_estimate_override)
        Ud = None
    else:
        Ud = np.linalg.svd(Yo @ Yo.T / n)[0][:, :p]
        snr = estimate_snr(Y, mean, Ud.T @ Yo)
    snr_th = 15 + 10 * np.log10(p)

    projective = snr >= snr_th
    if not projective:
        d = p - 1
        if Ud is None:
            Ud = np.linalg.svd(Yo @ Yo.T / n)[0][:, :p]
        Ud = Ud[:, :d]
        x = Ud.T @ Yo
        c = np.max(np.linalg.norm(x, axis=0))
        y = np.vstack([x, np.full((1, n), c)])
    else:
        Ud = np.linalg.svd(Y @ Y.T / n)[0][:, :p]
        x = Ud.T @ Y
        u = x.mean(axis=1, keepdims=True)
        denom = (u.T @ x)[0]
        denom[np.abs(denom) < 1e-300] = 1e-300
        y = x / denom

    indices = np.zeros(p, dtype=int)
    Amat = np.zeros((p, p))
    Amat[p - 1, 0] = 1.0
    for i in range(p):
        w = rng.random((p, 1))
        f = w - Amat @ np.linalg.pinv(Amat) @ w
        f /= np.linalg.norm(f)
        v = (f.T @ y)[0]
        indices[i] = int(np.argmax(np.abs(v)))
        Amat[:, i] = y[:, indices[i]]
    # noisy reflectance can dip below zero; endmembers must not
    E = np.maximum(Y[:, indices].T, 0.0)
    if np.any(np.linalg.norm(E, axis=1) == 0):
        raise DegenerateInputError("vca: selected an all-zero pixel")
    return VcaResult(EndmemberSet(E), indices, float(snr), bool(projective))


def project_simplex(v):
    """Euclidean projection of each row of ``v`` onto the probability simplex."""
    v = np.atleast_2d(v)
    u = -np.sort(-v, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    k = np.arange(1, v.shape[1] + 1)
    cond = u - css / k > 0
    rho = cond.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(v.shape[0]), rho] / (rho + 1)
    return np.maximum(v - theta[:, None], 0.0)


def _projected_ls(M, y):
    p = M.shape[1]
    # sum-to-one least squares through the KKT system, then simplex projection
    K = np.zeros((p + 1, p + 1))
    K[:p, :p] = M.T @ M
    K[:p, p] = K[p, :p] = 1.0
    rhs = np.concatenate([M.T @ y, [1.0]])
    x = np.linalg.lstsq(K, rhs, rcond=None)[0][:p]
    return project_simplex(x[None])[0]


def fcls(Y, endmembers, delta=FCLS_DELTA, return_flags=False):
    """Per-pixel abundances minimizing ||y - A^T x|| with x >= 0, sum x = 1.

    The sum-to-one constraint is enforced softly by appending a row of
    ``delta`` to the system before nonnegative least squares; the result is
    then renormalized exactly. Pixels where NNLS fails fall back to
    projected least squares and are flagged.
    """
    A = endmembers.signatures if isinstance(endmembers, EndmemberSet) else np.asarray(endmembers)
    Y = np.asarray(Y, dtype=float)
    p, L = A.shape
    if Y.shape[0] != L:
        raise ParameterError(f"fcls: data has {Y.shape[0]} bands, endmembers {L}")
    if np.linalg.matrix_rank(A) < p:
        raise DegenerateInputError("fcls: endmember matrix is rank deficient")
    M = np.vstack([A.T, np.full((1, p), delta)])
    n = Y.shape[1]
    X = np.empty((p, n))
    flags = np.zeros(n, dtype=bool)
    rhs = np.empty(L + 1)
    rhs[L] = delta
    for j in range(n):
        rhs[:L] = Y[:, j]
        try:
            X[:, j] = nnls(M, rhs, maxiter=3 * p)[0]
        except RuntimeError:
            flags[j] = True
            X[:, j] = _projected_ls(A.T, Y[:, j])
    s = X.sum(axis=0)
    bad = s <= 0
    if bad.any():
        flags |= bad
        for j in np.flatnonzero(bad):
            X[:, j] = _projected_ls(A.T, Y[:, j])
        s = X.sum(axis=0)
    X /= s
    if flags.any():
        log.warning("fcls: %d pixel(s) fell back to projected least squares", int(flags.sum()))
    return (X, flags) if return_flags else X
