"""Balancing operator, balanced covariance and projection, separated rank."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IllConditioned, InvalidInput, NoAdmissibleRank, RankDeficient
from .spectral import as_finite_matrix

EIG_FLOOR = 1e-12


def _sym(M):
    return 0.5 * (M + M.T)


def _spd_eig(M, name, eig_floor):
    M = as_finite_matrix(M, name)
    if M.shape[0] != M.shape[1]:
        raise InvalidInput(f"{name} must be square, got {M.shape}")
    if not np.allclose(M, M.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(M).max(initial=0.0))):
        raise InvalidInput(f"{name} is not symmetric")
    w, V = np.linalg.eigh(_sym(M))
    if w[0] <= eig_floor:
        raise IllConditioned(f"{name} has eigenvalue {w[0]:.3e} <= floor {eig_floor:.1e}",
                             detail={"eigenvalues": w.tolist()})
    return w, V


def _apply(w, V, fn):
    return _sym((V * fn(w)) @ V.T)


def spd_power(M, power, eig_floor=EIG_FLOOR, name="M"):
    """M**power for SPD M via its symmetric eigendecomposition."""
    w, V = _spd_eig(M, name, eig_floor)
    return _apply(w, V, lambda x: x ** power)


@dataclass(frozen=True)
class BalanceResult:
    W: np.ndarray
    cov_bal: np.ndarray
    provenance: dict


def _balance_svd(X, Y, eig_floor):
    """SVD of X^{1/2} Y^{1/2}; working on the product avoids squaring its condition number."""
    wx, Vx = _spd_eig(X, "X", eig_floor)
    wy, Vy = _spd_eig(Y, "Y", eig_floor)
    Xh = _apply(wx, Vx, np.sqrt)
    Yh = _apply(wy, Vy, np.sqrt)
    U, S, Vt = np.linalg.svd(Xh @ Yh)
    return Xh, Yh, U, S, Vt.T


def _sqrt_and_inv(W):
    ww, Vw = np.linalg.eigh(W)
    return _apply(ww, Vw, np.sqrt), _apply(ww, Vw, lambda x: x ** -0.5)


def psi_bal(X, Y, eig_floor=EIG_FLOOR) -> BalanceResult:
    """The SPD W with X = W Y W, i.e. Psi_bal(Y; X)."""
    Xh, Yh, U, S, V = _balance_svd(X, Y, eig_floor)
    Bf = Xh @ U / np.sqrt(S)
    W = _sym(Bf @ Bf.T)
    Wh, _ = _sqrt_and_inv(W)
    cov = _sym(Wh @ _sym(np.asarray(Y, dtype=float)) @ Wh)
    return BalanceResult(W=W, cov_bal=cov, provenance={"X": Xh.shape, "Y": Yh.shape})


def cov_bal(X, Y, eig_floor=EIG_FLOOR) -> np.ndarray:
    return psi_bal(X, Y, eig_floor).cov_bal


@dataclass(frozen=True)
class BalancedProjection:
    r: int
    Q: np.ndarray
    P: np.ndarray
    W: np.ndarray
    eigvals: np.ndarray  # CovBal spectrum, nonincreasing
    left: np.ndarray  # columns a_i = W^{-1/2} u_i
    right: np.ndarray  # columns b_i = W^{1/2} u_i, so Q = left @ right.T
    non_unique: bool


def proj_bal(r: int, X, Y, eig_floor=EIG_FLOOR, tie_tol=1e-12) -> BalancedProjection:
    """Q = W^{-1/2} P_r W^{1/2} for the top-r eigenspace of CovBal.

    With X^{1/2} Y^{1/2} = U S V^T, the pairs a_i = Y^{1/2} v_i / sqrt(s_i) and
    b_i = X^{1/2} u_i / sqrt(s_i) satisfy X a_i = s_i b_i, Y b_i = s_i a_i, a_i^T b_j = [i = j].
    """
    Xh, Yh, U, S, V = _balance_svd(X, Y, eig_floor)
    p = len(S)
    if not 1 <= r <= p:
        raise InvalidInput(f"rank r={r} outside [1, {p}]")
    root = np.sqrt(S[:r])
    left = Yh @ V[:, :r] / root
    right = Xh @ U[:, :r] / root
    Bf = Xh @ U / np.sqrt(S)
    W = _sym(Bf @ Bf.T)
    Wh, Wmh = _sqrt_and_inv(W)
    Ur = Wh @ left
    Ur, _ = np.linalg.qr(Ur)
    tied = r < p and S[r - 1] - S[r] <= tie_tol * max(S[0], 1.0)
    return BalancedProjection(r=r, Q=left @ right.T, P=_sym(Ur @ Ur.T), W=W, eigvals=S.copy(),
                              left=left, right=right, non_unique=bool(tied))


def sep_rank_from_sigmas(sigmas, r0: int, sigma0: float) -> int:
    s = np.asarray(sigmas, dtype=float)
    p = len(s)
    if not 1 <= r0 <= p:
        raise InvalidInput(f"r0={r0} outside [1, {p}]")
    if not sigma0 > 0:
        raise InvalidInput("sigma0 must be positive")
    ext = np.append(s, 0.0)
    for r in range(r0, 0, -1):
        sr = ext[r - 1]
        if sr >= sigma0 and sr - ext[r] >= sr / r0:
            return r
    raise NoAdmissibleRank(f"no r in [1, {r0}] has sigma_r >= {sigma0:g} and a separated gap",
                           detail={"spectrum": s.tolist(), "r0": r0, "sigma0": sigma0,
                                   "hint": "lower sigma_cut"})


def sep_rank(Sigma, r0: int, sigma0: float) -> int:
    Sigma = as_finite_matrix(Sigma, "Sigma")
    s = np.clip(np.linalg.eigvalsh(_sym(Sigma))[::-1], 0.0, None)
    return sep_rank_from_sigmas(s, r0, sigma0)


def balanced_factorization(M, d: int, rtol=1e-8):
    """A (n x d), B (m x d) with M = A B^T and A^T A = B^T B."""
    M = as_finite_matrix(M)
    n, m = M.shape
    if not 1 <= d <= min(n, m):
        raise InvalidInput(f"d={d} outside [1, {min(n, m)}]")
    U, S, Vt = np.linalg.svd(M, full_matrices=False)
    if d < len(S) and S[d] > rtol * max(S[0], 1e-300):
        raise RankDeficient(f"d={d} below rank of M (sigma_{d + 1} = {S[d]:.3e})")
    root = np.sqrt(S[:d])
    return U[:, :d] * root, Vt[:d].T * root


def weighted_cov(F, weights):
    F = np.asarray(F, dtype=float)
    return _sym(F.T @ (F * np.asarray(weights, dtype=float)[:, None]))


def balance_embeddings(F, G, px, qy, eig_floor=EIG_FLOOR):
    """Reparameterize (F, G) so the px- and qy-weighted covariances coincide.

    Returns (F T^{-1}, G T, T) with T SPD; inner products are unchanged.
    """
    F = as_finite_matrix(F, "F")
    G = as_finite_matrix(G, "G")
    if F.shape[1] != G.shape[1]:
        raise InvalidInput("F and G must share the embedding dimension")
    SF, SG = weighted_cov(F, px), weighted_cov(G, qy)
    for name, S in (("F", SF), ("G", SG)):
        lo = np.linalg.eigvalsh(S)[0]
        if lo <= eig_floor:
            raise RankDeficient(f"covariance of {name} is rank deficient (lambda_min = {lo:.3e})")
    W = psi_bal(SF, SG, eig_floor).W
    ww, Vw = np.linalg.eigh(W)
    T = _apply(ww, Vw, np.sqrt)
    Tinv = _apply(ww, Vw, lambda x: x ** -0.5)
    return F @ Tinv, G @ T, T
