"""SVD utilities, relative gaps, tails and the relative-gap perturbation verifier."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InapplicableTheorem, InvalidInput

REL_TOL = 1e-8
ABS_TOL = 1e-10


def as_finite_matrix(M, name="M"):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise InvalidInput(f"{name} must be 2-dimensional, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidInput(f"{name} has non-finite entries")
    return M


@dataclass(frozen=True)
class SpectralSummary:
    """Singular values with their relative gaps.

    ``rel_gaps[k]`` is delta_k with 1-based k: ``rel_gaps[0] == 1`` by convention,
    ``rel_gaps[k] = 1 - sigmas[k] / sigmas[k-1]`` in 0-based array terms, and the gap
    past the last value compares against zero. Gaps at a zero singular value are nan.
    """

    sigmas: np.ndarray
    rel_gaps: np.ndarray
    dims: tuple

    @classmethod
    def from_sigmas(cls, sigmas, dims=None):
        s = np.asarray(sigmas, dtype=float).ravel()
        if np.any(~np.isfinite(s)) or np.any(s < 0):
            raise InvalidInput("singular values must be finite and nonnegative")
        if np.any(np.diff(s) > 0):
            raise InvalidInput("singular values must be nonincreasing")
        nxt = np.append(s[1:], 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            gaps = np.where(s > 0, 1.0 - nxt / np.where(s > 0, s, 1.0), np.nan)
        rel = np.concatenate([[1.0], gaps])
        return cls(sigmas=s, rel_gaps=rel, dims=tuple(dims) if dims else (len(s), len(s)))

    def __len__(self):
        return len(self.sigmas)

    def sigma(self, i):
        """1-based singular value; sigma_0 = +inf, sigma_i = 0 beyond the end."""
        if i <= 0:
            return np.inf
        return float(self.sigmas[i - 1]) if i <= len(self.sigmas) else 0.0

    def delta(self, k):
        """1-based relative gap with delta_0 = 1."""
        if k == 0:
            return 1.0
        return float(self.rel_gaps[k]) if k <= len(self.sigmas) else np.nan


def summarize(M) -> SpectralSummary:
    M = as_finite_matrix(M)
    return SpectralSummary.from_sigmas(np.linalg.svd(M, compute_uv=False), dims=M.shape)


def _as_summary(obj) -> SpectralSummary:
    return obj if isinstance(obj, SpectralSummary) else SpectralSummary.from_sigmas(obj)


@dataclass(frozen=True)
class TruncatedSvd:
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray
    k: int

    def reconstruct(self):
        return (self.U * self.S) @ self.V.T


def _fix_signs(U, V):
    # largest-magnitude entry of each U column made nonnegative
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs, V * signs


def truncated_svd(M, k: int) -> TruncatedSvd:
    M = as_finite_matrix(M)
    p = min(M.shape)
    if not 1 <= k <= p:
        raise InvalidInput(f"rank k={k} outside [1, {p}]")
    U, S, Vt = np.linalg.svd(M, full_matrices=False)
    U, V = _fix_signs(U[:, :k], Vt[:k].T)
    return TruncatedSvd(U=U, S=S[:k].copy(), V=V, k=k)


def rank_k_approx(M, k: int) -> np.ndarray:
    return truncated_svd(M, k).reconstruct()


def op_norm(M) -> float:
    M = as_finite_matrix(M)
    if M.size == 0:
        return 0.0
    return float(np.linalg.svd(M, compute_uv=False)[0])


def relative_gap(summary, k: int) -> float:
    s = _as_summary(summary)
    if not 1 <= k < len(s):
        raise InvalidInput(f"k={k} outside [1, {len(s) - 1}]")
    if s.sigma(k) <= 0:
        raise InvalidInput(f"relative gap undefined: sigma_{k} = 0")
    return 1.0 - s.sigma(k + 1) / s.sigma(k)


def tail_norm(summary, k: int, q: float = 2) -> float:
    s = _as_summary(summary)
    if not 0 <= k <= len(s):
        raise InvalidInput(f"k={k} outside [0, {len(s)}]")
    if q < 1:
        raise InvalidInput("exponent q must be >= 1")
    return float(np.sum(s.sigmas[k:] ** q))


@dataclass(frozen=True)
class PerturbationCheck:
    lhs: float
    rhs: float
    precondition_met: bool
    holds: bool
    op_error: float
    fro_error: float
    sigma_k: float
    delta_k: float


def svd_perturbation_check(Mstar, Mhat, k: int, eta: float) -> PerturbationCheck:
    """Compare ||Mhat_[k] - Mstar_[k]||_F with 9 ||Mhat - Mstar||_F / (delta_k (1 - eta))."""
    Mstar = as_finite_matrix(Mstar, "Mstar")
    Mhat = as_finite_matrix(Mhat, "Mhat")
    if Mstar.shape != Mhat.shape:
        raise InvalidInput(f"shape mismatch {Mstar.shape} vs {Mhat.shape}")
    if not 0 < eta < 1:
        raise InvalidInput("eta must lie in (0, 1)")
    s = summarize(Mstar)
    sk = s.sigma(k)
    if sk <= 0:
        raise InapplicableTheorem(f"sigma_{k}(Mstar) = 0")
    dk = s.delta(k)
    if not dk > 0:
        raise InapplicableTheorem(f"relative gap delta_{k}(Mstar) = 0")
    E = Mhat - Mstar
    op_err = op_norm(E)
    fro_err = float(np.linalg.norm(E))
    lhs = float(np.linalg.norm(rank_k_approx(Mhat, k) - rank_k_approx(Mstar, k)))
    rhs = 9.0 * fro_err / (dk * (1.0 - eta))
    return PerturbationCheck(
        lhs=lhs,
        rhs=rhs,
        precondition_met=bool(op_err <= eta * sk * dk),
        holds=bool(lhs <= rhs),
        op_error=op_err,
        fro_error=fro_err,
        sigma_k=sk,
        delta_k=dk,
    )


def orthogonal_procrustes(A, Bhat) -> np.ndarray:
    """Orthogonal R minimizing ||A - Bhat R||_F."""
    A = as_finite_matrix(A, "A")
    Bhat = as_finite_matrix(Bhat, "Bhat")
    if A.shape != Bhat.shape:
        raise InvalidInput(f"shape mismatch {A.shape} vs {Bhat.shape}")
    U, _, Vt = np.linalg.svd(Bhat.T @ A)
    return U @ Vt
