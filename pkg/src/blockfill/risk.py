"""Exact risks, factor-recovery errors, conditioning and inequality checkers."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.linalg import expm, expm_frechet
from scipy.optimize import minimize

from .balancing import balance_embeddings, weighted_cov
from .datagen import BLOCKS, OBSERVED, GroundTruthInstance, compute_kappas
from .embeddings import EmbeddingPair
from .errors import BlockfillError, InvalidInput
from .spectral import SpectralSummary, orthogonal_procrustes, tail_norm


def _check_dims(pair: EmbeddingPair, inst: GroundTruthInstance):
    if pair.F.shape[0] != inst.n or pair.G.shape[0] != inst.m:
        raise InvalidInput(f"pair rows {pair.F.shape[0]}x{pair.G.shape[0]} do not match "
                           f"instance support {inst.n}x{inst.m}")


def scaled_factor(F, weights):
    """Rows scaled by sqrt of their probabilities, restricted to the support."""
    w = np.asarray(weights, dtype=float)
    keep = w > 0
    return np.asarray(F, dtype=float)[keep] * np.sqrt(w[keep])[:, None]


def block_matrix(F, G, px, qy):
    return scaled_factor(F, px) @ scaled_factor(G, qy).T


def _block_risk(pair, inst, block, target=None):
    px, qy = inst.marginals(block)
    F0, G0 = (inst.Fstar, inst.Gstar) if target is None else target
    diff = block_matrix(pair.F, pair.G, px, qy) - block_matrix(F0, G0, px, qy)
    return float(np.sum(diff * diff))


def _risk_against(pair, inst, dist, target=None):
    return float(sum(w * _block_risk(pair, inst, b, target) for w, b in inst.mixture(dist)))


def risk(pair: EmbeddingPair, inst: GroundTruthInstance, dist: str) -> float:
    """Squared-error risk via the block identity ||M_ij(f, g) - M_ij(f*, g*)||_F^2."""
    _check_dims(pair, inst)
    return _risk_against(pair, inst, dist)


def risk_r(pair, inst, s, dist="11"):
    if not 1 <= s <= inst.d:
        raise InvalidInput(f"s={s} outside [1, {inst.d}]")
    _check_dims(pair, inst)
    t = inst.truncated_truth(s)
    return _risk_against(pair, inst, dist, (t.F, t.G))


def block_risks(pair, inst):
    vals = {b: risk(pair, inst, b) for b in BLOCKS}
    vals["train"] = sum(w * vals[b] for w, b in inst.mixture("train"))
    vals["test"] = sum(w * vals[b] for w, b in inst.mixture("test"))
    return vals


def _star_factors(inst, k):
    A = scaled_factor(inst.Fstar, inst.dx1)
    B = scaled_factor(inst.Gstar, inst.dy1)
    P = inst.top_projection(k)
    return A @ P, B @ P


def _pad(M, width):
    return np.hstack([M, np.zeros((M.shape[0], width - M.shape[1]))]) if M.shape[1] < width else M


@dataclass(frozen=True)
class DeltaErrors:
    delta0: float
    delta1: float
    R: np.ndarray
    k: int


def delta_errors(pair, inst, k) -> DeltaErrors:
    _check_dims(pair, inst)
    if not 1 <= k <= min(pair.r, inst.d):
        raise InvalidInput(f"k={k} outside [1, {min(pair.r, inst.d)}]")
    Fb, Gb, _ = balance_embeddings(pair.F, pair.G, inst.dx1, inst.dy1)
    Ak, Bk = _star_factors(inst, k)
    Ah, Bh = scaled_factor(Fb, inst.dx1), scaled_factor(Gb, inst.dy1)
    width = max(Ak.shape[1], Ah.shape[1])
    Ak, Bk, Ah, Bh = (_pad(M, width) for M in (Ak, Bk, Ah, Bh))
    return _delta_at(Ak, Bk, Ah, Bh, _minimax_rotation(Ak, Bk, Ah, Bh), k)


def _minimax_rotation(Ak, Bk, Ah, Bh, iters=40):
    """Orthogonal R approximately minimizing max(||Ak - Ah R||^2, ||Bk - Bh R||^2).

    Both errors are affine in R. Seeds come from the weighted Procrustes family
    R_t = argmin t e_A + (1 - t) e_B (bisection on e_A - e_B, which is monotone in t);
    the best seed in each component of O(w) is refined by SLSQP on R_0 expm(S), S skew.
    """
    MA, MB = Ah.T @ Ak, Bh.T @ Bk
    cA = np.sum(Ak * Ak) + np.sum(Ah * Ah)
    cB = np.sum(Bk * Bk) + np.sum(Bh * Bh)

    def errs(R):
        return cA - 2 * np.sum(MA * R), cB - 2 * np.sum(MB * R)

    def rot(t):
        a, b = math.sqrt(t), math.sqrt(1 - t)
        return orthogonal_procrustes(np.vstack([a * Ak, b * Bk]), np.vstack([a * Ah, b * Bh]))

    seeds = [rot(0.0), rot(0.5), rot(1.0)]
    lo, hi = 0.0, 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        R = rot(mid)
        ea, eb = errs(R)
        lo, hi = (mid, hi) if ea > eb else (lo, mid)
    seeds += [rot(lo), rot(hi)]
    w = Ak.shape[1]
    if w > 1:
        flip = np.eye(w)
        flip[-1, -1] = -1.0
        seeds += [R @ flip for R in seeds]
    best = min(seeds, key=lambda R: max(errs(R)))
    if w == 1:
        return best
    iu = np.triu_indices(w, 1)

    def skew(x):
        S = np.zeros((w, w))
        S[iu] = x
        return S - S.T

    best_err = max(errs(best))
    for sign in (1.0, -1.0):
        comp = [R for R in seeds if np.sign(np.linalg.det(R)) == sign]
        if not comp:
            continue
        R0 = min(comp, key=lambda R: max(errs(R)))
        NA, NB = R0.T @ MA, R0.T @ MB

        def con(x, c, N):
            return x[-1] - (c - 2 * np.sum(N * expm(skew(x[:-1]))))

        def con_jac(x, N):
            # adjoint of the Frechet derivative of expm at S is the derivative at S^T
            G = expm_frechet(skew(x[:-1]).T, N, compute_expm=False)
            return np.append(2 * (G - G.T)[iu], 1.0)

        cons = [{"type": "ineq", "fun": (lambda x, c=c_, N=N_: con(x, c, N)),
                 "jac": (lambda x, N=N_: con_jac(x, N))} for c_, N_ in ((cA, NA), (cB, NB))]
        x0 = np.append(np.zeros(len(iu[0])), max(errs(R0)))
        res = minimize(lambda x: x[-1], x0, jac=lambda x: np.append(np.zeros(len(x) - 1), 1.0),
                       method="SLSQP", constraints=cons, options={"maxiter": 300, "ftol": 1e-15})
        R = R0 @ expm(skew(res.x[:-1]))
        if max(errs(R)) < best_err:
            best, best_err = R, max(errs(R))
    return best


def _delta_at(Ak, Bk, Ah, Bh, R, k):
    dA, dB = Ak - Ah @ R, Bk - Bh @ R
    d0 = max(np.linalg.norm(dA @ Bk.T) ** 2, np.linalg.norm(Ak @ dB.T) ** 2)
    d1 = max(np.linalg.norm(dA) ** 2, np.linalg.norm(dB) ** 2)
    return DeltaErrors(delta0=float(d0), delta1=float(d1), R=R, k=k)


def delta_errors_at(pair, inst, k, R) -> DeltaErrors:
    """Delta errors for a caller-supplied rotation (square, width max(r, d))."""
    Fb, Gb, _ = balance_embeddings(pair.F, pair.G, inst.dx1, inst.dy1)
    Ak, Bk = _star_factors(inst, k)
    Ah, Bh = scaled_factor(Fb, inst.dx1), scaled_factor(Gb, inst.dy1)
    width = max(Ak.shape[1], Ah.shape[1])
    Ak, Bk, Ah, Bh = (_pad(M, width) for M in (Ak, Bk, Ah, Bh))
    return _delta_at(Ak, Bk, Ah, Bh, np.asarray(R, dtype=float), k)


def sigma_r_embed(pair, inst, r) -> float:
    """r-th singular value of Sigma_F^{1/2} Sigma_G^{1/2} under the top-block marginals."""
    if not 1 <= r <= pair.r:
        raise InvalidInput(f"r={r} outside [1, {pair.r}]")
    SF, SG = weighted_cov(pair.F, inst.dx1), weighted_cov(pair.G, inst.dy1)
    s = np.linalg.svd(_psd_sqrt(SF) @ _psd_sqrt(SG), compute_uv=False)
    return float(s[r - 1])


def _psd_sqrt(S):
    w, V = np.linalg.eigh(S)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


@dataclass(frozen=True)
class Conditioning:
    ok: bool
    degenerate: bool
    sigma_r: float
    sigma_star_r: float
    alpha: float

    def __bool__(self):
        return self.ok


def conditioning_check(pair, inst, r, alpha, zero_tol=1e-12) -> Conditioning:
    if alpha < 1:
        raise InvalidInput("alpha must be >= 1")
    sig_star = inst.sigma_star()
    ss = float(sig_star[r - 1]) if r <= len(sig_star) else 0.0
    degenerate = ss <= zero_tol * max(float(sig_star[0]) if len(sig_star) else 0.0, 1.0)
    sr = sigma_r_embed(pair, inst, r)
    return Conditioning(ok=bool(sr ** 2 >= ss ** 2 / alpha), degenerate=bool(degenerate),
                        sigma_r=sr, sigma_star_r=ss, alpha=float(alpha))


def spectral_event_check(r_hat, sigma_cut, r_cut, star_sigmas) -> dict:
    if not 1 <= r_hat <= r_cut:
        raise InvalidInput("need 1 <= r_hat <= r_cut")
    spec = SpectralSummary.from_sigmas(star_sigmas)
    sr, snext = spec.sigma(r_hat), spec.sigma(r_hat + 1)
    rc = min(r_cut, len(spec))
    t2 = lambda k: tail_norm(spec, min(k, len(spec)), 2)  # noqa: E731
    t1 = lambda k: tail_norm(spec, min(k, len(spec)), 1)  # noqa: E731
    detail = {
        "sigma_lower": sr >= 0.75 * sigma_cut,
        "sigma_next_upper": snext <= 3 * sigma_cut,
        "gap": sr - snext >= sr / (3 * r_cut),
        "tail2": t2(r_hat) <= t2(rc) + 9 * sigma_cut ** 2 * r_cut,
        "tail1": t1(r_hat) ** 2 <= 18 * r_cut ** 2 * sigma_cut ** 2 + 2 * t1(rc) ** 2,
    }
    detail = {k: bool(v) for k, v in detail.items()}
    return {"holds": all(detail.values()), "detail": detail}


def coverage_inequalities(pair, inst, kappas=None) -> dict:
    kap = kappas or compute_kappas(inst)
    r = block_risks(pair, inst)
    out = {"kappa_trn": kap.kappa_trn, "kappa_tst": kap.kappa_tst, "checks": {}}
    if not math.isfinite(kap.kappa_trn):
        out["skipped"] = "kappa_trn is infinite"
        return out
    for b in OBSERVED:
        out["checks"][f"R_{b}<=kappa_trn*R_train"] = kap.kappa_trn * r["train"] - r[b]
    if math.isfinite(kap.kappa_tst):
        out["checks"]["R_test<=kappa_tst*(R_22+3kappa_trn*R_train)"] = (
            kap.kappa_tst * (r["22"] + 3 * kap.kappa_trn * r["train"]) - r["test"])
    else:
        out["skipped"] = "kappa_tst is infinite"
    out["risks"] = r
    return out


def eps_11(pair, inst, r):
    """inf over r' >= r of the excess top-block risk against h*_{r'}."""
    vals = [risk_r(pair, inst, s, "11") for s in range(max(r, 1), inst.d + 1)]
    vals.append(risk(pair, inst, "11"))
    return min(vals)


def bound_report(pair, inst, k, r, alpha=1.0) -> dict:
    sig = inst.sigma_star()
    spec = SpectralSummary.from_sigmas(sig)
    e11 = eps_11(pair, inst, r)
    etr = risk(pair, inst, "train")
    sr, snext = spec.sigma(r), spec.sigma(r + 1)
    rr = min(r, len(spec))
    terms = {
        "top_block": r ** 4 * e11,
        "next_sigma": alpha * r ** 2 * snext ** 2,
        "tail1_sq": tail_norm(spec, rr, 1) ** 2,
    }
    if sr > 0:
        terms["ratio"] = alpha * (r ** 6 * e11 ** 2 + etr ** 2 + tail_norm(spec, rr, 2) ** 2) / sr ** 2
    else:
        terms["ratio"] = None
    return {"k": k, "r": r, "alpha": alpha, "eps2_11": e11, "eps2_trn": etr,
            "sigma_star_r": sr, "terms": terms, "undefined": sr <= 0,
            "r_test": risk(pair, inst, "test")}


@dataclass
class RiskReport:
    r_train: float
    r_11: float
    r_12: float
    r_21: float
    r_22: float
    r_test: float
    k: int
    r: int
    delta0: float | None
    delta1: float | None
    sigma_r_fg: float
    tails: dict
    alpha: float
    alpha_conditioned: bool
    conditioning_degenerate: bool
    good_spectral_event: bool | None
    notes: list

    def as_dict(self):
        return asdict(self)


def risk_report(pair, inst, k, r, alpha=2.0, r_hat=None, sigma_cut=None, r_cut=None) -> RiskReport:
    br = block_risks(pair, inst)
    notes = []
    try:
        de = delta_errors(pair, inst, k)
        d0, d1 = de.delta0, de.delta1
    except BlockfillError as err:  # rank-deficient pair: report without Delta terms
        d0 = d1 = None
        notes.append(f"delta errors unavailable: {err}")
    spec = SpectralSummary.from_sigmas(inst.sigma_star())
    cond = conditioning_check(pair, inst, r, alpha)
    if cond.degenerate:
        notes.append(f"sigma*_{r} = 0; conditioning holds vacuously")
    event = None
    if r_hat is not None and sigma_cut is not None and r_cut is not None:
        event = spectral_event_check(r_hat, sigma_cut, r_cut, spec.sigmas)["holds"]
    kk, rr = min(k, len(spec)), min(r, len(spec))
    tails = {"tail1_k": tail_norm(spec, kk, 1), "tail2_k": tail_norm(spec, kk, 2),
             "tail1_r": tail_norm(spec, rr, 1), "tail2_r": tail_norm(spec, rr, 2)}
    return RiskReport(r_train=br["train"], r_11=br["11"], r_12=br["12"], r_21=br["21"],
                      r_22=br["22"], r_test=br["test"], k=k, r=r, delta0=d0, delta1=d1,
                      sigma_r_fg=cond.sigma_r, tails=tails, alpha=alpha,
                      alpha_conditioned=cond.ok, conditioning_degenerate=cond.degenerate,
                      good_spectral_event=event, notes=notes)
