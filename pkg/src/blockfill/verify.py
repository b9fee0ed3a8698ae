"""Property suites behind the acceptance criteria; each returns a JSON-ready dict."""
from __future__ import annotations

import math
import time

import numpy as np

from .balancing import cov_bal, psi_bal, spd_power
from .datagen import (SELECTORS, compute_kappas, make_example, make_instance_exp,
                      make_instance_poly, make_instance_random)
from .embeddings import EmbeddingPair
from .erm import ErmConfig, Objective, SolverConfig, erm_double_stage, fit_factorized
from .errors import BlockfillError
from .partition import partition_report, well_tempered_partition
from .risk import coverage_inequalities, risk
from .rng import stream
from .spectral import SpectralSummary, svd_perturbation_check, tail_norm

E = math.e


def _rel_err(A, B):
    A, B = np.asarray(A, dtype=float), np.asarray(B, dtype=float)
    return float(np.linalg.norm(A - B) / max(np.linalg.norm(B), 1e-300))


# svd perturbation

def _perturbation_trial(g):
    n1, n2 = (int(v) for v in g.integers(2, 51, size=2))
    p = min(n1, n2)
    rank = int(g.integers(1, p + 1))
    k = int(g.integers(1, rank + 1))
    kind = ["geometric", "clustered", "flat-tail"][int(g.integers(3))]
    if kind == "geometric":
        s = np.sort(np.exp(g.uniform(-4, 1, size=rank)))[::-1]
    elif kind == "clustered":
        s = np.concatenate([np.full(k, 2.0), np.full(rank - k, 2.0 * g.uniform(0.05, 0.95))])
        s *= 1 + 1e-3 * np.sort(g.uniform(size=rank))[::-1]
    else:
        s = np.concatenate([np.sort(g.uniform(1, 3, size=k))[::-1], np.full(rank - k, g.uniform(0.1, 0.99))])
    s = np.sort(s)[::-1]
    U, _ = np.linalg.qr(g.standard_normal((n1, rank)))
    V, _ = np.linalg.qr(g.standard_normal((n2, rank)))
    Mstar = (U * s) @ V.T
    spec = SpectralSummary.from_sigmas(np.append(s, np.zeros(p - rank)))
    budget = 0.5 * spec.sigma(k) * spec.delta(k)
    if g.uniform() < 0.5:
        E_ = g.standard_normal((n1, n2))
    else:
        # aim the perturbation at the k / k+1 boundary
        u = np.linalg.qr(g.standard_normal((n1, 2)))[0]
        v = np.linalg.qr(g.standard_normal((n2, 2)))[0]
        basis_u = np.column_stack([U[:, k - 1], U[:, k] if k < rank else u[:, 0]])
        basis_v = np.column_stack([V[:, k - 1], V[:, k] if k < rank else v[:, 0]])
        E_ = basis_u @ g.standard_normal((2, 2)) @ basis_v.T
    E_ *= g.uniform(0.05, 1.0) * budget / np.linalg.norm(E_, 2)
    return Mstar, Mstar + E_, k


def criterion_1(seed=0, trials=500, eta=0.5):
    """Relative-gap SVD perturbation bound under an enforced precondition."""
    g = stream(seed, "criterion-1")
    held = tried = 0
    worst = 0.0
    for _ in range(trials):
        while True:
            Mstar, Mhat, k = _perturbation_trial(g)
            try:
                chk = svd_perturbation_check(Mstar, Mhat, k, eta)
            except BlockfillError:
                continue
            if chk.precondition_met:
                break
        tried += 1
        held += chk.holds
        worst = max(worst, chk.lhs / chk.rhs if chk.rhs > 0 else 0.0)
    return {"passed": held == trials, "detail": {"trials": tried, "held": held, "eta": eta,
                                                 "max_lhs_over_rhs": worst}}


# balancing

def _random_spd(g, p):
    A = g.standard_normal((p, p))
    w = np.exp(g.uniform(-2, 2, size=p))
    Q = np.linalg.qr(A)[0]
    return (Q * w) @ Q.T


def criterion_2(seed=0, trials=200, tol=1e-7):
    g = stream(seed, "criterion-2")
    worst = {"wyw": 0.0, "self": 0.0, "inverse": 0.0, "scaling": 0.0, "symmetry": 0.0, "spectrum": 0.0}
    for _ in range(trials):
        p = int(g.integers(1, 21))
        X, Y = _random_spd(g, p), _random_spd(g, p)
        alpha = float(np.exp(g.uniform(-2, 2)))
        W = psi_bal(X, Y).W
        worst["wyw"] = max(worst["wyw"], _rel_err(W @ Y @ W, X))
        worst["self"] = max(worst["self"], _rel_err(psi_bal(X, X).W, np.eye(p)))
        worst["inverse"] = max(worst["inverse"], _rel_err(psi_bal(Y, X).W, np.linalg.inv(W)))
        worst["scaling"] = max(worst["scaling"], _rel_err(psi_bal(alpha * X, Y).W, math.sqrt(alpha) * W),
                               _rel_err(psi_bal(X, alpha * Y).W, W / math.sqrt(alpha)))
        C = cov_bal(X, Y)
        worst["symmetry"] = max(worst["symmetry"], _rel_err(C, C.T), _rel_err(cov_bal(Y, X), C))
        lam = np.sort(np.linalg.eigvalsh(C))[::-1]
        sv = np.linalg.svd(spd_power(X, 0.5) @ spd_power(Y, 0.5), compute_uv=False)
        worst["spectrum"] = max(worst["spectrum"], _rel_err(lam, sv))
    return {"passed": all(v <= tol for v in worst.values()),
            "detail": {"trials": trials, "tol": tol, "max_rel_err": worst}}


# partitions

def _random_spectrum(g):
    length = int(g.integers(2, 31))
    kind = ["geometric", "polynomial", "mixed"][int(g.integers(3))]
    i = np.arange(1, length + 1, dtype=float)
    if kind == "geometric":
        s = np.exp(-g.uniform(0.05, 2.0) * i)
    elif kind == "polynomial":
        s = i ** -g.uniform(0.2, 4.0)
    else:
        s = np.exp(np.cumsum(-g.exponential(1.0, size=length) * (g.uniform(size=length) < 0.5)))
    return np.sort(s * np.exp(g.uniform(-3, 3)))[::-1]


def criterion_3(seed=0, spectra=100, per_spectrum=3):
    g = stream(seed, "criterion-3")
    cases = failures = 0
    failed = {}
    for _ in range(spectra):
        sig = _random_spectrum(g)
        for _ in range(per_spectrum):
            s = int(g.integers(2, len(sig) + 1))
            lo, hi = math.log(sig[s - 1]), math.log(sig[0])
            # interior of [sigma_s, sigma_1]; see ell_bound for the integer-log edge
            sigma = float(np.exp(lo + (hi - lo) * g.uniform(1e-6, 1 - 1e-6))) if hi > lo else float(sig[0])
            cases += 1
            rep = partition_report(well_tempered_partition(sig, s, sigma), sig)
            bad = [k for k, v in rep.items() if not v]
            if bad:
                failures += 1
                for k in bad:
                    failed[k] = failed.get(k, 0) + 1
    return {"passed": failures == 0,
            "detail": {"cases": cases, "failures": failures, "failed_conditions": failed}}


# risk identities

def _risk_oracle(pair, inst, selector):
    """Plain double sum over the support."""
    D = inst.density(selector)
    total = 0.0
    xs, ys = np.nonzero(D)
    for x, y in zip(xs, ys):
        diff = float(pair.F[x] @ pair.G[y]) - float(inst.Fstar[x] @ inst.Gstar[y])
        total += D[x, y] * diff * diff
    return total


def criterion_4(seed=0, instances=50):
    g = stream(seed, "criterion-4")
    worst_fast = worst_tail = 0.0
    for t in range(instances):
        n, m = (int(v) for v in g.integers(4, 51, size=2))
        n1, m1 = int(g.integers(2, n)), int(g.integers(2, m))
        d = int(g.integers(1, min(n1, m1) + 1))
        inst = make_instance_random(n, m, n1, m1, d, seed=int(g.integers(2 ** 31)))
        r = int(g.integers(1, min(n, m) + 1))
        pair = EmbeddingPair(g.standard_normal((n, r)), g.standard_normal((m, r)))
        for sel in SELECTORS:
            fast, slow = risk(pair, inst, sel), _risk_oracle(pair, inst, sel)
            worst_fast = max(worst_fast, abs(fast - slow) / max(1.0, abs(slow)))
        spec = SpectralSummary.from_sigmas(inst.sigma_star())
        for k in range(1, d + 1):
            got = risk(inst.truncated_truth(k), inst, "11")
            worst_tail = max(worst_tail, abs(got - tail_norm(spec, k, 2)))
    return {"passed": worst_fast <= 1e-10 and worst_tail <= 1e-8,
            "detail": {"instances": instances, "max_fast_vs_oracle": worst_fast,
                       "max_tail_identity_err": worst_tail}}


# illustrative examples

def criterion_5(seed=0, n=20, restarts=5):
    inst, _ = make_example(1, n=n)
    obj = Objective.population(inst.density("train"), inst.H)
    fit = fit_factorized(obj, 1, SolverConfig(restarts=restarts, seed=seed))
    r_test = risk(fit.pair, inst, "test")
    return {"passed": r_test <= 1e-6, "detail": {"r_test": r_test, "train_loss": fit.loss}}


def criterion_6(gamma=0.5, expected=0.25, tol=1e-12):
    inst, adv = make_example(2, n=10, gamma=gamma)
    r_train, r_test = risk(adv, inst, "train"), risk(adv, inst, "test")
    k_cov = compute_kappas(inst).kappa_cov
    checks = {"r_train_zero": abs(r_train) <= tol, "r_test_expected": abs(r_test - expected) <= tol,
              "kappa_cov_inf": math.isinf(k_cov)}
    return {"passed": all(checks.values()),
            "detail": {"r_train": r_train, "r_test": r_test, "expected_r_test": expected,
                       "gamma_pow4": gamma ** 4, "kappa_cov": k_cov, "checks": checks}}


def criterion_7(seed=0, mu=1e-6):
    inst, adv = make_example(3, n=10)
    cfg = ErmConfig(p=2, r_cut=2, sigma_cut=0.1, mu=mu, exact=True, solver=SolverConfig(seed=seed))
    pair, trace = erm_double_stage(inst, cfg, stage1_pair=adv)
    r_test, adv_test = risk(pair, inst, "test"), risk(adv, inst, "test")
    checks = {"r_hat_one": trace.r_hat == 1, "distilled": r_test <= 1e-4,
              "adversarial_one": abs(adv_test - 1.0) <= 1e-12}
    return {"passed": all(checks.values()),
            "detail": {"r_hat": trace.r_hat, "r_test": r_test, "adversarial_r_test": adv_test,
                       "checks": checks}}


# coverage inequalities

def criterion_8(seed=0, draws=100, tol=1e-9):
    g = stream(seed, "criterion-8")
    worst = math.inf
    used = 0
    while used < draws:
        n, m = (int(v) for v in g.integers(4, 31, size=2))
        n1, m1 = int(g.integers(1, n)), int(g.integers(1, m))
        d = int(g.integers(1, min(n1, m1) + 1))
        inst = make_instance_random(n, m, n1, m1, d, seed=int(g.integers(2 ** 31)))
        kap = compute_kappas(inst)
        if not (math.isfinite(kap.kappa_trn) and math.isfinite(kap.kappa_tst)):
            continue
        r = int(g.integers(1, min(n, m) + 1))
        pair = EmbeddingPair(g.standard_normal((n, r)), g.standard_normal((m, r)))
        rep = coverage_inequalities(pair, inst, kap)
        scale = max(1.0, max(rep["risks"].values()))
        worst = min(worst, min(v / scale for v in rep["checks"].values()))
        used += 1
    return {"passed": worst >= -tol, "detail": {"draws": used, "min_relative_slack": worst}}


# decay bounds

def _decay_checks(kind, gamma, C, sig):
    spec = SpectralSummary.from_sigmas(sig)
    out = {}
    for r in range(1, len(spec) + 1):
        sr = spec.sigma(r)
        if sr <= 0:
            continue
        t1, t2 = tail_norm(spec, r, 1), tail_norm(spec, r, 2)
        if kind == "poly":
            b1 = C * (1 + 1 / gamma) * (r + 1) ** -gamma
            b2 = 2 * C ** 2 * (r + 1) ** (-1 - 2 * gamma)
            b3 = 3 * C ** 2 * r ** (-2 * gamma)
        else:
            b1 = C * (1 + 1 / gamma) * math.exp(-gamma * (r + 1))
            b2 = C ** 2 * (1 + 1 / gamma) * math.exp(-2 * gamma * (r + 1))
            b3 = C ** 2 * (1 + 1 / gamma + r) ** 2 * math.exp(-2 * gamma * r)
        slack = 1 + 1e-9
        out[r] = {"tail1": t1 <= b1 * slack, "tail2": t2 <= b2 * slack, "ratio": t2 ** 2 / sr ** 2 <= b3 * slack,
                  "bounded_decay": sr <= (C * r ** -(1 + gamma) if kind == "poly" else C * math.exp(-gamma * r)) * slack}
    return out


def criterion_9(seed=0):
    cases = [("poly", g_) for g_ in (0.5, 1.0, 3.0)] + [("exp", g_) for g_ in (0.3, math.log(2))]
    detail = {}
    ok = True
    for kind, gamma in cases:
        for C in (1.0, 2.5):
            make = make_instance_poly if kind == "poly" else make_instance_exp
            inst = make(40, 40, 24, 24, 20, gamma, C=C, seed=seed)
            res = _decay_checks(kind, gamma, C, inst.sigma_star())
            fails = sorted({k for row in res.values() for k, v in row.items() if not v})
            ok &= not fails
            detail[f"{kind}:gamma={gamma:.6g}:C={C:g}"] = {"ranks_checked": len(res), "failed": fails}
    return {"passed": bool(ok), "detail": detail}


# double-stage trend

C10_GRID = (1, 2, 4, 8)


def criterion_10(seeds=5, n=60, d=12, gamma=3.0, sigma_cut=1e-4, mu=1e-8):
    table = {}
    for seed in range(seeds):
        inst = make_instance_poly(n, n, n // 2, n // 2, d, gamma, seed=seed)
        row = {}
        for rc in C10_GRID:
            cfg = ErmConfig(p=min(rc * rc, 32), r_cut=rc, sigma_cut=sigma_cut, mu=mu, exact=True,
                            solver=SolverConfig(seed=seed))
            pair, trace = erm_double_stage(inst, cfg)
            row[str(rc)] = {"r_test": risk(pair, inst, "test"), "r_hat": trace.r_hat}
        table[str(seed)] = row
    med = {str(rc): float(np.median([table[s][str(rc)]["r_test"] for s in table])) for rc in C10_GRID}
    vals = [med[str(rc)] for rc in C10_GRID]
    mono = all(b <= a for a, b in zip(vals, vals[1:]))
    factor = vals[-1] <= vals[0] / 5
    return {"passed": mono and factor,
            "detail": {"median_r_test": med, "nonincreasing": mono, "factor_five": factor, "runs": table}}


SUITES = {f"criterion_{i}": fn for i, fn in enumerate(
    [None, criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
     criterion_6, criterion_7, criterion_8, criterion_9, criterion_10]) if fn is not None}


def run_suite(name):
    """Run one suite; returns (result, seconds). Timing is kept out of the result."""
    if name not in SUITES:
        raise KeyError(name)
    t0 = time.perf_counter()
    res = SUITES[name]()
    return res, time.perf_counter() - t0


def resolve_suites(spec: str):
    if spec == "all":
        return list(SUITES)
    names = []
    for part in spec.split(","):
        part = part.strip()
        key = part if part.startswith("criterion_") else f"criterion_{part}"
        if key not in SUITES:
            raise KeyError(part)
        names.append(key)
    return names
