import math

import numpy as np
import pytest

from blockfill.balancing import balance_embeddings, weighted_cov
from blockfill.datagen import SELECTORS, compute_kappas, make_example, make_instance_poly, make_instance_random
from blockfill.embeddings import EmbeddingPair
from blockfill.errors import InvalidInput
from blockfill.risk import (block_risks, bound_report, conditioning_check, coverage_inequalities,
                            delta_errors, delta_errors_at, risk, risk_r, risk_report, sigma_r_embed,
                            spectral_event_check)
from blockfill.spectral import SpectralSummary, tail_norm


def double_sum(pred, truth, inst, selector):
    D = inst.density(selector)
    total = 0.0
    for x in range(inst.n):
        for y in range(inst.m):
            if D[x, y]:
                total += D[x, y] * (pred[x, y] - truth[x, y]) ** 2
    return total


@pytest.fixture(scope="module")
def small():
    return make_instance_random(9, 7, 4, 3, 3, seed=4)


def test_truth_has_zero_risk(small):
    for sel in SELECTORS:
        assert risk(small.truth, small, sel) == pytest.approx(0.0, abs=1e-24)


@pytest.mark.parametrize("seed", range(5))
def test_fast_path_matches_double_sum(small, seed):
    rng = np.random.default_rng(seed)
    pair = EmbeddingPair(rng.standard_normal((9, 2)), rng.standard_normal((7, 2)))
    for sel in SELECTORS:
        assert risk(pair, small, sel) == pytest.approx(double_sum(pair.predict(), small.H, small, sel),
                                                       rel=1e-10, abs=1e-14)
    for s in range(1, 4):
        ref = small.truncated_truth(s).predict()
        assert risk_r(pair, small, s, "11") == pytest.approx(double_sum(pair.predict(), ref, small, "11"),
                                                             rel=1e-10)


def test_risk_r_special_cases(small):
    for s in range(1, 4):
        assert risk_r(small.truncated_truth(s), small, s) == pytest.approx(0.0, abs=1e-24)
    pair = EmbeddingPair(np.ones((9, 1)), np.ones((7, 1)))
    assert risk_r(pair, small, 3, "test") == pytest.approx(risk(pair, small, "test"), rel=1e-10)
    with pytest.raises(InvalidInput):
        risk_r(pair, small, 4)


def test_tail_identity(small):
    spec = SpectralSummary.from_sigmas(small.sigma_star())
    for k in range(1, 4):
        assert risk(small.truncated_truth(k), small, "11") == pytest.approx(tail_norm(spec, k, 2), abs=1e-8)


def test_example_two_adversarial_risks():
    inst, adv = make_example(2, n=10, gamma=0.5)
    assert risk(adv, inst, "train") == pytest.approx(0.0, abs=1e-12)
    # h* - h = gamma^2 on the (2,2) block, so the squared error is gamma^4
    assert risk(adv, inst, "test") == pytest.approx(0.5 ** 4, abs=1e-12)


def test_block_risks_mixture(small):
    pair = EmbeddingPair(np.ones((9, 1)), np.ones((7, 1)))
    r = block_risks(pair, small)
    assert r["train"] == pytest.approx(sum(w * r[b] for b, w in small.train_weights.items()))


def test_delta_errors_truth_and_rotation():
    inst = make_instance_poly(12, 12, 6, 6, 3, 1.0, seed=0)
    de = delta_errors(inst.truth, inst, 3)
    assert de.delta0 <= 1e-20 and de.delta1 <= 1e-20
    Q = np.linalg.qr(np.random.default_rng(0).standard_normal((3, 3)))[0]
    de = delta_errors(EmbeddingPair(inst.Fstar @ Q, inst.Gstar @ Q), inst, 3)
    assert de.delta1 <= 1e-10


@pytest.mark.parametrize("seed", range(4))
def test_delta_errors_rotation_beats_grid(seed):
    inst = make_instance_poly(10, 10, 5, 5, 2, 1.0, seed=seed)
    rng = np.random.default_rng(seed)
    pair = EmbeddingPair(inst.Fstar + 0.3 * rng.standard_normal((10, 2)) * [1.0, 2.0],
                         inst.Gstar + 0.3 * rng.standard_normal((10, 2)))
    best = delta_errors(pair, inst, 2)
    for t in np.linspace(0, 2 * np.pi, 360, endpoint=False):
        R = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
        assert best.delta1 <= delta_errors_at(pair, inst, 2, R).delta1 + 1e-12


def test_delta_errors_rotation_beats_random_orthogonal():
    inst = make_instance_poly(14, 14, 7, 7, 4, 1.0, seed=2)
    rng = np.random.default_rng(5)
    pair = EmbeddingPair(inst.Fstar + 0.2 * rng.standard_normal((14, 4)),
                         inst.Gstar + 0.2 * rng.standard_normal((14, 4)))
    best = delta_errors(pair, inst, 4)
    assert np.allclose(best.R @ best.R.T, np.eye(4), atol=1e-10)
    for _ in range(200):
        Q = np.linalg.qr(rng.standard_normal((4, 4)))[0]
        assert best.delta1 <= delta_errors_at(pair, inst, 4, Q).delta1 + 1e-12


def test_sigma_r_embed_cases():
    inst = make_instance_poly(12, 12, 6, 6, 3, 1.0, seed=1)
    sig = inst.sigma_star()
    for r in range(1, 4):
        assert sigma_r_embed(inst.truth, inst, r) == pytest.approx(sig[r - 1], rel=1e-9)
    rng = np.random.default_rng(2)
    F, G = rng.standard_normal((12, 3)), rng.standard_normal((12, 3))
    T = rng.standard_normal((3, 3)) + 3 * np.eye(3)
    a = EmbeddingPair(F, G)
    b = EmbeddingPair(F @ np.linalg.inv(T), G @ T.T)
    for r in range(1, 4):
        assert sigma_r_embed(b, inst, r) == pytest.approx(sigma_r_embed(a, inst, r), rel=1e-8)
    Fb, Gb, _ = balance_embeddings(F, G, inst.dx1, inst.dy1)
    lam = np.sort(np.linalg.eigvalsh(weighted_cov(Fb, inst.dx1)))[::-1]
    assert sigma_r_embed(EmbeddingPair(Fb, Gb), inst, 2) == pytest.approx(lam[1], rel=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_weyl_spectrum_bound(seed):
    inst = make_instance_random(10, 10, 5, 5, 3, seed=seed)
    rng = np.random.default_rng(seed)
    pair = EmbeddingPair(inst.Fstar + 0.2 * rng.standard_normal((10, 3)),
                         inst.Gstar + 0.2 * rng.standard_normal((10, 3)))
    root = math.sqrt(risk(pair, inst, "11"))
    for i in range(1, 4):
        assert abs(sigma_r_embed(pair, inst, i) - inst.sigma_star()[i - 1]) <= root + 1e-12


def test_conditioning_degenerate_flag():
    inst, adv = make_example(3, n=5)
    c = conditioning_check(adv, inst, 2, 1.0)
    assert c.degenerate and c.ok
    with pytest.raises(InvalidInput):
        conditioning_check(adv, inst, 1, 0.5)


def test_spectral_event_detail():
    sig = [1.0, 0.1, 0.01]
    ev = spectral_event_check(1, 0.5, 2, sig)
    assert set(ev["detail"]) == {"sigma_lower", "sigma_next_upper", "gap", "tail2", "tail1"}
    assert ev["holds"]
    assert not spectral_event_check(1, 2.0, 2, sig)["detail"]["sigma_lower"]
    with pytest.raises(InvalidInput):
        spectral_event_check(3, 0.5, 2, sig)


def test_coverage_truth_and_uniform_constants():
    inst = make_instance_poly(10, 10, 5, 5, 2, 1.0, seed=0)
    rep = coverage_inequalities(inst.truth, inst)
    assert rep["kappa_trn"] == pytest.approx(3.0) and rep["kappa_tst"] == pytest.approx(0.25)
    assert all(abs(v) <= 1e-20 for v in rep["checks"].values())


@pytest.mark.parametrize("seed", range(10))
def test_coverage_random_pairs(seed):
    inst = make_instance_random(12, 10, 6, 4, 3, seed=seed)
    rng = np.random.default_rng(seed)
    pair = EmbeddingPair(rng.standard_normal((12, 2)), rng.standard_normal((10, 2)))
    rep = coverage_inequalities(pair, inst, compute_kappas(inst))
    assert len(rep["checks"]) == 4
    assert all(v >= -1e-9 for v in rep["checks"].values())


def test_bound_report_terms():
    inst = make_instance_poly(12, 12, 6, 6, 3, 1.0, seed=0)
    rep = bound_report(inst.truth, inst, 2, 2)
    assert set(rep["terms"]) == {"top_block", "next_sigma", "tail1_sq", "ratio"}
    assert rep["eps2_11"] == pytest.approx(0.0, abs=1e-20)


def test_risk_report_handles_rank_deficient_pair():
    inst, adv = make_example(3, n=5)
    rep = risk_report(adv, inst, 1, 1)
    assert rep.delta0 is None and rep.notes
    assert rep.r_test == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(InvalidInput):
        risk(EmbeddingPair(np.ones((3, 1)), np.ones((3, 1))), inst, "train")
