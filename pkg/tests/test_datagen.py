import math

import numpy as np
import pytest

from blockfill.balancing import weighted_cov
from blockfill.datagen import (OBSERVED, GroundTruthInstance, compute_kappas, covariance_domination,
                               make_example, make_instance_exp, make_instance_poly,
                               make_instance_random, make_uniform_blocks, sample_labeled,
                               sample_unlabeled)
from blockfill.errors import InvalidInput
from blockfill.spectral import SpectralSummary, tail_norm


def test_poly_spectrum_targets():
    np.testing.assert_allclose(make_instance_poly(6, 6, 3, 3, 1, 1.0, seed=0).sigma_star(), [1.0])
    inst = make_instance_poly(12, 10, 6, 5, 4, 2.0, seed=3)
    np.testing.assert_allclose(inst.sigma_star(), [1, 2 ** -3, 3 ** -3, 4 ** -3], rtol=1e-10)


def test_exp_spectrum_targets():
    inst = make_instance_exp(10, 10, 5, 5, 3, math.log(2), seed=1)
    np.testing.assert_allclose(inst.sigma_star(), [0.5, 0.25, 0.125], rtol=1e-10)


@pytest.mark.parametrize("gamma", [0.3, 0.7, math.log(2), 1.5])
def test_exp_tail2_bound(gamma):
    inst = make_instance_exp(40, 40, 20, 20, 15, gamma, C=1.7, seed=2)
    spec = SpectralSummary.from_sigmas(inst.sigma_star())
    for r in range(1, 16):
        assert tail_norm(spec, r, 2) <= 1.7 ** 2 * (1 + 1 / gamma) * math.exp(-2 * gamma * (r + 1)) * (1 + 1e-9)


@pytest.mark.parametrize("make", [make_instance_poly, make_instance_exp])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_generated_instances_self_check(make, seed):
    inst = make(30, 25, 15, 12, 6, 1.0, seed=seed)
    assert all(inst.validate().values())
    kap = compute_kappas(inst)
    assert all(math.isfinite(v) for v in (kap.kappa_trn, kap.kappa_tst, kap.kappa_cov, kap.kappa_apx))
    # rows outside block 1 stay within the block-1 row span
    F1 = inst.Fstar[: inst.n1]
    resid = inst.Fstar[inst.n1:] - inst.Fstar[inst.n1:] @ np.linalg.pinv(F1) @ F1
    assert np.abs(resid).max() <= 1e-9


def test_determinism_bytes():
    a = make_instance_exp(20, 20, 10, 10, 5, 0.5, seed=11)
    b = make_instance_exp(20, 20, 10, 10, 5, 0.5, seed=11)
    c = make_instance_exp(20, 20, 10, 10, 5, 0.5, seed=12)
    assert a.Fstar.tobytes() == b.Fstar.tobytes() and a.Gstar.tobytes() == b.Gstar.tobytes()
    assert a.Fstar.tobytes() != c.Fstar.tobytes()


def test_infeasible_dims():
    with pytest.raises(InvalidInput):
        make_instance_poly(10, 10, 10, 5, 2, 1.0)
    with pytest.raises(InvalidInput):
        make_instance_poly(10, 10, 3, 5, 4, 1.0)
    with pytest.raises(InvalidInput):
        make_instance_exp(10, 10, 5, 5, 2, -1.0)


def test_uniform_blocks_half_split():
    u = make_uniform_blocks(10, 10, 5, 5)
    assert u.kappa_trn == pytest.approx(3.0, abs=1e-12)
    assert u.kappa_tst == pytest.approx(0.25, abs=1e-12)
    dens_11 = np.outer(u.dx1, u.dy1)
    ratio = dens_11[:5, :5] / sum(u.train_weights[b] * np.outer(*_marg(u, b))[:5, :5] for b in OBSERVED)
    np.testing.assert_allclose(ratio, 3.0)


def _marg(u, b):
    return (u.dx1 if b[0] == "1" else u.dx2), (u.dy1 if b[1] == "1" else u.dy2)


def test_uniform_blocks_near_full():
    n, m = 9, 7
    u = make_uniform_blocks(n, m, n - 1, m - 1)
    assert u.kappa_tst == pytest.approx((n - 1) * (m - 1) / (n * m), abs=1e-12)
    with pytest.raises(InvalidInput):
        make_uniform_blocks(4, 4, 0, 2)


@pytest.mark.parametrize("n,m,n1,m1", [(10, 10, 5, 5), (12, 9, 8, 6), (20, 30, 15, 21)])
def test_uniform_closed_forms_equal_compute_kappas(n, m, n1, m1):
    inst = make_instance_poly(n, m, n1, m1, 2, 1.0, seed=0)
    u = make_uniform_blocks(n, m, n1, m1)
    kap = compute_kappas(inst)
    a, b = n1 / n, m1 / m
    closed = ((1 - a) * b + (1 - b) * a + a * b) / min((1 - b) * a, (1 - a) * b, a * b)
    assert kap.kappa_trn == pytest.approx(closed, abs=1e-12)
    assert kap.kappa_trn == pytest.approx(u.kappa_trn, abs=1e-12)
    assert kap.kappa_tst == pytest.approx(u.kappa_tst, abs=1e-12)
    if a >= 0.5 and b >= 0.5:
        assert kap.kappa_tst == pytest.approx(a * b, abs=1e-12)


def test_examples_targets():
    inst, adv = make_example(1, n=4)
    assert adv is None
    np.testing.assert_allclose(inst.H, 1.0)
    assert compute_kappas(inst).kappa_cov == pytest.approx(1.0)

    inst, adv = make_example(2, n=4, gamma=0.5)
    upper = np.arange(8) >= 4
    np.testing.assert_allclose(inst.H, 1 + 0.25 * np.outer(upper, upper))
    np.testing.assert_allclose(adv.predict(), 1.0)
    assert math.isinf(compute_kappas(inst).kappa_cov)

    inst, adv = make_example(3, n=4)
    np.testing.assert_allclose(adv.predict(), 1 + np.outer(upper, upper))
    np.testing.assert_allclose(inst.H, 1.0)
    with pytest.raises(InvalidInput):
        make_example(4)


def test_covariance_domination_cases():
    assert covariance_domination(np.diag([2.0, 1.0]), np.eye(2)) == pytest.approx(2.0)
    assert math.isinf(covariance_domination(np.eye(2), np.diag([1.0, 0.0])))
    assert covariance_domination(np.diag([3.0, 0.0]), np.diag([1.0, 0.0])) == pytest.approx(3.0)


def test_kappa_apx_brute_force():
    inst = make_instance_random(8, 7, 4, 3, 3, seed=5)
    kap = compute_kappas(inst)
    want = []
    for k in range(1, 4):
        P = inst.top_projection(k)
        diff = (inst.Fstar @ P @ inst.Gstar.T - inst.H) ** 2
        num = float(np.sum(inst.density("train") * diff))
        den = float(np.sum(inst.density("11") * diff))
        want.append(1.0 if num < 1e-20 and den < 1e-20 else num / den)
    np.testing.assert_allclose(kap.apx_ratios, want, rtol=1e-9)


def test_point_mass_samples_identical():
    e = np.zeros(4)
    e[1] = 1.0
    f = np.zeros(4)
    f[3] = 1.0
    inst = GroundTruthInstance(n=4, m=4, n1=2, m1=2, Fstar=np.ones((4, 1)), Gstar=np.ones((4, 1)),
                               dx1=e, dx2=f, dy1=e.copy(), dy2=f.copy(),
                               train_weights={"11": 1.0, "12": 0.0, "21": 0.0},
                               test_weights={"22": 1.0}, B=1.0)
    s = sample_labeled(inst, "train", 50, seed=1)
    assert set(s.x.tolist()) == {1} and set(s.y.tolist()) == {1}


def test_train_block_frequencies_within_binomial_bands():
    inst = make_instance_random(10, 12, 4, 5, 2, seed=9)
    N = 10_000
    s = sample_unlabeled(inst, "train", N, seed=4)
    top_x, top_y = s.x < inst.n1, s.y < inst.m1
    counts = {"11": np.sum(top_x & top_y), "12": np.sum(top_x & ~top_y), "21": np.sum(~top_x & top_y)}
    assert sum(counts.values()) == N
    for b, w in inst.train_weights.items():
        sd = math.sqrt(N * w * (1 - w))
        assert abs(counts[b] - N * w) <= 3 * sd + 1


def test_labels_bounded_and_deterministic():
    inst = make_instance_poly(20, 20, 10, 10, 4, 1.0, seed=0)
    a = sample_labeled(inst, "test", 500, seed=3)
    b = sample_labeled(inst, "test", 500, seed=3)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.z, b.z)
    assert np.all(np.abs(a.z) <= inst.B ** 2 + 1e-12)
    noisy = sample_labeled(inst, "train", 500, seed=3, noise=5 * inst.B ** 2)
    assert np.all(np.abs(noisy.z) <= inst.B ** 2)
    with pytest.raises(InvalidInput):
        sample_labeled(inst, "bogus", 5, seed=0)
    with pytest.raises(InvalidInput):
        sample_labeled(inst, "train", 0, seed=0)


def test_balanced_basis_invariant():
    inst = make_instance_random(15, 12, 7, 6, 4, seed=2)
    np.testing.assert_allclose(weighted_cov(inst.Fstar, inst.dx1), weighted_cov(inst.Gstar, inst.dy1),
                               atol=1e-7)
