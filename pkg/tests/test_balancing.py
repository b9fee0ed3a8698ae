import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blockfill.balancing import (balance_embeddings, balanced_factorization, cov_bal, proj_bal,
                                 psi_bal, sep_rank, sep_rank_from_sigmas, spd_power, weighted_cov)
from blockfill.errors import IllConditioned, InvalidInput, NoAdmissibleRank, RankDeficient


def random_spd(rng, p, spread=2.0):
    Q = np.linalg.qr(rng.standard_normal((p, p)))[0]
    return (Q * np.exp(rng.uniform(-spread, spread, size=p))) @ Q.T


def geometric_mean_oracle(X, Y):
    """W = Y^{-1/2} (Y^{1/2} X Y^{1/2})^{1/2} Y^{-1/2}; solves X = W Y W by direct substitution."""
    def power(M, a):
        w, V = np.linalg.eigh(M)
        return (V * w ** a) @ V.T
    Yh, Ymh = power(Y, 0.5), power(Y, -0.5)
    return Ymh @ power(Yh @ X @ Yh, 0.5) @ Ymh


def loewner_min(A):
    return float(np.linalg.eigvalsh(0.5 * (A + A.T))[0])


def test_scalar_case():
    W = psi_bal(np.array([[4.0]]), np.array([[1.0]])).W
    np.testing.assert_allclose(W, [[2.0]])


def test_self_balance_is_identity():
    X = random_spd(np.random.default_rng(0), 4)
    np.testing.assert_allclose(psi_bal(X, X).W, np.eye(4), atol=1e-10)


def test_scaling_halves_w():
    rng = np.random.default_rng(1)
    X, Y = random_spd(rng, 3), random_spd(rng, 3)
    np.testing.assert_allclose(psi_bal(X, 4 * Y).W, psi_bal(X, Y).W / 2, rtol=1e-9)


def test_matches_closed_form_geometric_mean():
    rng = np.random.default_rng(2)
    for p in (1, 2, 5, 9):
        X, Y = random_spd(rng, p), random_spd(rng, p)
        np.testing.assert_allclose(psi_bal(X, Y).W, geometric_mean_oracle(X, Y), rtol=1e-8, atol=1e-10)


def test_cov_bal_two_forms():
    rng = np.random.default_rng(3)
    X, Y = random_spd(rng, 4), random_spd(rng, 4)
    W = psi_bal(X, Y).W
    Wh, Wmh = spd_power(W, 0.5), spd_power(W, -0.5)
    C = cov_bal(X, Y)
    np.testing.assert_allclose(C, Wh @ Y @ Wh, rtol=1e-9)
    np.testing.assert_allclose(C, Wmh @ X @ Wmh, rtol=1e-9)


def test_cov_bal_equal_diagonal():
    S = np.diag([5.0, 2.0, 0.5])
    np.testing.assert_allclose(cov_bal(S, S), S, atol=1e-12)


def test_cov_bal_diag_product():
    C = cov_bal(np.diag([4.0, 1.0]), np.diag([1.0, 4.0]))
    np.testing.assert_allclose(np.linalg.eigvalsh(C), [2.0, 2.0], rtol=1e-12)


def test_rejects_bad_inputs():
    with pytest.raises(IllConditioned):
        psi_bal(np.diag([1.0, 0.0]), np.eye(2))
    with pytest.raises(InvalidInput):
        psi_bal(np.array([[1.0, 2.0], [0.0, 1.0]]), np.eye(2))


@pytest.mark.parametrize("seed", range(20))
def test_spectrum_identity(seed):
    rng = np.random.default_rng(seed)
    p = int(rng.integers(1, 8))
    X, Y = random_spd(rng, p), random_spd(rng, p)
    lam = np.sort(np.linalg.eigvalsh(cov_bal(X, Y)))[::-1]
    sv = np.linalg.svd(spd_power(X, 0.5) @ spd_power(Y, 0.5), compute_uv=False)
    np.testing.assert_allclose(lam, sv, rtol=1e-7)


def test_proj_full_rank_is_identity():
    rng = np.random.default_rng(4)
    X, Y = random_spd(rng, 4), random_spd(rng, 4)
    np.testing.assert_allclose(proj_bal(4, X, Y).Q, np.eye(4), atol=1e-9)


def test_proj_axis_aligned():
    S = np.diag([3.0, 1.0])
    np.testing.assert_allclose(proj_bal(1, S, S).Q, np.diag([1.0, 0.0]), atol=1e-12)


def test_proj_structure():
    rng = np.random.default_rng(5)
    X, Y = random_spd(rng, 5), random_spd(rng, 5)
    pb = proj_bal(2, X, Y)
    Q, P, W = pb.Q, pb.P, pb.W
    assert np.trace(Q) == pytest.approx(2.0, abs=1e-8)
    np.testing.assert_allclose(Q @ Q, Q, atol=1e-7)
    np.testing.assert_allclose(P @ P, P, atol=1e-10)
    np.testing.assert_allclose(P, P.T, atol=1e-12)
    np.testing.assert_allclose(spd_power(W, -0.5) @ P @ spd_power(W, 0.5), Q, atol=1e-8)
    # top-2 eigenvectors of CovBal mapped through W^{-1/2} are fixed by Q
    w, V = np.linalg.eigh(cov_bal(X, Y))
    for v in V[:, -2:].T:
        u = spd_power(W, -0.5) @ v
        np.testing.assert_allclose(Q @ u, u, atol=1e-8)


def enumerate_sep_rank(sig, r0, s0):
    ext = list(sig) + [0.0]
    ok = [r for r in range(1, r0 + 1) if ext[r - 1] >= s0 and ext[r - 1] - ext[r] >= ext[r - 1] / r0]
    return max(ok) if ok else None


def test_sep_rank_examples():
    assert sep_rank(np.diag([3.0, 2, 1, 0.1]), 3, 0.5) == 3
    assert sep_rank(np.eye(2), 2, 0.5) == 2
    with pytest.raises(NoAdmissibleRank) as info:
        sep_rank(np.eye(3), 2, 0.5)
    assert info.value.detail["hint"] == "lower sigma_cut"


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=8), st.data())
def test_sep_rank_matches_enumeration(vals, data):
    sig = sorted(vals, reverse=True)
    r0 = data.draw(st.integers(1, len(sig)))
    s0 = data.draw(st.floats(1e-3, 10))
    want = enumerate_sep_rank(sig, r0, s0)
    if want is None:
        with pytest.raises(NoAdmissibleRank):
            sep_rank_from_sigmas(sig, r0, s0)
    else:
        assert sep_rank_from_sigmas(sig, r0, s0) == want


def test_balanced_factorization_examples():
    A, B = balanced_factorization(np.array([[4.0]]), 1)
    np.testing.assert_allclose(A, [[2.0]])
    np.testing.assert_allclose(B, [[2.0]])
    u, v = np.array([0.6, 0.8]), np.array([0.0, 1.0, 0.0])
    A, B = balanced_factorization(np.outer(u, v), 1)
    sign = np.sign(A[1, 0])
    np.testing.assert_allclose(A[:, 0] * sign, u, atol=1e-12)
    np.testing.assert_allclose(B[:, 0] * sign, v, atol=1e-12)


def test_balanced_factorization_random():
    M = np.random.default_rng(6).standard_normal((6, 4))
    A, B = balanced_factorization(M, 4)
    np.testing.assert_allclose(A @ B.T, M, atol=1e-12)
    np.testing.assert_allclose(A.T @ A, B.T @ B, atol=1e-12)
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(A.T @ A))[::-1],
                               np.linalg.svd(M, compute_uv=False), rtol=1e-10)
    with pytest.raises(RankDeficient):
        balanced_factorization(M, 2)


def test_balance_embeddings_scalar():
    F, G = np.full((3, 1), 2.0), np.full((2, 1), 1.0)
    px, qy = np.full(3, 1 / 3), np.full(2, 0.5)
    Fb, Gb, T = balance_embeddings(F, G, px, qy)
    assert weighted_cov(Fb, px)[0, 0] == pytest.approx(2.0)
    assert weighted_cov(Gb, qy)[0, 0] == pytest.approx(2.0)


def test_balance_embeddings_already_balanced():
    F = np.random.default_rng(7).standard_normal((4, 2))
    p = np.full(4, 0.25)
    Fb, Gb, T = balance_embeddings(F, F.copy(), p, p)
    np.testing.assert_allclose(T, np.eye(2), atol=1e-10)
    np.testing.assert_allclose(Fb, F, atol=1e-10)


def test_balance_embeddings_random():
    rng = np.random.default_rng(8)
    F, G = rng.standard_normal((10, 3)), rng.standard_normal((10, 3))
    px, qy = rng.dirichlet(np.ones(10)), rng.dirichlet(np.ones(10))
    Fb, Gb, T = balance_embeddings(F, G, px, qy)
    np.testing.assert_allclose(Fb @ Gb.T, F @ G.T, atol=1e-10)
    np.testing.assert_allclose(weighted_cov(Fb, px), weighted_cov(Gb, qy), atol=1e-10)
    assert loewner_min(T) > 0 and np.allclose(T, T.T)
    with pytest.raises(RankDeficient):
        balance_embeddings(np.zeros((10, 3)), G, px, qy)


spd_seed = st.integers(0, 2 ** 31)


@settings(max_examples=60, deadline=None)
@given(spd_seed, st.integers(1, 6))
def test_inverse_symmetry(seed, p):
    rng = np.random.default_rng(seed)
    X, Y = random_spd(rng, p), random_spd(rng, p)
    np.testing.assert_allclose(psi_bal(Y, X).W, np.linalg.inv(psi_bal(X, Y).W), rtol=1e-7, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(spd_seed, st.integers(1, 6))
def test_anti_monotone(seed, p):
    rng = np.random.default_rng(seed)
    X, Yp = random_spd(rng, p), random_spd(rng, p)
    Y = Yp + random_spd(rng, p, spread=1.0)
    assert loewner_min(psi_bal(X, Yp).W - psi_bal(X, Y).W) >= -1e-7


@settings(max_examples=60, deadline=None)
@given(spd_seed, st.integers(1, 6))
def test_tau_comparison(seed, p):
    rng = np.random.default_rng(seed)
    X, Y = random_spd(rng, p), random_spd(rng, p)
    # largest tau with Y >= tau X
    Xmh = spd_power(X, -0.5)
    tau = float(np.linalg.eigvalsh(Xmh @ Y @ Xmh)[0])
    W = psi_bal(X, Y).W
    assert loewner_min(tau ** -0.5 * np.eye(p) - W) >= -1e-7 * tau ** -0.5


@settings(max_examples=60, deadline=None)
@given(spd_seed, st.integers(1, 6), st.data())
def test_proj_idempotent(seed, p, data):
    rng = np.random.default_rng(seed)
    X, Y = random_spd(rng, p), random_spd(rng, p)
    r = data.draw(st.integers(1, p))
    Q = proj_bal(r, X, Y).Q
    np.testing.assert_allclose(Q @ Q, Q, atol=1e-7 * max(1.0, np.abs(Q).max()))
    assert np.trace(Q) == pytest.approx(r, abs=1e-7)
