"""Finite-support ground-truth instances, coverage constants and sampling."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .balancing import balance_embeddings, weighted_cov
from .embeddings import EmbeddingPair
from .errors import InvalidInput
from .rng import stream

OBSERVED = ("11", "12", "21")
BLOCKS = ("11", "12", "21", "22")
SELECTORS = ("train", "test") + BLOCKS


@dataclass
class GroundTruthInstance:
    n: int
    m: int
    n1: int
    m1: int
    Fstar: np.ndarray
    Gstar: np.ndarray
    dx1: np.ndarray
    dx2: np.ndarray
    dy1: np.ndarray
    dy2: np.ndarray
    train_weights: dict  # over OBSERVED
    test_weights: dict  # over BLOCKS
    B: float
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def d(self):
        return self.Fstar.shape[1]

    @property
    def H(self):
        return self.Fstar @ self.Gstar.T

    @property
    def truth(self):
        return EmbeddingPair(self.Fstar, self.Gstar)

    def marginals(self, block):
        px = self.dx1 if block[0] == "1" else self.dx2
        qy = self.dy1 if block[1] == "1" else self.dy2
        return px, qy

    def mixture(self, selector):
        """[(weight, block)] with positive weights; a block name is a point mixture."""
        if selector in BLOCKS:
            return [(1.0, selector)]
        if selector == "train":
            w = self.train_weights
        elif selector == "test":
            w = self.test_weights
        else:
            raise InvalidInput(f"unknown distribution selector {selector!r}; expected one of {SELECTORS}")
        return [(float(w[b]), b) for b in BLOCKS if w.get(b, 0.0) > 0]

    def density(self, selector):
        out = np.zeros((self.n, self.m))
        for w, b in self.mixture(selector):
            px, qy = self.marginals(b)
            out += w * np.outer(px, qy)
        return out

    def expect(self, grid, selector):
        """E_D[grid(x, y)] via block marginals."""
        return float(sum(w * self.marginals(b)[0] @ grid @ self.marginals(b)[1]
                         for w, b in self.mixture(selector)))

    def sigma_star(self):
        """Eigenvalues of the top-block covariance, nonincreasing."""
        lam = np.linalg.eigvalsh(weighted_cov(self.Fstar, self.dx1))[::-1]
        return np.clip(lam, 0.0, None)

    def top_projection(self, k):
        """Projection onto the top-k eigenspace of the top-block covariance."""
        lam, V = np.linalg.eigh(weighted_cov(self.Fstar, self.dx1))
        Vk = V[:, ::-1][:, :k]
        return Vk @ Vk.T

    def truncated_truth(self, k):
        P = self.top_projection(k)
        return EmbeddingPair(self.Fstar @ P, self.Gstar @ P)

    def validate(self, tol=1e-7):
        checks = {}
        for name, v, lo, hi in (("dx1", self.dx1, 0, self.n1), ("dx2", self.dx2, self.n1, self.n),
                                ("dy1", self.dy1, 0, self.m1), ("dy2", self.dy2, self.m1, self.m)):
            outside = np.delete(v, np.arange(lo, hi))
            checks[f"{name}_normalized"] = bool(abs(v.sum() - 1) <= 1e-12 and np.all(v >= 0))
            checks[f"{name}_support"] = bool(np.all(outside == 0))
        SF, SG = weighted_cov(self.Fstar, self.dx1), weighted_cov(self.Gstar, self.dy1)
        checks["balanced"] = bool(np.allclose(SF, SG, rtol=tol, atol=tol * max(1.0, np.abs(SF).max())))
        checks["bounded"] = bool(np.abs(self.H).max(initial=0.0) <= self.B ** 2 * (1 + 1e-12))
        checks["train_weights"] = bool(abs(sum(self.train_weights.values()) - 1) <= 1e-12)
        return checks


@dataclass(frozen=True)
class UniformBlocks:
    dx1: np.ndarray
    dx2: np.ndarray
    dy1: np.ndarray
    dy2: np.ndarray
    train_weights: dict
    test_weights: dict
    kappa_trn: float
    kappa_tst: float


def _block_uniform(size, lo, hi):
    v = np.zeros(size)
    v[lo:hi] = 1.0 / (hi - lo)
    return v


def make_uniform_blocks(n, m, n1, m1) -> UniformBlocks:
    """Uniform marginals per block; train uniform on the observed cells; test uniform on the grid."""
    if not (0 < n1 < n and 0 < m1 < m):
        raise InvalidInput(f"degenerate split n1={n1}/{n}, m1={m1}/{m}")
    a, b = n1 / n, m1 / m
    cells = {"11": a * b, "12": a * (1 - b), "21": (1 - a) * b, "22": (1 - a) * (1 - b)}
    total = cells["11"] + cells["12"] + cells["21"]
    train = {k: cells[k] / total for k in OBSERVED}
    return UniformBlocks(
        dx1=_block_uniform(n, 0, n1), dx2=_block_uniform(n, n1, n),
        dy1=_block_uniform(m, 0, m1), dy2=_block_uniform(m, m1, m),
        train_weights=train,
        test_weights=dict(cells),
        kappa_trn=total / min(cells[k] for k in OBSERVED),
        # equals a*b whenever a, b >= 1/2
        kappa_tst=max(cells.values()),
    )


def _orthonormal(rng, rows, cols):
    Q, R = np.linalg.qr(rng.standard_normal((rows, cols)))
    return Q * np.sign(np.where(np.diag(R) == 0, 1.0, np.diag(R)))


def _mix_rows(rng, base, count, width=3):
    """Rows that are signed combinations of base rows with coefficient l1-norm 1."""
    k = min(width, base.shape[0])
    out = np.empty((count, base.shape[1]))
    for i in range(count):
        idx = rng.choice(base.shape[0], size=k, replace=False)
        c = rng.uniform(-1.0, 1.0, size=k)
        c /= max(np.abs(c).sum(), 1e-300)
        out[i] = c @ base[idx]
    return out


def _spectral_instance(n, m, n1, m1, d, lam, seed, meta):
    if not (1 <= n1 < n and 1 <= m1 < m):
        raise InvalidInput(f"infeasible split n1={n1}/{n}, m1={m1}/{m}")
    if not 1 <= d <= min(n1, m1):
        raise InvalidInput(f"d={d} must lie in [1, min(n1, m1)={min(n1, m1)}]")
    root = np.sqrt(lam)
    F1 = math.sqrt(n1) * _orthonormal(stream(seed, "F"), n1, d) * root
    G1 = math.sqrt(m1) * _orthonormal(stream(seed, "G"), m1, d) * root
    F = np.vstack([F1, _mix_rows(stream(seed, "F2"), F1, n - n1)])
    G = np.vstack([G1, _mix_rows(stream(seed, "G2"), G1, m - m1)])
    u = make_uniform_blocks(n, m, n1, m1)
    F, G, _ = balance_embeddings(F, G, u.dx1, u.dy1)
    B = float(max(np.linalg.norm(F, axis=1).max(), np.linalg.norm(G, axis=1).max()))
    return GroundTruthInstance(n=n, m=m, n1=n1, m1=m1, Fstar=F, Gstar=G,
                               dx1=u.dx1, dx2=u.dx2, dy1=u.dy1, dy2=u.dy2,
                               train_weights=u.train_weights, test_weights=u.test_weights,
                               B=B, seed=seed, meta=dict(meta, spectrum=[float(x) for x in lam]))


def _check_decay(gamma, C):
    if not (gamma > 0 and C > 0):
        raise InvalidInput("gamma and C must be positive")


def make_instance_poly(n, m, n1, m1, d, gamma, C=1.0, seed=0) -> GroundTruthInstance:
    _check_decay(gamma, C)
    lam = C * np.arange(1, d + 1, dtype=float) ** -(1 + gamma)
    return _spectral_instance(n, m, n1, m1, d, lam, seed,
                              {"decay": "poly", "gamma": gamma, "C": C})


def make_instance_exp(n, m, n1, m1, d, gamma, C=1.0, seed=0) -> GroundTruthInstance:
    _check_decay(gamma, C)
    lam = C * np.exp(-gamma * np.arange(1, d + 1, dtype=float))
    return _spectral_instance(n, m, n1, m1, d, lam, seed,
                              {"decay": "exp", "gamma": gamma, "C": C})


def make_instance_random(n, m, n1, m1, d, seed=0) -> GroundTruthInstance:
    """Gaussian embeddings under random block marginals and random mixture weights."""
    rng = stream(seed, "random-instance")
    if not (1 <= n1 < n and 1 <= m1 < m and 1 <= d <= min(n1, m1)):
        raise InvalidInput("infeasible dimensions")

    def marginal(size, lo, hi):
        v = np.zeros(size)
        v[lo:hi] = rng.dirichlet(np.ones(hi - lo))
        return v

    dx1, dx2 = marginal(n, 0, n1), marginal(n, n1, n)
    dy1, dy2 = marginal(m, 0, m1), marginal(m, m1, m)
    F0 = rng.standard_normal((n, d)) * rng.uniform(0.2, 1.0, size=d)
    G0 = rng.standard_normal((m, d))
    F, G, _ = balance_embeddings(F0, G0, dx1, dy1)
    w = rng.dirichlet(np.ones(3))
    t = rng.dirichlet(np.ones(4))
    B = float(max(np.linalg.norm(F, axis=1).max(), np.linalg.norm(G, axis=1).max()))
    return GroundTruthInstance(n=n, m=m, n1=n1, m1=m1, Fstar=F, Gstar=G,
                               dx1=dx1, dx2=dx2, dy1=dy1, dy2=dy2,
                               train_weights=dict(zip(OBSERVED, w.tolist())),
                               test_weights=dict(zip(BLOCKS, t.tolist())),
                               B=B, seed=seed, meta={"decay": "random"})


def make_example(example_id: int, n: int = 10, gamma: float = 0.5):
    """Illustrative fixtures on [2n] x [2n]; returns (instance, adversarial pair or None)."""
    if n < 1:
        raise InvalidInput("n must be >= 1")
    N = 2 * n
    upper = (np.arange(N) >= n).astype(float)
    ones = np.ones(N)
    adv = None
    if example_id == 1:
        F = ones[:, None]
    elif example_id == 2:
        F = np.column_stack([ones, gamma * upper])
        adv = EmbeddingPair(np.column_stack([ones, 0 * ones]), np.column_stack([ones, 0 * ones]))
    elif example_id == 3:
        F = np.column_stack([ones, 0 * ones])
        adv = EmbeddingPair(np.column_stack([ones, upper]), np.column_stack([ones, upper]))
    else:
        raise InvalidInput(f"unknown example id {example_id}")
    d1, d2 = _block_uniform(N, 0, n), _block_uniform(N, n, N)
    B = float(np.linalg.norm(F, axis=1).max())
    inst = GroundTruthInstance(n=N, m=N, n1=n, m1=n, Fstar=F.copy(), Gstar=F.copy(),
                               dx1=d1, dx2=d2, dy1=d1.copy(), dy2=d2.copy(),
                               train_weights={b: 1 / 3 for b in OBSERVED},
                               test_weights={"11": 0.0, "12": 0.0, "21": 0.0, "22": 1.0},
                               B=B, seed=None,
                               meta={"example": example_id, "gamma": gamma if example_id == 2 else None})
    return inst, adv


@dataclass(frozen=True)
class KappaReport:
    kappa_trn: float
    kappa_tst: float
    kappa_cov: float
    kappa_apx: float
    kappa_cov_f: float
    kappa_cov_g: float
    apx_ratios: tuple

    def as_dict(self):
        return {k: (v if not isinstance(v, tuple) else list(v)) for k, v in self.__dict__.items()}


def _max_ratio(num, den):
    mask = num > 0
    if np.any(mask & (den <= 0)):
        return math.inf
    return float(np.max(num[mask] / den[mask])) if np.any(mask) else 0.0


def covariance_domination(S2, S1, rtol=1e-10):
    """Smallest kappa with S2 <= kappa S1; inf if range(S2) leaves range(S1)."""
    lam, V = np.linalg.eigh(0.5 * (S1 + S1.T))
    scale = max(lam.max(initial=0.0), np.abs(S2).max(initial=0.0), 1e-300)
    keep = lam > rtol * scale
    Vp, Vn = V[:, keep], V[:, ~keep]
    if Vn.shape[1] and np.abs(Vn.T @ S2 @ Vn).max() > rtol * scale:
        return math.inf
    if not keep.any():
        return 0.0
    Wh = Vp / np.sqrt(lam[keep])
    return float(max(np.linalg.eigvalsh(Wh.T @ S2 @ Wh).max(), 0.0))


def compute_kappas(inst: GroundTruthInstance, zero_tol=1e-20) -> KappaReport:
    train = inst.density("train")
    kt = max(_max_ratio(inst.density(b), train) for b in OBSERVED)
    all_blocks = sum(inst.density(b) for b in BLOCKS)
    ks = _max_ratio(inst.density("test"), all_blocks)

    kf = covariance_domination(weighted_cov(inst.Fstar, inst.dx2), weighted_cov(inst.Fstar, inst.dx1))
    kg = covariance_domination(weighted_cov(inst.Gstar, inst.dy2), weighted_cov(inst.Gstar, inst.dy1))

    H = inst.H
    scale = zero_tol * (1.0 + inst.expect(H ** 2, "train"))
    ratios = []
    for k in range(1, inst.d + 1):
        E2 = (inst.truncated_truth(k).predict() - H) ** 2
        num, den = inst.expect(E2, "train"), inst.expect(E2, "11")
        if den <= scale:
            ratios.append(1.0 if num <= scale else math.inf)
        else:
            ratios.append(num / den)
    return KappaReport(kappa_trn=kt, kappa_tst=ks, kappa_cov=max(kf, kg), kappa_apx=max(ratios),
                       kappa_cov_f=kf, kappa_cov_g=kg, apx_ratios=tuple(ratios))


@dataclass(frozen=True)
class Samples:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray | None = None

    def __len__(self):
        return len(self.x)

    def __iter__(self):
        if self.z is None:
            return iter(zip(self.x.tolist(), self.y.tolist()))
        return iter(zip(self.x.tolist(), self.y.tolist(), self.z.tolist()))


def _draw_pairs(inst, selector, count, seed):
    if count < 1:
        raise InvalidInput("count must be >= 1")
    mix = inst.mixture(selector)
    weights = np.array([w for w, _ in mix])
    comp = stream(seed, selector, "component").choice(len(mix), size=count, p=weights / weights.sum())
    ux = stream(seed, selector, "x").random(count)
    uy = stream(seed, selector, "y").random(count)
    xs = np.empty(count, dtype=np.int64)
    ys = np.empty(count, dtype=np.int64)
    for c, (_, block) in enumerate(mix):
        sel = comp == c
        px, qy = inst.marginals(block)
        xs[sel] = _inverse_cdf(px, ux[sel])
        ys[sel] = _inverse_cdf(qy, uy[sel])
    return xs, ys


def _inverse_cdf(p, u):
    cdf = np.cumsum(p)
    cdf /= cdf[-1]
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, len(p) - 1)


def sample_labeled(inst, dist, count, seed, noise=0.0) -> Samples:
    xs, ys = _draw_pairs(inst, dist, count, seed)
    z = np.einsum("ij,ij->i", inst.Fstar[xs], inst.Gstar[ys])
    if noise > 0:
        z = z + stream(seed, dist, "noise").uniform(-noise, noise, size=count)
        z = np.clip(z, -inst.B ** 2, inst.B ** 2)
    return Samples(xs, ys, z)


def sample_unlabeled(inst, dist, count, seed) -> Samples:
    xs, ys = _draw_pairs(inst, dist, count, seed)
    return Samples(xs, ys)
