"""Factorized ERM by alternating least squares and the double-stage pipeline."""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .balancing import proj_bal, sep_rank_from_sigmas
from .datagen import GroundTruthInstance, Samples, sample_labeled, sample_unlabeled
from .embeddings import EmbeddingPair
from .errors import BlockfillError, InvalidInput
from .rng import derive_seed, stream

__all__ = [
    "EmbeddingPair", "SolverConfig", "ErmConfig", "Objective", "FitResult", "DimReduceResult",
    "DiagnosticsTrace", "ReducedPredictor", "fit_factorized", "estimate_covariances",
    "dim_reduce", "distill_fit", "erm_double_stage",
]


@dataclass(frozen=True)
class SolverConfig:
    max_sweeps: int = 200
    rel_tol: float = 1e-10
    ridge: float = 1e-9
    restarts: int = 5
    seed: int = 0


@dataclass(frozen=True)
class ErmConfig:
    p: int
    r_cut: int
    sigma_cut: float
    lam: float | None = None  # distillation weight, default r_cut**4
    mu: float | None = None  # covariance ridge, default B**2 / n1
    n1: int = 20000
    n2: int = 20000
    n3: int = 20000
    n4: int = 20000
    exact: bool = False  # population losses and covariances instead of samples
    solver: SolverConfig = field(default_factory=SolverConfig)

    def validate(self):
        if not self.p >= self.r_cut >= 1:
            raise InvalidInput(f"need p >= r_cut >= 1, got p={self.p}, r_cut={self.r_cut}")
        if self.lam is not None and self.lam < 0:
            raise InvalidInput("lambda must be >= 0")
        if self.mu is not None and not self.mu > 0:
            raise InvalidInput("mu must be > 0")
        if min(self.n1, self.n2, self.n3, self.n4) < 1:
            raise InvalidInput("sample sizes must be >= 1")
        if not self.sigma_cut > 0:
            raise InvalidInput("sigma_cut must be > 0")
        return self


@dataclass(frozen=True)
class Objective:
    """sum_s w_s (<F_x, G_y> - z_s)^2 aggregated per cell: Omega = sum w, S = sum w z, c = sum w z^2."""

    Omega: np.ndarray
    S: np.ndarray
    c: float

    @classmethod
    def from_samples(cls, n, m, xs, ys, zs, weights=None):
        xs, ys, zs = np.asarray(xs), np.asarray(ys), np.asarray(zs, dtype=float)
        if len(xs) == 0:
            raise InvalidInput("empty sample set")
        w = np.full(len(xs), 1.0 / len(xs)) if weights is None else np.broadcast_to(
            np.asarray(weights, dtype=float), xs.shape)
        Omega = np.zeros((n, m))
        S = np.zeros((n, m))
        np.add.at(Omega, (xs, ys), w)
        np.add.at(S, (xs, ys), w * zs)
        return cls(Omega, S, float(np.sum(w * zs * zs)))

    @classmethod
    def population(cls, density, target):
        density = np.asarray(density, dtype=float)
        return cls(density, density * target, float(np.sum(density * target * target)))

    def __add__(self, other):
        return Objective(self.Omega + other.Omega, self.S + other.S, self.c + other.c)

    def scaled(self, a):
        return Objective(a * self.Omega, a * self.S, a * self.c)

    @property
    def shape(self):
        return self.Omega.shape

    def loss(self, P):
        """Weighted squared error of the prediction grid P."""
        mask = self.Omega > 0
        Zbar = np.divide(self.S, self.Omega, out=np.zeros_like(self.S), where=mask)
        resid = max(self.c - float(np.sum(self.S[mask] * Zbar[mask])), 0.0)
        return float(np.sum(self.Omega * (P - Zbar) ** 2)) + resid


@dataclass
class FitResult:
    pair: EmbeddingPair
    loss: float  # data-fit part at the returned pair
    objective: float  # loss plus ridge penalty
    history: list  # objective per sweep for the winning start
    restart_objectives: list
    winner: int


def _solve_rows(Omega, S, G, ridge):
    m, r = G.shape
    outer = (G[:, :, None] * G[:, None, :]).reshape(m, r * r)
    A = (Omega @ outer).reshape(-1, r, r) + ridge * np.eye(r)
    b = S @ G
    try:
        return np.linalg.solve(A, b[..., None])[..., 0]
    except np.linalg.LinAlgError:
        return np.einsum("nij,nj->ni", np.linalg.pinv(A), b)


def _objective(obj, F, G, ridge):
    return obj.loss(F @ G.T) + ridge * (float(np.sum(F * F)) + float(np.sum(G * G)))


def _als(obj, F, G, solver):
    hist = [_objective(obj, F, G, solver.ridge)]
    for _ in range(solver.max_sweeps):
        F = _solve_rows(obj.Omega, obj.S, G, solver.ridge)
        G = _solve_rows(obj.Omega.T, obj.S.T, F, solver.ridge)
        hist.append(_objective(obj, F, G, solver.ridge))
        prev = hist[-2]
        if prev - hist[-1] <= solver.rel_tol * prev or hist[-1] == 0.0:
            break
    return F, G, hist


def fit_factorized(obj: Objective, r: int, solver: SolverConfig = SolverConfig(), *,
                   init_scale=None, warm_start: EmbeddingPair | None = None, label="fit") -> FitResult:
    """Best-of-restarts ALS on the ridge-regularized weighted objective.

    A warm start, when given, is one of the ``solver.restarts`` starts.
    """
    n, m = obj.shape
    if not 1 <= r <= min(n, m):
        raise InvalidInput(f"rank r={r} outside [1, {min(n, m)}]")
    if not np.any(obj.Omega > 0):
        raise InvalidInput("empty sample set")
    if init_scale is None:
        mask = obj.Omega > 0
        init_scale = math.sqrt(max(np.abs(obj.S[mask] / obj.Omega[mask]).max(), 1e-12))
    starts = []
    if warm_start is not None:
        if warm_start.F.shape != (n, r) or warm_start.G.shape != (m, r):
            raise InvalidInput("warm start has the wrong shape")
        starts.append((warm_start.F.copy(), warm_start.G.copy()))
    for i in range(max(solver.restarts - len(starts), 0)):
        g = stream(solver.seed, label, "init", i)
        sc = init_scale / math.sqrt(r)
        starts.append((g.standard_normal((n, r)) * sc, g.standard_normal((m, r)) * sc))
    best = None
    finals = []
    for i, (F0, G0) in enumerate(starts):
        F, G, hist = _als(obj, F0, G0, solver)
        finals.append(hist[-1])
        if best is None or hist[-1] < best[2][-1]:
            best = (F, G, hist, i)
    F, G, hist, win = best
    return FitResult(pair=EmbeddingPair(F, G), loss=obj.loss(F @ G.T), objective=hist[-1],
                     history=hist, restart_objectives=finals, winner=win)


def estimate_covariances(pair: EmbeddingPair, unlabeled, mu: float):
    """Second moments of f and g plus mu I; ``unlabeled`` is Samples or a (px, qy) weight pair."""
    if not mu > 0:
        raise InvalidInput("mu must be > 0")
    if isinstance(unlabeled, Samples):
        if len(unlabeled) == 0:
            raise InvalidInput("empty unlabeled set")
        Fx, Gy = pair.F[unlabeled.x], pair.G[unlabeled.y]
        SF, SG = Fx.T @ Fx / len(unlabeled), Gy.T @ Gy / len(unlabeled)
    else:
        px, qy = (np.asarray(v, dtype=float) for v in unlabeled)
        SF = pair.F.T @ (pair.F * px[:, None])
        SG = pair.G.T @ (pair.G * qy[:, None])
    eye = np.eye(pair.r)
    return 0.5 * (SF + SF.T) + mu * eye, 0.5 * (SG + SG.T) + mu * eye


@dataclass(frozen=True)
class DimReduceResult:
    r_hat: int
    Q: np.ndarray
    W: np.ndarray
    spectrum: np.ndarray  # CovBal eigenvalues, nonincreasing
    left: np.ndarray
    right: np.ndarray  # Q = left @ right.T
    non_unique: bool


def dim_reduce(SigmaF, SigmaG, r_cut: int, sigma_cut: float) -> DimReduceResult:
    probe = proj_bal(1, SigmaF, SigmaG)
    r_hat = sep_rank_from_sigmas(probe.eigvals, r_cut, sigma_cut)
    pb = proj_bal(r_hat, SigmaF, SigmaG)
    return DimReduceResult(r_hat=r_hat, Q=pb.Q, W=pb.W, spectrum=pb.eigvals, left=pb.left,
                           right=pb.right, non_unique=pb.non_unique)


class ReducedPredictor:
    """h_red(x, y) = <f(x), Q g(y)>, evaluated on demand."""

    def __init__(self, pair: EmbeddingPair, red: DimReduceResult):
        self._Fr = pair.F @ red.left
        self._Gr = pair.G @ red.right

    def __call__(self, xs, ys):
        return np.einsum("ij,ij->i", self._Fr[xs], self._Gr[ys])

    def grid(self, rows=None, cols=None):
        Fr = self._Fr if rows is None else self._Fr[rows]
        Gr = self._Gr if cols is None else self._Gr[cols]
        return Fr @ Gr.T

    def truncated_pair(self):
        """Rank-r_hat factors realizing h_red exactly; used as the distillation warm start."""
        return EmbeddingPair(self._Fr.copy(), self._Gr.copy())


def distill_fit(labeled: Objective, unlabeled, h_red, lam: float, r_hat: int,
                solver: SolverConfig = SolverConfig(), **kw) -> FitResult:
    """ALS on L3 + lam L4; ``unlabeled`` is Samples (weights lam/n4) or a population density grid."""
    if lam < 0:
        raise InvalidInput("lambda must be >= 0")
    n, m = labeled.shape
    if isinstance(unlabeled, Samples):
        targets = h_red(unlabeled.x, unlabeled.y)
        l4 = Objective.from_samples(n, m, unlabeled.x, unlabeled.y, targets)
    else:
        density = np.asarray(unlabeled, dtype=float)
        l4 = Objective.population(density, h_red.grid())
    return fit_factorized(labeled + l4.scaled(lam), r_hat, solver, **kw)


@dataclass
class DiagnosticsTrace:
    stage_losses: dict = field(default_factory=dict)
    restart_objectives: dict = field(default_factory=dict)
    r_hat: int | None = None
    covbal_spectrum: list = field(default_factory=list)
    non_unique: bool = False
    q_norm: float | None = None
    lam: float | None = None
    mu: float | None = None
    pinned_stage1: bool = False
    event_inputs: dict = field(default_factory=dict)
    wall_time: dict = field(default_factory=dict)

    def as_dict(self, timing=True):
        out = asdict(self)
        if not timing:
            out.pop("wall_time")
        return out


def _stage(name, fn, trace):
    t0 = time.perf_counter()
    try:
        return fn()
    except BlockfillError as err:
        err.stage = err.stage or name
        raise
    finally:
        trace.wall_time[name] = time.perf_counter() - t0


def erm_double_stage(inst: GroundTruthInstance, cfg: ErmConfig, stage1_pair: EmbeddingPair | None = None):
    """Overparametrized fit, covariance estimation, DimReduce, distillation."""
    cfg.validate()
    if cfg.p > min(inst.n, inst.m):
        raise InvalidInput(f"p={cfg.p} exceeds min(n, m)={min(inst.n, inst.m)}")
    seed = cfg.solver.seed
    trace = DiagnosticsTrace()
    lam = float(cfg.r_cut ** 4) if cfg.lam is None else float(cfg.lam)
    mu = float(inst.B ** 2 / cfg.n1) if cfg.mu is None else float(cfg.mu)
    trace.lam, trace.mu = lam, mu

    def train_objective(n_samples, key):
        if cfg.exact:
            return Objective.population(inst.density("train"), inst.H)
        s = sample_labeled(inst, "train", n_samples, derive_seed(seed, key))
        return Objective.from_samples(inst.n, inst.m, s.x, s.y, s.z)

    def stage1():
        if stage1_pair is not None:
            trace.pinned_stage1 = True
            return stage1_pair
        solver = replace(cfg.solver, seed=derive_seed(seed, "stage1-init"))
        fit = fit_factorized(train_objective(cfg.n1, "stage1"), cfg.p, solver,
                             init_scale=inst.B, label="stage1")
        trace.stage_losses["overparametrized"] = fit.history
        trace.restart_objectives["overparametrized"] = fit.restart_objectives
        return fit.pair

    tilde = _stage("overparametrized", stage1, trace)

    def stage2():
        if cfg.exact:
            return estimate_covariances(tilde, (inst.dx1, inst.dy1), mu)
        u = sample_unlabeled(inst, "11", cfg.n2, derive_seed(seed, "stage2"))
        return estimate_covariances(tilde, u, mu)

    SF, SG = _stage("covariance", stage2, trace)
    red = _stage("dim_reduce", lambda: dim_reduce(SF, SG, cfg.r_cut, cfg.sigma_cut), trace)
    trace.r_hat = red.r_hat
    trace.covbal_spectrum = [float(v) for v in red.spectrum]
    trace.non_unique = red.non_unique
    trace.q_norm = float(np.linalg.norm(red.Q, 2))
    trace.event_inputs = {"r_hat": red.r_hat, "sigma_cut": cfg.sigma_cut, "r_cut": cfg.r_cut}
    h_red = ReducedPredictor(tilde, red)

    def stage4():
        labeled = train_objective(cfg.n3, "stage4")
        if cfg.exact:
            unlabeled = inst.density("11")
        else:
            unlabeled = sample_unlabeled(inst, "11", cfg.n4, derive_seed(seed, "stage4-unlabeled"))
        solver = replace(cfg.solver, seed=derive_seed(seed, "stage4-init"))
        fit = distill_fit(labeled, unlabeled, h_red, lam, red.r_hat, solver,
                          init_scale=inst.B, warm_start=h_red.truncated_pair(), label="stage4")
        trace.stage_losses["distillation"] = fit.history
        trace.restart_objectives["distillation"] = fit.restart_objectives
        return fit.pair

    final = _stage("distillation", stage4, trace)
    return final, trace
