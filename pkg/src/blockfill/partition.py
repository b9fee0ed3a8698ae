"""Well-tempered partitions of a singular spectrum."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput
from .spectral import SpectralSummary

E = math.e


@dataclass(frozen=True)
class Partition:
    pivots: tuple  # 0 = k_1 < ... < k_l < k_{l+1} = s
    delta: float
    mu: float  # last block measured against sigma_ref
    mu_literal: float  # last block measured against sigma_s
    m_space: float
    m_spec: float
    sigma_ref: float

    @property
    def s(self):
        return self.pivots[-1]

    @property
    def ell(self):
        return len(self.pivots) - 1

    def blocks(self):
        p = self.pivots
        return [list(range(p[i] + 1, p[i + 1] + 1)) for i in range(self.ell)]


def _spectrum(sigmas):
    s = sigmas if isinstance(sigmas, SpectralSummary) else SpectralSummary.from_sigmas(sigmas)
    if np.any(s.sigmas <= 0):
        raise InvalidInput("partition needs strictly positive singular values")
    return s


def _pick(spec, upper, min_gap, min_sigma):
    # largest k' < upper with delta_k' >= min_gap and sigma_k' >= min_sigma; k' = 0 always qualifies
    for k in range(upper - 1, 0, -1):
        if spec.delta(k) >= min_gap and spec.sigma(k) >= min_sigma:
            return k
    return 0


def partition_constants(part_or_pivots, sigmas):
    spec = _spectrum(sigmas)
    pivots = tuple(part_or_pivots.pivots if isinstance(part_or_pivots, Partition) else part_or_pivots)
    _validate_pivots(pivots, len(spec))
    heads = pivots[:-1]
    m_space = float(sum(spec.delta(k) ** -2 for k in heads))
    m_spec = float(sum(1.0 / spec.sigma(k) for k in heads if k > 0))
    return m_space, m_spec


def _validate_pivots(pivots, length):
    if len(pivots) < 2 or pivots[0] != 0:
        raise InvalidInput(f"pivots must start at 0 and end at s, got {pivots}")
    if any(b <= a for a, b in zip(pivots, pivots[1:])):
        raise InvalidInput(f"pivots must be strictly increasing, got {pivots}")
    if pivots[-1] > length:
        raise InvalidInput(f"s={pivots[-1]} exceeds spectrum length {length}")


def well_tempered_partition(sigmas, s: int, sigma: float) -> Partition:
    spec = _spectrum(sigmas)
    if s < 2 or s > len(spec):
        raise InvalidInput(f"s={s} outside [2, {len(spec)}]")
    if not spec.sigma(s) <= sigma <= spec.sigma(1):
        raise InvalidInput(f"sigma={sigma:g} outside [sigma_s, sigma_1] = "
                           f"[{spec.sigma(s):g}, {spec.sigma(1):g}]")
    chain = [_pick(spec, s, 1.0 / s, sigma)]
    while chain[-1] > 0:
        k = chain[-1]
        chain.append(_pick(spec, k, 1.0 / k, E * spec.sigma(k)))
    pivots = tuple(reversed(chain)) + (s,)

    heads = pivots[:-1]
    ratios = [spec.sigma(pivots[i] + 1) / spec.sigma(pivots[i + 1]) for i in range(len(heads))]
    mu_literal = max(ratios)
    ratios[-1] = spec.sigma(pivots[-2] + 1) / sigma
    m_space, m_spec = partition_constants(pivots, spec)
    return Partition(
        pivots=pivots,
        delta=float(min(spec.delta(k) for k in heads)),
        mu=float(max(ratios)),
        mu_literal=float(mu_literal),
        m_space=m_space,
        m_spec=m_spec,
        sigma_ref=float(sigma),
    )


def ell_bound(sigmas, s, sigma):
    spec = _spectrum(sigmas)
    return min(1 + math.ceil(math.log(spec.sigma(1) / sigma)), s)


def partition_report(part: Partition, sigmas) -> dict:
    """Evaluate every spacing and existence condition; True means the condition holds."""
    spec = _spectrum(sigmas)
    p, s, sig = part.pivots, part.s, part.sigma_ref
    ell = part.ell
    sv = spec.sigma
    last = p[ell - 1]
    tail = lambda k, q: float(np.sum(spec.sigmas[k:] ** q))  # noqa: E731

    gap_ok = all(spec.delta(p[i]) >= 1.0 / p[i + 1] for i in range(ell))
    top_ok = sv(last + 1) <= 2 * E * sig and all(
        sv(p[i] + 1) <= 2 * E ** 2 * sv(p[i + 1]) for i in range(ell - 1))
    growth_ok = sv(last) >= sig and all(sv(p[i]) >= E * sv(p[i + 1]) for i in range(ell - 1))
    covered = sorted(k for b in part.blocks() for k in b) == list(range(1, s + 1))

    return {
        "blocks_tile": covered,
        "lemma_a_gap": gap_ok,
        "lemma_b_top": top_ok,
        "lemma_c_growth": growth_ok,
        "prop_a_delta": part.delta >= 1.0 / s,
        "prop_a_mu": part.mu <= 2 * E ** 2,
        "prop_b_last_pivot": last < s and sv(last) >= sig,
        "prop_b_m_spec": part.m_spec <= (1.0 / sig) / (1 - 1 / E),
        "prop_c_m_space": part.m_space <= ell_bound(spec, s, sig) * s ** 2,
        "m_space_ell": part.m_space <= ell * s ** 2,
        "prop_d_tail1": tail(last, 1) <= 2 * E * s * sig + tail(s, 1),
        "prop_d_tail2": tail(last, 2) <= 4 * E ** 2 * s * sig ** 2 + tail(s, 2),
    }
