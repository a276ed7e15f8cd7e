"""Exact moments of the unnormalized chi-squared statistic on a finite set.

For samples ``A_1..A_m ~ p`` and ``B_1..B_m ~ q`` on a finite set ``K``,
``T = sum_k (M_k - N_k)**2``. This module evaluates the closed-form mean, the
variance upper bound, the Chebyshev detectability condition derived from
them, and an independent brute-force enumerator over multinomial count
vectors used to check the closed forms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.special import gammaln

from .statistics import ContractError

ENUMERATION_LIMIT = 10**8


def _as_dist(p, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64).ravel()
    if p.size == 0:
        raise ContractError(f"{name} is empty")
    if (p < 0).any():
        raise ContractError(f"{name} has negative entries")
    if abs(p.sum() - 1.0) > 1e-12:
        raise ContractError(f"{name} sums to {p.sum()!r}, not 1")
    return p


def _pair(p, q):
    p, q = _as_dist(p, "p"), _as_dist(q, "q")
    if p.shape != q.shape:
        raise ContractError(f"p and q have different lengths ({p.size} vs {q.size})")
    return p, q


@dataclass(frozen=True)
class ChebConfig:
    """Cell-probability bound ``eta`` and tuning ``a`` of the Chebyshev test."""

    eta: float
    a: float = 1.0
    v2: float = 16.0  # 4 * max(2, sqrt(8), 4)

    def __post_init__(self):
        if not 0.0 < self.eta <= 1.0:
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")
        if not self.a > 0:
            raise ValueError(f"a must be positive, got {self.a}")


def expected_T(p, q, m: int) -> float:
    """``E T = 2m + m**2 <(p-q)**2> - m (<p**2> + <q**2>)``."""
    p, q = _pair(p, q)
    return 2.0 * m + m * m * float(np.sum((p - q) ** 2)) - m * float(np.sum(p * p) + np.sum(q * q))


def var_T_bound(p, q, m: int) -> float:
    """Upper bound on ``Var T``.

    ``2 m**2 <(p+q)**2> + 4 m**3 (<(p+q)(p-q)**2> + 2 <pq> <(p-q)**2>)``
    """
    p, q = _pair(p, q)
    s, d2 = p + q, (p - q) ** 2
    return 2.0 * m**2 * float(np.sum(s * s)) + 4.0 * m**3 * (
        float(np.sum(s * d2)) + 2.0 * float(np.sum(p * q)) * float(np.sum(d2))
    )


def _compositions(m: int, k: int) -> np.ndarray:
    """All count vectors of length ``k`` summing to ``m`` (stars and bars)."""
    if k == 1:
        return np.array([[m]], dtype=np.int64)
    rows = []
    for bars in combinations(range(m + k - 1), k - 1):
        prev, row = -1, []
        for b in bars:
            row.append(b - prev - 1)
            prev = b
        row.append(m + k - 2 - prev)
        rows.append(row)
    return np.array(rows, dtype=np.int64).reshape(-1, k)


def _multinomial_pmf(counts: np.ndarray, p: np.ndarray, m: int) -> np.ndarray:
    with np.errstate(divide="ignore"):
        logp = np.log(p)
    with np.errstate(invalid="ignore"):
        terms = np.where(counts > 0, counts * logp, 0.0)
    log_coef = gammaln(m + 1) - gammaln(counts + 1).sum(axis=1)
    return np.exp(log_coef + terms.sum(axis=1))


def brute_force_moments(p, q, m: int) -> tuple[float, float]:
    """Exact ``(E T, Var T)`` by enumerating every pair of count vectors.

    Each sample's count vector is multinomial, so enumeration runs over
    ``C(m + |K| - 1, |K| - 1)**2`` pairs rather than ``|K|**(2m)`` sequences.
    """
    p, q = _pair(p, q)
    if m < 0:
        raise ContractError("m must be nonnegative")
    if m == 0:
        return 0.0, 0.0
    k = p.size
    n_vectors = math.comb(m + k - 1, k - 1)
    if n_vectors**2 > ENUMERATION_LIMIT:
        raise ContractError(
            f"enumeration of {n_vectors**2} count-vector pairs exceeds the limit {ENUMERATION_LIMIT}"
        )
    counts = _compositions(m, k)
    wp = _multinomial_pmf(counts, p, m)
    wq = _multinomial_pmf(counts, q, m)
    # T for every (M, N) pair: |M|^2 + |N|^2 - 2 M.N
    sq = np.einsum("ij,ij->i", counts, counts).astype(np.float64)
    cross = (counts @ counts.T).astype(np.float64)
    T = sq[:, None] + sq[None, :] - 2.0 * cross
    w = wp[:, None] * wq[None, :]
    mean = float(np.sum(w * T))
    var = float(np.sum(w * (T - mean) ** 2))
    return mean, var


def cheb_threshold(m: int, config: ChebConfig) -> float:
    """Right-hand side ``v2 (a sqrt(eta) v a**2 eta v eta) / m``."""
    a, eta = config.a, config.eta
    return config.v2 * max(a * math.sqrt(eta), a * a * eta, eta) / m


def cheb_power_condition(p, q, m: int, config: ChebConfig) -> bool:
    """True when ``||p - q||**2`` clears the Chebyshev detectability bound."""
    p, q = _pair(p, q)
    top = np.maximum(p, q)
    if (top > config.eta * (1 + 1e-12)).any():
        k = int(np.argmax(top))
        raise ContractError(f"cell {k} has probability {top[k]!r} > eta = {config.eta}")
    return bool(np.sum((p - q) ** 2) >= cheb_threshold(m, config))


def cheb_rejection_cutoff(m: int, config: ChebConfig) -> float:
    """Rejection region ``T - 2m >= a m sqrt(eta)`` expressed as a cutoff on ``T``."""
    return 2.0 * m + config.a * m * math.sqrt(config.eta)
