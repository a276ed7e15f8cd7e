"""Finite-sample calibration by Monte Carlo under the null or by permutation.

Both schemes return the add-one p-value ``(1 + #{T_b >= T_obs}) / (B + 1)``,
which is never zero and is exactly valid under exchangeability. Replicate
``b`` always draws from ``substream(seed, b)``, so results do not depend on
how replicates are scheduled.

Statistics that only depend on which cell each point falls in (the
``*Statistic`` classes below) are evaluated for a whole batch of relabelings
at once from precomputed cell labels; arbitrary callables fall back to a
plain loop. Both paths see the same relabelings and agree exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._rng import substream
from .binning import BinSpec, as_sample, cell_codes, count_bins
from .statistics import (
    ContractError,
    NoAdmissibleScaleError,
    SmoothnessParams,
    TestResult,
    b_max_for,
    chi_squared_normalized,
    dyadic_codes,
    gamma_one,
    gamma_two,
    kappa_for,
)

_BATCH = 128


@dataclass(frozen=True)
class CalibrationConfig:
    B: int = 999
    seed: int = 0
    alpha: float = 0.05

    def __post_init__(self):
        if int(self.B) != self.B or self.B < 1:
            raise ContractError(f"number of replicates B must be a positive integer, got {self.B}")
        if not 0.0 < self.alpha < 1.0:
            raise ContractError(f"level alpha must lie in (0, 1), got {self.alpha}")


def add_one_pvalue(observed: float, null_stats) -> float:
    null_stats = np.asarray(null_stats, dtype=np.float64)
    if null_stats.size == 0:
        raise ContractError("need at least one null replicate")
    return (1.0 + np.count_nonzero(null_stats >= observed)) / (null_stats.size + 1.0)


def critical_value(null_stats, alpha: float) -> float:
    """Cut-off ``c`` such that ``observed > c`` iff the add-one p-value is ``<= alpha``."""
    s = np.sort(np.asarray(null_stats, dtype=np.float64))[::-1]
    allowed = math.floor(alpha * (s.size + 1) + 1e-9) - 1
    if allowed < 0:
        return math.inf
    if allowed >= s.size:
        return -math.inf
    return float(s[allowed])


# -- Monte Carlo under a simple null -------------------------------------------

def monte_carlo_null(null_sampler: Callable, statistic: Callable, config: CalibrationConfig) -> np.ndarray:
    """Statistic values on ``B`` samples drawn by ``null_sampler(rng)``."""
    return np.array(
        [statistic(null_sampler(substream(config.seed, b))) for b in range(config.B)], dtype=np.float64
    )


def monte_carlo_pvalue(observed_stat: float, null_sampler: Callable, statistic: Callable,
                       config: CalibrationConfig) -> float:
    """Add-one Monte Carlo p-value.

    Parameters
    ----------
    observed_stat : float
        Statistic evaluated on the observed data.
    null_sampler : callable
        ``null_sampler(rng) -> sample`` drawing a data set of the observed size
        under the null.
    statistic : callable
        Maps a sample to a real number; large values are evidence against the
        null.
    config : CalibrationConfig
    """
    return add_one_pvalue(observed_stat, monte_carlo_null(null_sampler, statistic, config))


def uniform_sampler(m: int, d: int) -> Callable:
    return lambda rng: rng.random((m, d))


def one_sample_monte_carlo_test(sample, params: SmoothnessParams, config: CalibrationConfig,
                                kappa: int | None = None) -> TestResult:
    """Chi-squared uniformity test calibrated by simulation under the uniform null."""
    x = as_sample(sample)
    m, d = x.shape
    if kappa is None:
        kappa = kappa_for(m, params.s, d)
    spec = BinSpec(kappa, d)

    def stat(s):
        return gamma_one(count_bins(s, spec), m)

    observed = stat(x)
    null = monte_carlo_null(uniform_sampler(m, d), stat, config)
    p = add_one_pvalue(observed, null)
    return TestResult(observed, critical_value(null, config.alpha), bool(p <= config.alpha), kappa,
                      p_value=p, calibration="monte_carlo",
                      info={"m": m, "d": d, "B": config.B, "seed": config.seed, "alpha": config.alpha})


# -- permutation ---------------------------------------------------------------

def permutations(seed: int, B: int, size: int, start: int = 0) -> np.ndarray:
    """Relabelings ``start .. start+B-1`` of ``size`` pooled points, one row each."""
    return np.stack([substream(seed, b).permutation(size) for b in range(start, start + B)]) \
        if B else np.empty((0, size), dtype=np.int64)


def _split_counts(labels: np.ndarray, perms: np.ndarray, m: int, K: int):
    """Per-relabeling cell counts ``(M, N)``, each of shape ``(B, K)``."""
    lab = labels[perms]
    offs = (np.arange(lab.shape[0], dtype=np.int64) * K)[:, None]
    size = lab.shape[0] * K
    M = np.bincount((lab[:, :m] + offs).ravel(), minlength=size).reshape(-1, K)
    N = np.bincount((lab[:, m:] + offs).ravel(), minlength=size).reshape(-1, K)
    return M, N


def _compact(codes: np.ndarray) -> tuple[np.ndarray, int]:
    if codes.ndim == 2:
        _, inv = np.unique(codes, axis=0, return_inverse=True)
    else:
        _, inv = np.unique(codes, return_inverse=True)
    inv = inv.reshape(-1)
    return inv, (int(inv.max()) + 1 if inv.size else 0)


class Gamma2Statistic:
    """``Gamma = sum (M_k - N_k)**2`` at a fixed number of bins per axis."""

    name = "gamma"

    def __init__(self, kappa: int):
        self.kappa = int(kappa)

    def __call__(self, x, y) -> float:
        spec = BinSpec(self.kappa, np.shape(x)[1])
        return float(gamma_two(count_bins(x, spec), count_bins(y, spec)))

    def encode(self, pooled: np.ndarray):
        return _compact(cell_codes(pooled, BinSpec(self.kappa, pooled.shape[1])))

    def batch(self, state, perms: np.ndarray, m: int) -> np.ndarray:
        labels, K = state
        M, N = _split_counts(labels, perms, m, K)
        diff = M - N
        return np.einsum("ij,ij->i", diff, diff).astype(np.float64)


class NormalizedStatistic(Gamma2Statistic):
    """Classical ``sum (n M - m N)**2 / (M + N)``; accepts unequal sizes."""

    name = "normalized"

    def __call__(self, x, y) -> float:
        spec = BinSpec(self.kappa, np.shape(x)[1])
        return chi_squared_normalized(count_bins(x, spec), count_bins(y, spec), len(x), len(y))

    def batch(self, state, perms: np.ndarray, m: int) -> np.ndarray:
        labels, K = state
        n = perms.shape[1] - m
        M, N = _split_counts(labels, perms, m, K)
        num = (n * M - m * N).astype(np.float64)
        tot = M + N  # never zero: every compact label is occupied in the pool
        return np.sum(num * num / tot, axis=1)


class MultiscaleMaxStatistic:
    """Maximum over dyadic scales of the standardized two-sample statistic.

    At scale ``kappa`` the standardized value is
    ``h * (sum (M/m - N/n)**2 - 1/m - 1/n) * kappa**(d/2)`` with
    ``h = 2 m n / (m + n)``; for ``m == n`` this is
    ``(Gamma - 2m) kappa**(d/2) / m``, i.e. the statistic measured in units of
    its null scale.
    """

    name = "multiscale"

    def __init__(self, d: int, b_max: int | None = None):
        self.d = int(d)
        self.b_max = b_max

    def scales(self, m: int, n: int) -> list[int]:
        b_max = self.b_max if self.b_max is not None else b_max_for(min(m, n), self.d)
        if b_max < 1:
            raise NoAdmissibleScaleError(f"no admissible scale for m={m}, n={n}, d={self.d}")
        return [2**b for b in range(1, b_max + 1)]

    def _standardize(self, M, N, m, n, kappa):
        dev = (M / m - N / n) ** 2
        h = 2.0 * m * n / (m + n)
        return h * (dev.sum(axis=-1) - 1.0 / m - 1.0 / n) * kappa ** (self.d / 2.0)

    def per_scale(self, x, y) -> list[tuple[int, float]]:
        x = as_sample(x, self.d, "x")
        y = as_sample(y, self.d, "y")
        m, n = len(x), len(y)
        ks = self.scales(m, n)
        cx, cy = dyadic_codes(x, len(ks)), dyadic_codes(y, len(ks))
        out = []
        for kappa, a, b in zip(ks, cx, cy):
            inv, K = _compact(np.concatenate([a, b]))
            M = np.bincount(inv[:m], minlength=K)
            N = np.bincount(inv[m:], minlength=K)
            out.append((kappa, float(self._standardize(M, N, m, n, kappa))))
        return out

    def __call__(self, x, y) -> float:
        return max(v for _, v in self.per_scale(x, y))

    def encode(self, pooled: np.ndarray):
        # the scale list depends on (m, n); resolved lazily in batch()
        return pooled

    def batch(self, pooled, perms: np.ndarray, m: int) -> np.ndarray:
        n = perms.shape[1] - m
        ks = self.scales(m, n)
        best = np.full(perms.shape[0], -np.inf)
        for kappa, codes in zip(ks, dyadic_codes(pooled, len(ks))):
            labels, K = _compact(codes)
            M, N = _split_counts(labels, perms, m, K)
            np.maximum(best, self._standardize(M, N, m, n, kappa), out=best)
        return best


def permutation_null(x, y, statistic: Callable, config: CalibrationConfig) -> np.ndarray:
    """Statistic values on ``B`` random relabelings of the pooled sample."""
    x = as_sample(x, name="x")
    y = as_sample(y, x.shape[1], name="y")
    m, n = len(x), len(y)
    if m + n < 2:
        raise ContractError("permutation calibration needs at least two pooled observations")
    pooled = np.vstack([x, y])
    out = np.empty(config.B)
    if hasattr(statistic, "batch"):
        state = statistic.encode(pooled)
        for start in range(0, config.B, _BATCH):
            stop = min(config.B, start + _BATCH)
            out[start:stop] = statistic.batch(state, permutations(config.seed, stop - start, m + n, start), m)
        return out
    for b in range(config.B):
        perm = substream(config.seed, b).permutation(m + n)
        out[b] = statistic(pooled[perm[:m]], pooled[perm[m:]])
    return out


def permutation_pvalue(x, y, statistic: Callable, config: CalibrationConfig) -> float:
    """Add-one permutation p-value of ``statistic(x, y)``."""
    null = permutation_null(x, y, statistic, config)
    return add_one_pvalue(statistic(as_sample(x), as_sample(y)), null)


def permutation_test(x, y, statistic, config: CalibrationConfig, kappa: int | None = None) -> TestResult:
    """Run a permutation-calibrated two-sample test and package the result."""
    x = as_sample(x, name="x")
    y = as_sample(y, x.shape[1], name="y")
    observed = float(statistic(x, y))
    null = permutation_null(x, y, statistic, config)
    p = add_one_pvalue(observed, null)
    kappa = kappa if kappa is not None else getattr(statistic, "kappa", 0)
    return TestResult(observed, critical_value(null, config.alpha), bool(p <= config.alpha), kappa,
                      p_value=p, calibration="permutation",
                      info={"m": len(x), "n": len(y), "d": x.shape[1], "B": config.B,
                            "seed": config.seed, "alpha": config.alpha,
                            "statistic_name": getattr(statistic, "name", "custom")})


def permutation_multiscale(x, y, d: int, config: CalibrationConfig) -> TestResult:
    """Multiscale test calibrated by permuting the maximum over scales.

    The maximum is taken inside every relabeling, so the whole family of
    scales is calibrated by a single p-value.
    """
    stat = MultiscaleMaxStatistic(d)
    x = as_sample(x, d, "x")
    y = as_sample(y, d, "y")
    per_scale = stat.per_scale(x, y)
    k_best, observed = max(per_scale, key=lambda kv: kv[1])
    null = permutation_null(x, y, stat, config)
    p = add_one_pvalue(observed, null)
    return TestResult(observed, critical_value(null, config.alpha), bool(p <= config.alpha), k_best,
                      p_value=p, calibration="permutation",
                      info={"m": len(x), "n": len(y), "d": d, "B": config.B, "seed": config.seed,
                            "alpha": config.alpha, "statistic_name": "multiscale",
                            "per_scale": [{"kappa": k, "standardized": v} for k, v in per_scale]})
