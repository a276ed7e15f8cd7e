"""Bin-counting chi-squared statistics, bin-size rule and analytic thresholds.

Statistics are computed on sparse counts. The one-sample statistic uses the
expanded form ``sum M_k**2 - m**2 / kappa**d`` so that empty cells never need
to be visited; the two-sample statistic is an exact integer.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .binning import BinSpec, SparseCounts, _axis_indices, as_sample, count_bins, total_cells

CALIBRATIONS = ("analytic", "monte_carlo", "permutation")


class ContractError(ValueError):
    """Inputs violate a documented precondition."""


class UnequalSizesError(ContractError):
    """Analytic two-sample thresholds require ``m == n``."""


class NoAdmissibleScaleError(ContractError):
    """The multiscale test has no dyadic scale for this ``(m, d)``."""


class TheoryWarning(UserWarning):
    """A parameter lies outside the range covered by the risk guarantees."""


@dataclass(frozen=True)
class SmoothnessParams:
    """Hoelder exponent ``s`` and constant ``L`` of the density class."""

    s: float
    L: float = 1.0

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError(f"smoothness s must be positive, got {self.s}")
        if not self.L > 0:
            raise ValueError(f"Hoelder constant L must be positive, got {self.L}")


@dataclass
class TestResult:
    statistic: float
    threshold: float
    reject: bool
    kappa_used: int
    p_value: float | None = None
    calibration: str = "analytic"
    warnings: list[str] = field(default_factory=list)
    info: dict = field(default_factory=dict)

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        if self.calibration not in CALIBRATIONS:
            raise ValueError(f"unknown calibration {self.calibration!r}")
        if self.p_value is not None and not 0.0 < self.p_value <= 1.0:
            raise ValueError(f"p-value {self.p_value} outside (0, 1]")

    def to_dict(self) -> dict:
        return {
            "statistic": float(self.statistic),
            "threshold": float(self.threshold),
            "reject": bool(self.reject),
            "kappa": int(self.kappa_used),
            "p_value": None if self.p_value is None else float(self.p_value),
            "calibration": self.calibration,
            "warnings": list(self.warnings),
            **self.info,
        }


@dataclass(frozen=True)
class ScaleResult:
    kappa: int
    statistic: float
    threshold: float
    exceeded: bool


@dataclass
class MultiscaleResult:
    per_scale: list[ScaleResult]
    reject: bool
    b_max: int
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "reject": bool(self.reject),
            "b_max": int(self.b_max),
            "per_scale": [
                {"kappa": r.kappa, "statistic": r.statistic, "threshold": r.threshold, "exceeded": r.exceeded}
                for r in self.per_scale
            ],
            "warnings": list(self.warnings),
        }


def kappa_for(m: int, s: float, d: int) -> int:
    """Bins per axis ``floor(m ** (2 / (4 s + d)))``, at least 1.

    The floor is corrected against rounding in the power so that exact cases
    such as ``kappa_for(1024, 1, 1) == 16`` hold.
    """
    if m < 1:
        raise ValueError("sample size must be at least 1")
    if not s > 0 or d < 1:
        raise ValueError("need s > 0 and d >= 1")
    inv = (4.0 * s + d) / 2.0
    k = max(1, int(math.floor(m ** (1.0 / inv))))
    rel = 1e-12
    while (k + 1) ** inv <= m * (1 + rel):
        k += 1
    while k > 1 and k**inv > m * (1 + rel):
        k -= 1
    return k


def _check_a(a: float) -> list[str]:
    if a < 1:
        msg = f"a={a} < 1: the risk bound assumes a >= 1"
        warnings.warn(msg, TheoryWarning, stacklevel=3)
        return [msg]
    return []


def threshold_one(m: int, kappa: int, d: int, a: float) -> float:
    """Critical value ``m + a m kappa**(-d/2)`` of the one-sample test."""
    _check_a(a)
    return m + a * m * kappa ** (-d / 2.0)


def threshold_two(m: int, kappa: int, d: int, a: float) -> float:
    """Critical value ``2 m + a m kappa**(-d/2)`` of the two-sample test."""
    _check_a(a)
    return 2.0 * m + a * m * kappa ** (-d / 2.0)


def multiscale_threshold(m: int, kappa: int, d: int, a: float) -> float:
    """Per-scale critical value ``2m + a m sqrt(ln m) kappa**(-d/2)``."""
    return 2.0 * m + a * m * math.sqrt(math.log(m)) * kappa ** (-d / 2.0)


def b_max_for(m: int, d: int) -> int:
    """Largest ``b`` with ``b <= (2/d) log2(m)``, computed in integers."""
    if m < 1 or d < 1:
        raise ValueError("need m >= 1 and d >= 1")
    b = 0
    while 2 ** ((b + 1) * d) <= m * m:
        b += 1
    return b


def gamma_one(counts: SparseCounts, m: int) -> float:
    """One-sample statistic ``sum_k (M_k - m kappa**-d)**2`` over all cells."""
    if counts.total != m:
        raise ContractError(f"counts total {counts.total} != m = {m}")
    sq = int(np.dot(counts.counts, counts.counts)) if len(counts) else 0
    cells = total_cells(counts.spec).value
    return float(sq - m * m / cells)


def _signed_cell_diff(x_counts: SparseCounts, y_counts: SparseCounts):
    """Aligned ``(M_k, N_k)`` over the union of occupied cells."""
    if x_counts.spec != y_counts.spec:
        raise ContractError(f"bin specs differ: {x_counts.spec} vs {y_counts.spec}")
    if x_counts.spec.flat_keys:
        kx, ky = x_counts.codes, y_counts.codes
        union, inv = np.unique(np.concatenate([kx, ky]), return_inverse=True)
    else:
        union, inv = np.unique(np.concatenate([x_counts.keys, y_counts.keys]), axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    M = np.zeros(len(union), dtype=np.int64)
    N = np.zeros(len(union), dtype=np.int64)
    M[inv[: len(x_counts)]] = x_counts.counts
    N[inv[len(x_counts):]] = y_counts.counts
    return M, N


def _sum_squares(v: np.ndarray) -> int:
    if v.size == 0:
        return 0
    if int(np.abs(v).sum()) < 3_000_000_000:
        return int(np.dot(v, v))
    return sum(int(t) * int(t) for t in v)


def gamma_two(x_counts: SparseCounts, y_counts: SparseCounts) -> int:
    """Two-sample statistic ``sum_k (M_k - N_k)**2`` as an exact integer."""
    M, N = _signed_cell_diff(x_counts, y_counts)
    return _sum_squares(M - N)


def chi_squared_normalized(x_counts: SparseCounts, y_counts: SparseCounts, m: int, n: int) -> float:
    """Classical two-sample chi-squared ``sum (n M - m N)**2 / (M + N)``."""
    if x_counts.total != m or y_counts.total != n:
        raise ContractError(
            f"count totals ({x_counts.total}, {y_counts.total}) do not match sizes ({m}, {n})"
        )
    M, N = _signed_cell_diff(x_counts, y_counts)
    num = (n * M - m * N).astype(np.float64)
    return float(np.sum(num * num / (M + N))) if M.size else 0.0


# -- statistics straight from per-point cell codes ---------------------------

def gamma_two_from_codes(cx: np.ndarray, cy: np.ndarray) -> int:
    """Exact ``Gamma`` from per-point flat cell codes of the two samples."""
    _, inv = np.unique(np.concatenate([cx, cy]), return_inverse=True)
    inv = inv.reshape(-1)
    k = int(inv.max()) + 1 if inv.size else 0
    diff = np.bincount(inv[: len(cx)], minlength=k) - np.bincount(inv[len(cx):], minlength=k)
    return _sum_squares(diff)


def dyadic_codes(x: np.ndarray, b_max: int) -> list[np.ndarray]:
    """Flat codes of every point at the scales ``2**b``, ``b = 1..b_max``.

    Keys are computed once at the finest scale and coarsened by integer
    halving, which guarantees nested cells across scales.
    """
    d = x.shape[1]
    if b_max * d > 62:
        raise OverflowError(f"dyadic keys need {b_max * d} bits")
    idx = _axis_indices(x, 2**b_max) - 1
    out = []
    for b in range(b_max, 0, -1):
        codes = np.zeros(x.shape[0], dtype=np.int64)
        for j in range(d):
            codes = (codes << b) | idx[:, j]
        out.append(codes)
        idx = idx >> 1
    return out[::-1]


# -- tests --------------------------------------------------------------------

def one_sample_test(sample, params: SmoothnessParams, a: float) -> TestResult:
    """Chi-squared test of uniformity on ``[0, 1]^d`` with the analytic threshold."""
    x = as_sample(sample)
    m, d = x.shape
    if m == 0:
        raise ContractError("one-sample test needs at least one observation")
    notes = _check_a(a)
    kappa = kappa_for(m, params.s, d)
    stat = gamma_one(count_bins(x, BinSpec(kappa, d)), m)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TheoryWarning)
        tau = threshold_one(m, kappa, d, a)
    return TestResult(stat, tau, bool(stat > tau), kappa, warnings=notes, info={"m": m, "d": d, "a": a})


def two_sample_test(x, y, params: SmoothnessParams, a: float, kappa: int | None = None) -> TestResult:
    """Unnormalized two-sample chi-squared test with the analytic threshold.

    ``kappa`` defaults to the bin-size rule at the sample size; pass it
    explicitly to bin at a different scale (for instance the one implied by
    an intrinsic dimension smaller than the ambient one).
    """
    x = as_sample(x, name="x")
    y = as_sample(y, x.shape[1], name="y")
    m, d = x.shape
    n = y.shape[0]
    if m != n:
        raise UnequalSizesError(
            f"analytic threshold requires equal sample sizes (got m={m}, n={n}); "
            "use permutation calibration, or subsample the larger sample to the smaller size"
        )
    if m == 0:
        raise ContractError("two-sample test needs at least one observation per sample")
    notes = _check_a(a)
    if kappa is None:
        kappa = kappa_for(m, params.s, d)
    spec = BinSpec(kappa, d)
    stat = gamma_two(count_bins(x, spec), count_bins(y, spec))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TheoryWarning)
        tau = threshold_two(m, kappa, d, a)
    return TestResult(float(stat), tau, bool(stat > tau), kappa, warnings=notes,
                      info={"m": m, "n": n, "d": d, "a": a})


def multiscale_test(x, y, d: int, a: float) -> MultiscaleResult:
    """Dyadic multiscale two-sample test; rejects if any ``Gamma_k >= tau_k``."""
    x = as_sample(x, d, name="x")
    y = as_sample(y, d, name="y")
    m, n = x.shape[0], y.shape[0]
    if m != n:
        raise UnequalSizesError(
            f"multiscale analytic thresholds require m == n (got {m}, {n}); "
            "use permutation_multiscale for unequal sizes"
        )
    b_max = b_max_for(m, d)
    if b_max < 1:
        raise NoAdmissibleScaleError(f"no admissible scale: m={m} too small for d={d}")
    notes = _check_a(a)
    cx, cy = dyadic_codes(x, b_max), dyadic_codes(y, b_max)
    rows = []
    for b in range(1, b_max + 1):
        kappa = 2**b
        stat = float(gamma_two_from_codes(cx[b - 1], cy[b - 1]))
        tau = multiscale_threshold(m, kappa, d, a)
        rows.append(ScaleResult(kappa, stat, tau, bool(stat >= tau)))
    return MultiscaleResult(rows, any(r.exceeded for r in rows), b_max, notes)
