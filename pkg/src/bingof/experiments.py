"""Monte Carlo risk estimation, rate-exponent fits and dimension demonstrations.

Risk is the sum of the type-I error under ``f = g = uniform`` and the type-II
error under perturbed densities drawn from the sign prior (fresh signs for
every replicate). Averaging over the prior gives a lower estimate of the
worst-case risk, which is a supremum and cannot be computed.

The bumps of the alternative live on a partition that the test's bins
refine: ``kappa_alt`` is the proper divisor of ``kappa`` closest (on a log
scale) to ``alt_scale * kappa``. On a shared partition every bump integrates
to zero over a test cell and the binned statistics are blind to it; on a
misaligned one the captured signal jumps erratically with ``m``.

Randomness is keyed by ``(seed, role, generation dimension, m, replicate)``
and never by the signal level, so every signal level reuses the same
underlying random numbers and risk curves are smooth in the signal.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from joblib import Parallel, delayed
from scipy import stats as sps

from ._rng import derive_seed, substream
from .binning import BinSpec, _axis_indices, count_bins, flatten_keys
from .calibration import (
    CalibrationConfig,
    Gamma2Statistic,
    MultiscaleMaxStatistic,
    NormalizedStatistic,
    critical_value,
    permutation_test,
)
from .generators import (
    DEFAULT_PROFILE,
    DEFAULT_WIDTH,
    IngsterAlternative,
    SurfaceSpec,
    axis_embedding,
    curve_embedding,
    embed_surface,
    empty_cube_probability,
    identity_embedding,
    make_bump,
    max_admissible_epsilon,
    random_signs,
    sample_ingster,
)
from .statistics import (
    ContractError,
    b_max_for,
    dyadic_codes,
    gamma_one,
    gamma_two,
    gamma_two_from_codes,
    kappa_for,
    multiscale_threshold,
    threshold_one,
    threshold_two,
)

TESTS = ("two-sample", "one-sample", "multiscale", "normalized")
RISK_NOTE = (
    "risk is averaged over the random-sign prior of perturbed densities; "
    "it estimates the worst-case risk from below"
)
CSV_COLUMNS = ("d", "m", "epsilon", "type1", "type2", "risk", "se", "runtime_s")

_NULL, _ALT, _CAL, _PERM = 1, 2, 3, 4
_CHUNK = 50


class NonMonotoneRiskError(RuntimeError):
    """Estimated risk increased with the signal beyond Monte Carlo noise."""


@dataclass
class ExperimentConfig:
    dims: list[int]
    sizes: list[int]
    s: float = 1.0
    epsilons: list[float] = field(default_factory=lambda: [0.0])
    replicates: int = 200
    seed: int = 0
    test: str = "two-sample"
    calibration: str = "analytic"
    a: float = 3.0
    alpha: float = 0.05
    B: int = 99
    alt_scale: float = 0.5
    profile: str = DEFAULT_PROFILE
    width: float = DEFAULT_WIDTH
    intrinsic_dim: int | None = None
    embedding: str = "axis"
    n_jobs: int = 1
    bisection_steps: int = 12
    target_risk: float = 0.5

    def __post_init__(self):
        for name in ("dims", "sizes", "epsilons"):
            if len(getattr(self, name)) == 0:
                raise ValueError(f"{name} must be nonempty")
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if self.test not in TESTS:
            raise ValueError(f"test must be one of {TESTS}")
        if self.calibration not in ("analytic", "monte_carlo", "permutation"):
            raise ValueError(f"unknown calibration {self.calibration!r}")
        if self.test == "normalized" and self.calibration == "analytic":
            raise ValueError("the normalized statistic has no analytic threshold")
        if self.test == "one-sample" and self.calibration == "permutation":
            raise ValueError("permutation calibration needs two samples")
        if any(e < 0 for e in self.epsilons):
            raise ValueError("signal levels must be nonnegative")

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        return cls(**d)


@dataclass(frozen=True)
class RiskRow:
    d: int
    m: int
    epsilon: float
    type1: float
    type2: float
    risk: float
    se: float
    runtime_s: float


@dataclass
class RiskTable:
    rows: list[RiskRow]
    metadata: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r.d, r.m, repr(r.epsilon), repr(r.type1), repr(r.type2), repr(r.risk),
                        repr(r.se), f"{r.runtime_s:.3f}"])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"metadata": self.metadata, "rows": [asdict(r) for r in self.rows]}, indent=2)

    def statistical_fields(self) -> list[tuple]:
        """Rows without the runtime column, for reproducibility comparisons."""
        return [(r.d, r.m, r.epsilon, r.type1, r.type2, r.risk, r.se) for r in self.rows]


# -- one (d, m) design ------------------------------------------------------------

@dataclass
class Design:
    """Everything needed to simulate one ``(d, m)`` cell of an experiment."""

    d: int
    gen_dim: int
    m: int
    kappa: int
    kappa_alt: int
    config: ExperimentConfig
    surface: SurfaceSpec | None = None
    _crit: float | None = field(default=None, repr=False)

    @property
    def bump(self):
        return make_bump(self.gen_dim, self.config.profile, self.config.width)

    # samples -------------------------------------------------------------------
    def _embed(self, u):
        return u if self.surface is None else embed_surface(u, self.surface)

    def null_pair(self, rep: int, role: int = _NULL):
        seed = self.config.seed
        x = substream(seed, role, self.gen_dim, self.m, rep, 0).random((self.m, self.gen_dim))
        y = substream(seed, role, self.gen_dim, self.m, rep, 1).random((self.m, self.gen_dim))
        return self._embed(x), self._embed(y)

    def alternative(self, rep: int, epsilon: float) -> IngsterAlternative:
        signs = random_signs(self.kappa_alt, self.gen_dim,
                             substream(self.config.seed, _ALT, self.gen_dim, self.m, rep, 2))
        return IngsterAlternative.from_epsilon(self.kappa_alt, epsilon, self.gen_dim, signs=signs, bump=self.bump)

    def alt_pair(self, rep: int, epsilon: float):
        seed = self.config.seed
        alt = self.alternative(rep, epsilon)
        x = sample_ingster(alt, self.m, substream(seed, _ALT, self.gen_dim, self.m, rep, 0))
        y = substream(seed, _ALT, self.gen_dim, self.m, rep, 1).random((self.m, self.gen_dim))
        return self._embed(x), self._embed(y)

    # statistics ----------------------------------------------------------------
    def statistic(self, x, y) -> float:
        cfg = self.config
        if cfg.test == "one-sample":
            return gamma_one(count_bins(x, BinSpec(self.kappa, self.d)), self.m)
        if cfg.test == "two-sample":
            return float(_fast_gamma_two(x, y, self.kappa))
        if cfg.test == "normalized":
            return NormalizedStatistic(self.kappa)(x, y)
        if cfg.calibration == "analytic":
            # any Gamma_k >= tau_k  <=>  max_k (Gamma_k - tau_k) >= 0
            b_max = b_max_for(self.m, self.gen_dim)
            cx, cy = dyadic_codes(x, b_max), dyadic_codes(y, b_max)
            return max(gamma_two_from_codes(a, b) - multiscale_threshold(self.m, 2**(i + 1), self.gen_dim, cfg.a)
                       for i, (a, b) in enumerate(zip(cx, cy)))
        return MultiscaleMaxStatistic(self.d)(x, y)

    def analytic_threshold(self) -> float:
        """Threshold at the dimension of the data's support.

        On a ``d0``-dimensional surface only about ``kappa**d0`` cells can be
        occupied, so the null spread of the statistic scales with
        ``kappa**(-d0/2)``, not with the ambient ``kappa**(-d/2)``.
        """
        cfg = self.config
        if cfg.test == "one-sample":
            return threshold_one(self.m, self.kappa, self.gen_dim, cfg.a)
        if cfg.test == "two-sample":
            return threshold_two(self.m, self.kappa, self.gen_dim, cfg.a)
        return 0.0

    def critical(self) -> float:
        """Monte Carlo critical value under the uniform null (cached)."""
        if self._crit is None:
            cfg = self.config
            null = [self.statistic(*self.null_pair(b, _CAL)) for b in range(cfg.B)]
            self._crit = critical_value(null, cfg.alpha)
        return self._crit

    def reject(self, x, y, rep: int, role: int) -> bool:
        cfg = self.config
        if cfg.calibration == "analytic":
            stat = self.statistic(x, y)
            tau = self.analytic_threshold()
            return bool(stat >= tau) if cfg.test == "multiscale" else bool(stat > tau)
        if cfg.calibration == "monte_carlo":
            return bool(self.statistic(x, y) > self.critical())
        cal = CalibrationConfig(cfg.B, derive_seed(cfg.seed, _PERM, role, self.gen_dim, self.m, rep), cfg.alpha)
        stat = {"two-sample": Gamma2Statistic(self.kappa), "normalized": NormalizedStatistic(self.kappa),
                "multiscale": MultiscaleMaxStatistic(self.d)}[cfg.test]
        return permutation_test(x, y, stat, cal).reject

    # rates -----------------------------------------------------------------------
    def _count(self, fn: Callable[[int], bool], reps: range) -> int:
        return sum(fn(r) for r in reps)

    def _run(self, fn, R: int) -> int:
        chunks = [range(i, min(R, i + _CHUNK)) for i in range(0, R, _CHUNK)]
        if self.config.n_jobs == 1 or len(chunks) == 1:
            return sum(self._count(fn, c) for c in chunks)
        return sum(Parallel(n_jobs=self.config.n_jobs)(delayed(self._count)(fn, c) for c in chunks))

    def type1_count(self, R: int) -> int:
        if self.config.calibration == "monte_carlo":
            self.critical()
        return self._run(lambda r: self.reject(*self.null_pair(r), r, _NULL), R)

    def type2_count(self, epsilon: float, R: int) -> int:
        if self.config.calibration == "monte_carlo":
            self.critical()
        return self._run(lambda r: not self.reject(*self.alt_pair(r, epsilon), r, _ALT), R)


def _fast_gamma_two(x, y, kappa: int) -> int:
    d = x.shape[1]
    if kappa**d > 2**62:
        spec = BinSpec(kappa, d)
        return gamma_two(count_bins(x, spec), count_bins(y, spec))
    cx = flatten_keys(_axis_indices(x, kappa), kappa)
    cy = flatten_keys(_axis_indices(y, kappa), kappa)
    cells = kappa**d
    if cells <= 4 * (len(cx) + len(cy)) or cells <= 1 << 16:
        diff = np.bincount(cx, minlength=cells) - np.bincount(cy, minlength=cells)
        return int(np.dot(diff, diff))
    return gamma_two_from_codes(cx, cy)


def _embedding(name: str, d0: int, d: int) -> SurfaceSpec:
    if d0 == d and name in ("axis", "identity"):
        return identity_embedding(d)
    if name == "axis":
        return axis_embedding(d0, d)
    if name == "curve":
        if d0 != 1:
            raise ValueError("the curve embedding has intrinsic dimension 1")
        return curve_embedding(d)
    raise ValueError(f"unknown embedding {name!r}")


def alternative_kappa(kappa: int, alt_scale: float = 0.5) -> int:
    """Proper divisor of ``kappa`` closest to ``alt_scale * kappa`` in log scale."""
    if kappa == 1:
        return 1
    target = math.log(alt_scale * kappa)
    divisors = [q for q in range(1, kappa // 2 + 1) if kappa % q == 0]
    return min(divisors, key=lambda q: (abs(math.log(q) - target), q))


def make_design(config: ExperimentConfig, d: int, m: int, surface: SurfaceSpec | None = None) -> Design:
    gen_dim = surface.intrinsic_dim if surface is not None else d
    kappa = kappa_for(m, config.s, gen_dim)
    kappa_alt = alternative_kappa(kappa, config.alt_scale)
    return Design(d, gen_dim, m, kappa, kappa_alt, config, surface)


def _check_admissible(design: Design, epsilon: float) -> None:
    eps_max = max_admissible_epsilon(design.bump)
    if epsilon > eps_max * (1 + 1e-12):
        raise ContractError(
            f"epsilon={epsilon} is inadmissible at kappa_alt={design.kappa_alt}, d={design.gen_dim}: "
            f"the density would go negative; the largest admissible epsilon is {eps_max:.6g}"
        )


def _rate_var(count: int, R: int) -> float:
    p = count / R
    return p * (1 - p) / R


def _risk_rows(design: Design, epsilons, R: int) -> list[RiskRow]:
    for eps in epsilons:
        _check_admissible(design, eps)
    t0 = time.perf_counter()
    c1 = design.type1_count(R)
    t_null = time.perf_counter() - t0
    rows = []
    for eps in epsilons:
        t0 = time.perf_counter()
        c2 = design.type2_count(eps, R)
        t1, t2 = c1 / R, c2 / R
        se = math.sqrt(_rate_var(c1, R) + _rate_var(c2, R))
        rows.append(RiskRow(design.d, design.m, float(eps), t1, t2, t1 + t2, se,
                            time.perf_counter() - t0 + t_null / len(epsilons)))
    return rows


def _metadata(config: ExperimentConfig, **extra) -> dict:
    meta = {"note": RISK_NOTE, "config": asdict(config)}
    meta.update(extra)
    return meta


def risk_experiment(config: ExperimentConfig) -> RiskTable:
    """Type-I, type-II and total risk for every ``(d, m, epsilon)`` in the grid."""
    rows = []
    kappas = {}
    for d in config.dims:
        for m in config.sizes:
            design = make_design(config, d, m)
            kappas[f"{d},{m}"] = {"kappa": design.kappa, "kappa_alt": design.kappa_alt}
            rows += _risk_rows(design, config.epsilons, config.replicates)
    return RiskTable(rows, _metadata(config, kappas=kappas))


def intrinsic_dim_experiment(d: int, d0: int, spec: SurfaceSpec | None, config: ExperimentConfig) -> RiskTable:
    """Risk experiment on samples pushed through a ``d0``-dimensional surface in ``[0,1]^d``.

    Bins use ``kappa(s, d0)``; samples are generated in ``d0`` dimensions with
    the same random streams as a native ``d0``-dimensional experiment.
    """
    if d0 > d:
        raise ValueError("intrinsic dimension exceeds ambient dimension")
    if spec is None:
        spec = _embedding(config.embedding, d0, d)
    if (spec.intrinsic_dim, spec.dim) != (d0, d):
        raise ValueError("surface dimensions do not match (d0, d)")
    surface = None if (d0 == d and spec.name == "identity") else spec
    rows = []
    for m in config.sizes:
        design = make_design(config, d, m, surface)
        rows += _risk_rows(design, config.epsilons, config.replicates)
    return RiskTable(rows, _metadata(config, ambient_dim=d, intrinsic_dim=d0, surface=spec.name))


# -- rate fitting -------------------------------------------------------------------

@dataclass
class CriticalPoint:
    d: int
    m: int
    epsilon: float
    type1: float
    kappa: int
    kappa_alt: int
    evaluations: list[tuple[float, float, float, int]]  # (epsilon, risk, se, replicates)


@dataclass(frozen=True)
class RateFit:
    slope: float
    stderr: float
    intercept: float
    expected: float | None = None


def _check_monotone(evals, z: float = 3.0) -> None:
    pts = sorted(evals)
    for i, (e_lo, r_lo, s_lo, _) in enumerate(pts):
        for e_hi, r_hi, s_hi, _ in pts[i + 1:]:
            if e_hi > e_lo and r_hi > r_lo + z * math.hypot(s_lo, s_hi):
                raise NonMonotoneRiskError(
                    f"risk rose from {r_lo:.3f} at epsilon={e_lo:.4g} to {r_hi:.3f} at epsilon={e_hi:.4g}; "
                    "Monte Carlo noise too high, increase replicates"
                )


def critical_epsilon(config: ExperimentConfig, d: int, m: int, surface: SurfaceSpec | None = None,
                     null_replicates: int | None = None) -> CriticalPoint:
    """Signal level at which the estimated risk crosses ``config.target_risk``.

    Bisection in ``log epsilon`` between a weak signal and the largest
    admissible one, ``config.bisection_steps`` steps; the replicate count is
    doubled for the last four steps.
    """
    design = make_design(config, d, m, surface)
    R = config.replicates
    R0 = null_replicates or 2 * R
    c1 = design.type1_count(R0)
    t1, v1 = c1 / R0, _rate_var(c1, R0)
    target = config.target_risk
    if t1 >= target:
        raise ContractError(f"type-I error {t1:.3f} already exceeds the target risk {target}")
    evals = []

    def risk(eps, reps):
        c2 = design.type2_count(eps, reps)
        r = t1 + c2 / reps
        evals.append((eps, r, math.sqrt(v1 + _rate_var(c2, reps)), reps))
        _check_monotone(evals)
        return r

    hi = max_admissible_epsilon(design.bump) * (1 - 1e-9)
    if risk(hi, R) > target:
        raise ContractError(
            f"risk at the largest admissible epsilon={hi:.4g} exceeds {target} for d={d}, m={m}; "
            "the signal needed is not admissible"
        )
    lo = hi / 8
    while risk(lo, R) <= target:
        hi, lo = lo, lo / 8
        if lo < 1e-8:
            raise ContractError("risk stays below the target for vanishing signal")
    llo, lhi = math.log(lo), math.log(hi)
    steps = config.bisection_steps
    for k in range(steps):
        mid = 0.5 * (llo + lhi)
        reps = 2 * R if k >= steps - 4 else R
        if risk(math.exp(mid), reps) > target:
            llo = mid
        else:
            lhi = mid
    return CriticalPoint(d, m, math.exp(0.5 * (llo + lhi)), t1, design.kappa, design.kappa_alt, evals)


def rate_fit(points, expected: float | None = None) -> RateFit:
    """Least-squares slope of ``log epsilon*`` against ``log m``.

    ``points`` is a sequence of :class:`CriticalPoint` or ``(m, epsilon)``
    pairs.
    """
    ms, eps = [], []
    for p in points:
        if isinstance(p, CriticalPoint):
            _check_monotone(p.evaluations)
            ms.append(p.m)
            eps.append(p.epsilon)
        else:
            ms.append(p[0])
            eps.append(p[1])
    if len(ms) < 2:
        raise ValueError("need at least two sample sizes")
    fit = sps.linregress(np.log(ms), np.log(eps))
    return RateFit(float(fit.slope), float(fit.stderr), float(fit.intercept), expected)


def minimax_exponent(s: float, d: int) -> float:
    """Exponent ``-2s / (4s + d)`` of the critical signal in ``m``."""
    return -2.0 * s / (4.0 * s + d)


def rate_experiment(config: ExperimentConfig, surface_for: Callable[[int], SurfaceSpec | None] | None = None):
    """Critical signal for every ``(d, m)`` and the fitted exponent per ``d``.

    Returns ``(points, fits)`` with ``fits[d]`` a :class:`RateFit`.
    """
    points, fits = {}, {}
    for d in config.dims:
        surface = surface_for(d) if surface_for else None
        pts = [critical_epsilon(config, d, m, surface) for m in config.sizes]
        points[d] = pts
        fits[d] = rate_fit(pts, minimax_exponent(config.s, surface.intrinsic_dim if surface else d))
    return points, fits


def rate_table(points: dict) -> RiskTable:
    rows = []
    for d, pts in points.items():
        for p in pts:
            ev = min(p.evaluations, key=lambda e: abs(math.log(e[0] / p.epsilon)))
            rows.append(RiskRow(d, p.m, p.epsilon, p.type1, ev[1] - p.type1, ev[1], ev[2], 0.0))
    return RiskTable(rows)


# -- multiscale adaptivity ------------------------------------------------------------

@dataclass
class AdaptivityResult:
    """Power of every test against every alternative.

    ``power[s_alt][name]`` with names ``"single@<kappa>"`` and
    ``"multiscale"``; ``oracle[s_alt]`` names the single-scale test matched
    to the alternative.
    """

    power: dict
    oracle: dict
    critical: dict
    kappas: dict
    epsilons: dict
    replicates: int
    decisions: dict = field(default_factory=dict, repr=False)

    def paired_se(self, s_alt: float, first: str, second: str) -> float:
        """Monte Carlo standard error of ``power[first] - power[second]``.

        Both tests see the same replicates, so the difference is estimated
        from per-replicate decision differences.
        """
        diff = self.decisions[s_alt][first].astype(float) - self.decisions[s_alt][second]
        return float(diff.std(ddof=1) / math.sqrt(diff.size)) if diff.size > 1 else 0.0


def scale_adaptivity_experiment(m: int, d: int, smoothness: list[float], epsilons: dict, replicates: int,
                                alpha: float = 0.05, null_replicates: int = 999, seed: int = 0,
                                alt_scale: float = 0.5, profile: str = DEFAULT_PROFILE,
                                width: float = DEFAULT_WIDTH) -> AdaptivityResult:
    """Compare the multiscale test with single-scale tests at smoothness-implied scales.

    For each ``s`` the alternative has bumps at ``alternative_kappa(kappa(s))``
    cells per axis and L2 signal ``epsilons[s]``. All tests are calibrated at
    level ``alpha`` by Monte Carlo under the uniform null, so their powers are
    compared at equal size.
    """
    kappas = {s: kappa_for(m, s, d) for s in smoothness}
    single = {f"single@{k}": Gamma2Statistic(k) for k in sorted(set(kappas.values()))}
    bump = make_bump(d, profile, width)
    # keep statistics from codes for speed
    b_max = b_max_for(m, d)

    def all_stats(x, y):
        out = {name: float(_fast_gamma_two(x, y, st.kappa)) for name, st in single.items()}
        cx, cy = dyadic_codes(x, b_max), dyadic_codes(y, b_max)
        best = -np.inf
        for b, (a, c) in enumerate(zip(cx, cy), start=1):
            g = gamma_two_from_codes(a, c)
            best = max(best, (g - 2.0 * m) * (2**b) ** (d / 2.0) / m)
        out["multiscale"] = best
        return out

    null = [all_stats(substream(seed, _CAL, d, m, b, 0).random((m, d)),
                      substream(seed, _CAL, d, m, b, 1).random((m, d))) for b in range(null_replicates)]
    crit = {name: critical_value([n[name] for n in null], alpha) for name in null[0]}
    power, decisions = {}, {}
    for i, s in enumerate(smoothness):
        k_alt = alternative_kappa(kappas[s], alt_scale)
        hits = {name: np.zeros(replicates, dtype=bool) for name in crit}
        for r in range(replicates):
            signs = random_signs(k_alt, d, substream(seed, _ALT, i, r, 2))
            alt = IngsterAlternative.from_epsilon(k_alt, epsilons[s], d, signs=signs, bump=bump)
            x = sample_ingster(alt, m, substream(seed, _ALT, i, r, 0))
            y = substream(seed, _ALT, i, r, 1).random((m, d))
            for name, v in all_stats(x, y).items():
                hits[name][r] = v > crit[name]
        power[s] = {name: float(h.mean()) for name, h in hits.items()}
        decisions[s] = hits
    oracle = {s: f"single@{kappas[s]}" for s in smoothness}
    return AdaptivityResult(power, oracle, crit, kappas, dict(epsilons), replicates, decisions)


# -- curse of dimensionality -------------------------------------------------------------

@dataclass(frozen=True)
class CurseRow:
    d: int
    bound: float
    empirical: float
    se: float


def empty_cube_frequency(m: int, d: int, epsilon: float, runs: int, seed: int = 0) -> tuple[float, float]:
    """Fraction of uniform samples with no point in ``[eps, 1-eps]^d`` and its standard error."""
    hits = 0
    chunk = max(1, 2_000_000 // max(1, m * d))
    for start in range(0, runs, chunk):
        n = min(chunk, runs - start)
        x = substream(seed, d, start).random((n, m, d))
        inside = ((x >= epsilon) & (x <= 1 - epsilon)).all(axis=2)
        hits += int((~inside.any(axis=1)).sum())
    p = hits / runs
    return p, math.sqrt(p * (1 - p) / runs)


def curse_demo(m: int, dims, epsilon: float = 0.25, runs: int = 2000, seed: int = 0, C: float = 1.0):
    """Closed-form bound against simulated frequency of an empty inner cube, per dimension."""
    rows = []
    for d in dims:
        emp, se = empty_cube_frequency(m, d, epsilon, runs, seed)
        rows.append(CurseRow(int(d), empty_cube_probability(m, d, epsilon, C), emp, se))
    return rows
