"""Null and alternative samplers.

The structured alternatives are perturbations of the uniform density by
signed, rescaled copies of one smooth bump,

    f(x) = 1 + rho * sum_j signs[j] * kappa**(d/2) * h(kappa x - j + 1),

one copy per cell ``j`` of the regular ``kappa``-partition. The bump ``h`` is
a tensor product ``c * phi(x_1) sin(2 pi x_1) * prod_{j>1} phi(x_j)`` with a
compactly supported C-infinity profile ``phi``, so it vanishes with all its
derivatives on the boundary of the unit cube, has zero mean and (after
fixing ``c``) unit L2 norm. Its L2 distance to the uniform density is
``rho * kappa**(d/2)`` exactly, because the rescaled bumps are orthonormal.
"""
from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate, optimize

from ._rng import as_generator
from .binning import BinSpec, DomainError, _axis_indices, as_sample, flatten_keys

PROFILES = ("plateau", "mollifier")
DEFAULT_PROFILE = "plateau"
DEFAULT_WIDTH = 0.1


class QuadratureError(RuntimeError):
    pass


class InadmissibleAlternativeError(ValueError):
    """The requested signal would make the perturbed density negative."""


# -- one-dimensional profiles ---------------------------------------------------

def smooth_step(u):
    """C-infinity step: 0 for ``u <= 0``, 1 for ``u >= 1``."""
    u = np.clip(np.asarray(u, dtype=np.float64), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
        b = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1.0 - u, 1.0)), 0.0)
    return a / (a + b)


def mollifier(t):
    """``exp(-1 / (t (1 - t)))`` on ``(0, 1)``, zero elsewhere."""
    t = np.asarray(t, dtype=np.float64)
    inside = (t > 0) & (t < 1)
    safe = np.where(inside, t, 0.5)
    return np.where(inside, np.exp(-1.0 / (safe * (1.0 - safe))), 0.0)


def plateau(t, width: float = DEFAULT_WIDTH):
    """Smooth plateau equal to 1 on ``[width, 1 - width]``, supported on ``[0, 1]``."""
    t = np.asarray(t, dtype=np.float64)
    return smooth_step(t / width) * smooth_step((1.0 - t) / width)


def _quad(f, a: float, b: float, points=(), tol: float = 1e-14) -> float:
    if b <= a:
        return 0.0
    pts = [p for p in points if a < p < b]
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(f, a, b, points=pts or None, epsabs=tol, epsrel=1e-12, limit=400)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(f"quadrature on [{a}, {b}] did not converge: {exc}") from exc
    if err > 1e-9:
        raise QuadratureError(f"quadrature error estimate {err:.2e} on [{a}, {b}]")
    return val


@dataclass(frozen=True)
class BumpFunction:
    """Smooth zero-mean, unit-L2 bump supported on ``[0, 1]^dim``.

    Call it on an ``(m, dim)`` array. ``integral`` and ``l2_squared`` are the
    values of ``int h`` and ``int h**2`` obtained by one-dimensional adaptive
    quadrature of the tensor factors.
    """

    dim: int
    profile: str
    width: float
    scale: float
    sup_norm: float
    integral: float
    l2_squared: float
    breakpoints: tuple = field(default=(), repr=False)

    def phi(self, t):
        if self.profile == "plateau":
            return plateau(t, self.width)
        return mollifier(t)

    def first_factor(self, t):
        """Profile times the odd factor on the first axis."""
        t = np.asarray(t, dtype=np.float64)
        return self.phi(t) * np.sin(2.0 * np.pi * t)

    def axis_factor(self, axis: int) -> Callable:
        return self.first_factor if axis == 0 else self.phi

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(-1, self.dim)
        val = self.scale * self.first_factor(x[:, 0])
        for j in range(1, self.dim):
            val = val * self.phi(x[:, j])
        return val

    def axis_derivative_sup(self, order: int, n: int = 200_001) -> float:
        """Largest sup-norm of an axis-aligned partial derivative of ``h`` of given order."""
        t = np.linspace(0.0, 1.0, n)
        step = t[1] - t[0]

        def sup_deriv(f):
            v = f(t)
            for _ in range(order):
                v = np.gradient(v, step)
            return float(np.max(np.abs(v)))

        phi_sup = sup_deriv(self.phi) if order else float(np.max(self.phi(t)))
        phi_max = float(np.max(self.phi(t)))
        first = sup_deriv(self.first_factor) * phi_max ** (self.dim - 1)
        if self.dim == 1:
            return self.scale * first
        other = float(np.max(np.abs(self.first_factor(t)))) * phi_sup * phi_max ** (self.dim - 2)
        return self.scale * max(first, other)

    def holder_constant(self, s: float) -> float:
        """``4 ||h^(floor s)||_inf  v  2 ||h^(floor s + 1)||_inf`` on a fine grid."""
        k = int(math.floor(s))
        return max(4.0 * self.axis_derivative_sup(k), 2.0 * self.axis_derivative_sup(k + 1))


@functools.lru_cache(maxsize=None)
def make_bump(d: int, profile: str = DEFAULT_PROFILE, width: float = DEFAULT_WIDTH) -> BumpFunction:
    """Build the normalized bump in dimension ``d``.

    ``profile="plateau"`` (default) uses a smooth plateau with transition
    width ``width``; ``profile="mollifier"`` uses ``exp(-1/(t(1-t)))``. The
    plateau keeps ``||h||_inf`` close to its minimum sqrt(2) in every
    dimension, which is what limits how strong an admissible alternative can
    be.
    """
    if d < 1:
        raise ValueError("dimension must be at least 1")
    if profile not in PROFILES:
        raise ValueError(f"profile must be one of {PROFILES}")
    if profile == "plateau" and not 0 < width <= 0.5:
        raise ValueError("plateau width must lie in (0, 0.5]")
    phi = (lambda t: float(plateau(t, width))) if profile == "plateau" else (lambda t: float(mollifier(t)))
    pts = (width, 0.5, 1.0 - width) if profile == "plateau" else (0.25, 0.5, 0.75)
    odd = lambda t: phi(t) * math.sin(2.0 * math.pi * t)  # noqa: E731

    sq_first = _quad(lambda t: odd(t) ** 2, 0.0, 1.0, pts)
    sq_phi = _quad(lambda t: phi(t) ** 2, 0.0, 1.0, pts)
    mean_first = _quad(odd, 0.0, 1.0, pts)
    mean_phi = _quad(phi, 0.0, 1.0, pts)
    scale = 1.0 / math.sqrt(sq_first * sq_phi ** (d - 1))

    # sup |phi(t) sin(2 pi t)| on the left half; the factor is odd about 1/2
    grid = np.linspace(0.0, 0.5, 20001)
    vals = np.abs(phi_vec(profile, width)(grid) * np.sin(2 * np.pi * grid))
    i = int(np.argmax(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    res = optimize.minimize_scalar(lambda t: -abs(odd(t)), bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-12})
    first_sup = max(float(vals[i]), -float(res.fun))
    phi_sup = 1.0 if profile == "plateau" else math.exp(-4.0)
    return BumpFunction(
        dim=d,
        profile=profile,
        width=width,
        scale=scale,
        sup_norm=scale * first_sup * phi_sup ** (d - 1),
        integral=scale * mean_first * mean_phi ** (d - 1),
        l2_squared=scale**2 * sq_first * sq_phi ** (d - 1),
        breakpoints=pts,
    )


def phi_vec(profile: str, width: float) -> Callable:
    return (lambda t: plateau(t, width)) if profile == "plateau" else mollifier


# -- the perturbed densities ----------------------------------------------------

@dataclass
class IngsterAlternative:
    """Density ``1 + rho sum_j signs[j] h_j`` on the ``kappa``-partition of ``[0,1]^dim``.

    ``signs`` is indexed by the lexicographic flattening of the 1-based cell
    keys, matching :func:`bingof.binning.flatten_keys`.
    """

    kappa: int
    rho: float
    signs: np.ndarray
    bump: BumpFunction
    dim: int

    def __post_init__(self):
        self.signs = np.asarray(self.signs, dtype=np.int8).ravel()
        if self.bump.dim != self.dim:
            raise ValueError(f"bump dimension {self.bump.dim} != {self.dim}")
        if self.signs.size != self.kappa**self.dim:
            raise ValueError(f"need {self.kappa ** self.dim} signs, got {self.signs.size}")
        if not np.isin(self.signs, (-1, 1)).all():
            raise ValueError("signs must be +1 or -1")
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")
        if self.amplitude > 1.0 + 1e-12:
            raise InadmissibleAlternativeError(
                f"rho * kappa^(d/2) * ||h||_inf = {self.amplitude:.4g} > 1 makes the density negative; "
                f"the largest admissible L2 signal is epsilon = {max_admissible_epsilon(self.bump):.4g}"
            )

    @classmethod
    def from_epsilon(cls, kappa: int, epsilon: float, d: int, signs=None, rng=None,
                     bump: BumpFunction | None = None) -> IngsterAlternative:
        """Alternative at L2 distance ``epsilon`` from the uniform density."""
        bump = bump or make_bump(d)
        if signs is None:
            signs = random_signs(kappa, d, rng)
        return cls(kappa, epsilon / kappa ** (d / 2.0), signs, bump, d)

    @property
    def epsilon(self) -> float:
        return self.rho * self.kappa ** (self.dim / 2.0)

    @property
    def amplitude(self) -> float:
        return self.epsilon * self.bump.sup_norm

    @property
    def envelope(self) -> float:
        """Upper bound ``1 + rho kappa^(d/2) ||h||_inf <= 2`` on the density."""
        return 1.0 + self.amplitude

    def holder_ratio(self, s: float, L: float = 1.0) -> float:
        """``rho kappa^(d/2 + s) C_h / L``; at most 1 guarantees Hoelder membership."""
        return self.rho * self.kappa ** (self.dim / 2.0 + s) * self.bump.holder_constant(s) / L

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(-1, self.dim)
        if self.rho == 0:
            return np.ones(x.shape[0])
        keys = _axis_indices(x, self.kappa)
        local = self.kappa * x - (keys - 1)
        j = flatten_keys(keys, self.kappa)
        return 1.0 + self.rho * self.kappa ** (self.dim / 2.0) * self.signs[j] * self.bump(local)


def max_admissible_epsilon(bump: BumpFunction) -> float:
    return 1.0 / bump.sup_norm


def ingster_density(alt: IngsterAlternative) -> Callable:
    """Pointwise evaluator of the perturbed density."""
    return alt.__call__


def l2_distance_to_null(alt: IngsterAlternative) -> float:
    """``||f - 1||_2 = rho * kappa**(d/2)``."""
    return alt.epsilon


def random_signs(kappa: int, d: int, seed=None) -> np.ndarray:
    """IID Rademacher vector of length ``kappa**d``."""
    n = kappa**d
    if n > 10**8:
        raise MemoryError(f"{n} signs requested")
    rng = as_generator(seed)
    return (2 * rng.integers(0, 2, size=n, dtype=np.int8) - 1).astype(np.int8)


def sample_uniform(m: int, d: int, seed=None) -> np.ndarray:
    return as_generator(seed).random((m, d))


def sample_ingster(alt: IngsterAlternative, m: int, seed=None, return_acceptance: bool = False):
    """Draw ``m`` points from ``alt`` by rejection from uniform proposals.

    The envelope ``1 + rho kappa^(d/2) ||h||_inf`` is at most 2, so at least
    half of the proposals are accepted on average.
    """
    rng = as_generator(seed)
    d, env = alt.dim, alt.envelope
    out = np.empty((m, d))
    filled = proposed = 0
    while filled < m:
        batch = int(math.ceil((m - filled) * env * 1.1)) + 16
        prop = rng.random((batch, d))
        u = rng.random(batch)
        idx = np.flatnonzero(u * env <= alt(prop))
        take = min(idx.size, m - filled)
        out[filled:filled + take] = prop[idx[:take]]
        # proposals after the last point used are not counted
        proposed += batch if take == idx.size else int(idx[take - 1]) + 1
        filled += take
    if return_acceptance:
        return out, m / proposed if proposed else 1.0
    return out


# -- cell masses and quadrature ------------------------------------------------

def _axis_overlap_integrals(bump: BumpFunction, axis: int, kappa_alt: int, kappa_bins: int) -> np.ndarray:
    """``A[i, l] = int over (alt cell i  n  bin l) of factor(kappa_alt x - i) dx``."""
    f = bump.axis_factor(axis)
    g = lambda t: float(f(t))  # noqa: E731
    A = np.zeros((kappa_alt, kappa_bins))
    for i in range(kappa_alt):
        lo_c, hi_c = i / kappa_alt, (i + 1) / kappa_alt
        for l in range(int(math.floor(lo_c * kappa_bins)), min(kappa_bins, int(math.ceil(hi_c * kappa_bins)))):
            lo, hi = max(lo_c, l / kappa_bins), min(hi_c, (l + 1) / kappa_bins)
            if hi > lo:
                A[i, l] = _quad(g, lo * kappa_alt - i, hi * kappa_alt - i, bump.breakpoints) / kappa_alt
    return A


def cell_masses(alt: IngsterAlternative, kappa: int) -> np.ndarray:
    """Probabilities of the cells of the ``kappa``-partition under ``alt``.

    Returned as a dense array of shape ``(kappa,) * d``; exploits the tensor
    structure of the bump.
    """
    d = alt.dim
    base = np.full((kappa,) * d, float(kappa) ** (-d))
    if alt.rho == 0:
        return base
    T = alt.signs.astype(np.float64).reshape((alt.kappa,) * d)
    for j in range(d):
        A = _axis_overlap_integrals(alt.bump, j, alt.kappa, kappa)
        T = np.moveaxis(np.tensordot(T, A, axes=([j], [0])), -1, j)
    return base + alt.rho * alt.kappa ** (d / 2.0) * alt.bump.scale * T


def integrate_cells(func: Callable, kappa: int, d: int, tol: float | None = None, max_order: int = 256,
                    max_points: int = 4_000_000, mc_points: int = 1_000_000, seed=0) -> tuple[float, float]:
    """Integral of ``func`` over ``[0,1]^d`` and an error estimate.

    For ``d <= 4`` a tensor Gauss-Legendre rule is applied on every cell of
    the ``kappa``-partition and its order doubled until two successive
    results agree to ``tol``. Higher dimensions fall back to Monte Carlo and
    report its standard error.
    """
    if tol is None:
        tol = 1e-8 * 10.0 ** (d - 1)
    if d > 4:
        rng = as_generator(seed)
        vals = func(rng.random((mc_points, d)))
        return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(mc_points))
    prev, change = None, math.inf
    order = 8
    while True:
        n_pts = kappa**d * order**d
        if n_pts > max_points or order > max_order:
            if prev is None:
                raise QuadratureError("quadrature budget exhausted before a first estimate")
            raise QuadratureError(f"no convergence to {tol:g} (last change {change:.2e})")
        cur = _gauss_cells(func, kappa, d, order)
        if prev is not None:
            change = abs(cur - prev)
            if change <= tol:
                return cur, change
        prev = cur
        order *= 2


def _gauss_cells(func: Callable, kappa: int, d: int, order: int) -> float:
    nodes, weights = leggauss(order)
    nodes = (nodes + 1.0) / (2.0 * kappa)
    weights = weights / (2.0 * kappa)
    offsets = np.arange(kappa) / kappa
    xs = (offsets[:, None] + nodes[None, :]).ravel()
    ws = np.tile(weights, kappa)
    grids = np.meshgrid(*([xs] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    w = ws
    for _ in range(d - 1):
        w = np.multiply.outer(w, ws)
    return float(np.dot(w.ravel(), func(pts)))


# -- low intrinsic dimension ----------------------------------------------------

@dataclass(frozen=True)
class SurfaceSpec:
    """Surface ``sigma([0,1]^intrinsic_dim)`` inside ``[0,1]^dim``."""

    intrinsic_dim: int
    dim: int
    sigma: Callable
    smoothness: float = math.inf
    name: str = "custom"

    def __post_init__(self):
        if not 1 <= self.intrinsic_dim <= self.dim:
            raise ValueError("need 1 <= intrinsic_dim <= dim")


def axis_embedding(d0: int, d: int) -> SurfaceSpec:
    """``x -> (x, 0, ..., 0)``."""

    def sigma(u):
        out = np.zeros((u.shape[0], d))
        out[:, :d0] = u
        return out

    return SurfaceSpec(d0, d, sigma, name="axis")


def identity_embedding(d: int) -> SurfaceSpec:
    return SurfaceSpec(d, d, lambda u: np.array(u, dtype=np.float64, copy=True), name="identity")


def curve_embedding(d: int) -> SurfaceSpec:
    """Smooth closed-form curve ``t -> (t, 1/2 + 0.4 sin(2 pi k t + k), ...)``."""

    def sigma(u):
        t = u[:, 0]
        cols = [t] + [0.5 + 0.4 * np.sin(2 * np.pi * (k + 1) * t + k) for k in range(1, d)]
        return np.stack(cols, axis=1)

    return SurfaceSpec(1, d, sigma, name="curve")


def embed_surface(base, spec: SurfaceSpec) -> np.ndarray:
    """Push a sample on ``[0,1]^d0`` through ``spec.sigma``."""
    u = as_sample(base, spec.intrinsic_dim, "base")
    out = np.asarray(spec.sigma(u), dtype=np.float64)
    if out.shape != (u.shape[0], spec.dim):
        raise ValueError(f"sigma returned shape {out.shape}, expected {(u.shape[0], spec.dim)}")
    bad = ~((out >= 0) & (out <= 1)).all(axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise DomainError(f"sigma maps base point {i} ({u[i].tolist()}) to {out[i].tolist()}, outside the cube")
    return out


# -- curse of dimensionality ----------------------------------------------------

def empty_cube_probability(m: int, d: int, epsilon: float, C: float = 1.0) -> float:
    """Lower bound ``(1 - C (1 - 2 eps)^d)^m`` on P(no point in ``[eps, 1-eps]^d``)."""
    if not 0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 1/2)")
    if C < 1:
        raise ValueError("C must be at least 1")
    inner = C * (1.0 - 2.0 * epsilon) ** d
    if inner >= 1.0:
        return 0.0
    return float(min(1.0, math.exp(m * math.log1p(-inner))))
