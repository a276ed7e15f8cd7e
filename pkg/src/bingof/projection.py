"""Cell-averaging projection on a uniform midpoint grid.

Functions on ``[0,1]^d`` are represented by their values at the midpoints of
an ``R``-per-axis grid. ``w_kappa`` replaces every value by the average over
its cell of the ``kappa``-partition, which on the grid is an orthogonal
projection: linear, idempotent and an L2 contraction.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class GridFunction:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim < 1 or v.ndim > 3 or len(set(v.shape)) != 1:
            raise ValueError(f"values must be a cubic grid in 1 to 3 dimensions, got shape {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def resolution(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_callable(cls, f: Callable, resolution: int, dim: int = 1) -> GridFunction:
        """Sample ``f`` (taking ``dim`` coordinate arrays) at grid midpoints."""
        t = (np.arange(resolution) + 0.5) / resolution
        grids = np.meshgrid(*([t] * dim), indexing="ij")
        return cls(np.broadcast_to(f(*grids), (resolution,) * dim))

    def __add__(self, other: GridFunction) -> GridFunction:
        return GridFunction(self.values + other.values)

    def __sub__(self, other: GridFunction) -> GridFunction:
        return GridFunction(self.values - other.values)

    def __mul__(self, c: float) -> GridFunction:
        return GridFunction(self.values * c)

    __rmul__ = __mul__


def w_kappa(h: GridFunction, kappa: int) -> GridFunction:
    """Replace ``h`` on each cell of the ``kappa``-partition by its cell mean."""
    R, d = h.resolution, h.dim
    if kappa < 1 or R % kappa:
        raise ValueError(f"grid resolution {R} is not divisible by kappa={kappa}")
    w = R // kappa
    shape = []
    for _ in range(d):
        shape += [kappa, w]
    blocks = h.values.reshape(shape)
    inner = tuple(range(1, 2 * d, 2))
    means = blocks.mean(axis=inner, keepdims=True)
    # a constant block must map to itself bit for bit
    const = blocks.max(axis=inner, keepdims=True) == blocks.min(axis=inner, keepdims=True)
    means = np.where(const, blocks.max(axis=inner, keepdims=True), means)
    return GridFunction(np.broadcast_to(means, blocks.shape).reshape((R,) * d))


def l2_norm(h: GridFunction) -> float:
    """Midpoint-rule L2 norm on the unit cube."""
    return float(np.sqrt(np.mean(h.values**2)))


@dataclass(frozen=True)
class SweepRow:
    kappa: int
    projected_norm: float
    norm: float

    @property
    def gap(self) -> float:
        return self.norm - self.projected_norm


def approx_inequality_sweep(h: GridFunction, s: float, kappa_list) -> list[SweepRow]:
    """``(kappa, ||W_kappa h||, ||h||)`` for every ``kappa`` in the list.

    ``s`` is the declared smoothness of ``h``; it only enters
    :func:`decay_exponent`, which compares the fitted slope with ``-s``.
    """
    if s <= 0:
        raise ValueError("smoothness must be positive")
    norm = l2_norm(h)
    return [SweepRow(int(k), l2_norm(w_kappa(h, int(k))), norm) for k in kappa_list]


def decay_exponent(rows: list[SweepRow]) -> tuple[float, float]:
    """Log-log slope of the norm gap against ``kappa``, with its standard error.

    Rows whose gap has underflowed to zero (exactly representable functions)
    are dropped.
    """
    k = np.array([r.kappa for r in rows], dtype=np.float64)
    g = np.array([r.gap for r in rows])
    keep = g > 0
    if keep.sum() < 2:
        raise ValueError("fewer than two positive gaps to fit")
    fit = stats.linregress(np.log(k[keep]), np.log(g[keep]))
    return float(fit.slope), float(fit.stderr)
