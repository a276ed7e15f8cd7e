"""Regular partition of the unit hypercube and sparse bin counting.

The cube ``[0, 1]^d`` is split into ``kappa**d`` congruent cells
``((k_j - 1)/kappa, k_j/kappa]`` indexed by 1-based integer vectors. A
coordinate equal to 0 is assigned to cell 1 so that the cells cover the
closed cube.

Only occupied cells are ever stored, which keeps memory proportional to the
sample size and makes the counting cost depend on the intrinsic rather than
the ambient dimension of the data.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

_INT64_MAX = np.iinfo(np.int64).max
_SPLITTER = 134217729.0  # 2**27 + 1, Veltkamp split constant


class DomainError(ValueError):
    """Raised when data fall outside the unit hypercube."""


class CellCount(NamedTuple):
    """Number of cells in a partition.

    ``value`` is an exact Python integer; ``fits_int64`` tells whether it can
    also be represented by a native 64-bit integer.
    """

    value: int
    fits_int64: bool

    def __float__(self) -> float:
        return float(self.value)


@dataclass(frozen=True)
class BinSpec:
    """Partition of ``[0, 1]^dim`` into ``kappa`` bins per axis."""

    kappa: int
    dim: int

    def __post_init__(self):
        if int(self.kappa) != self.kappa or self.kappa < 1:
            raise ValueError(f"kappa must be a positive integer, got {self.kappa!r}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim!r}")
        object.__setattr__(self, "kappa", int(self.kappa))
        object.__setattr__(self, "dim", int(self.dim))

    @property
    def flat_keys(self) -> bool:
        """True when cell keys can be flattened into a single int64."""
        return total_cells(self).fits_int64


def total_cells(spec: BinSpec) -> CellCount:
    """Return ``kappa**dim`` without overflow."""
    value = spec.kappa**spec.dim
    return CellCount(value, value <= _INT64_MAX)


def as_sample(points, dim: int | None = None, name: str = "sample") -> np.ndarray:
    """Coerce ``points`` to a float array of shape ``(m, d)``.

    A 1-D input is read as ``m`` scalar observations when ``dim`` is 1 or
    unspecified. Raises :class:`DomainError` if a coordinate lies outside
    ``[0, 1]`` (NaN included).
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        if dim not in (None, 1) and x.size:
            raise ValueError(f"{name} is one-dimensional but dim={dim}; pass an (m, d) array")
        x = x.reshape(-1, dim or 1)
    elif x.ndim != 2:
        raise ValueError(f"{name} must be a 2-D array of shape (m, d), got shape {x.shape}")
    if dim is not None and x.shape[1] != dim:
        raise ValueError(f"{name} has {x.shape[1]} columns, expected {dim}")
    _check_domain(x, name)
    return x


def _check_domain(x: np.ndarray, name: str = "sample") -> None:
    bad = ~((x >= 0.0) & (x <= 1.0))
    if bad.any():
        row, axis = np.argwhere(bad)[0]
        raise DomainError(
            f"{name}: coordinate on axis {axis} of point {row} is {x[row, axis]!r}, outside [0, 1]"
        )


def _two_product_error(a: np.ndarray, b: float) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(p, e)`` with ``p = fl(a*b)`` and ``a*b == p + e`` exactly."""
    p = a * b
    c = _SPLITTER * a
    ah = c - (c - a)
    al = a - ah
    c = _SPLITTER * b
    bh = c - (c - b)
    bl = b - bh
    e = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, e


def _axis_indices(x: np.ndarray, kappa: int) -> np.ndarray:
    # ceil(kappa * x) evaluated on the exact product: rounding is monotone, so
    # fl(kappa * x) can only mislead when it lands exactly on an integer.
    p, e = _two_product_error(x, float(kappa))
    k = np.ceil(p)
    k += (k == p) & (e > 0)
    np.clip(k, 1, kappa, out=k)
    return k.astype(np.int64)


def bin_indices(points, spec: BinSpec) -> np.ndarray:
    """Vectorised :func:`bin_index`: 1-based cell coordinates, shape ``(m, d)``."""
    x = as_sample(points, spec.dim)
    return _axis_indices(x, spec.kappa)


def bin_index(point, spec: BinSpec) -> tuple[int, ...]:
    """Return the 1-based cell key of a single point.

    >>> bin_index((0.6, 0.2), BinSpec(2, 2))
    (2, 1)
    >>> bin_index((0.5, 1.0), BinSpec(2, 2))
    (1, 2)
    """
    x = np.asarray(point, dtype=np.float64).reshape(1, -1)
    if x.shape[1] != spec.dim:
        raise ValueError(f"point has {x.shape[1]} coordinates, expected {spec.dim}")
    _check_domain(x, "point")
    return tuple(int(k) for k in _axis_indices(x, spec.kappa)[0])


def flatten_keys(keys: np.ndarray, kappa: int) -> np.ndarray:
    """Lexicographic flattening of 1-based keys into 0-based int64 codes."""
    keys = np.asarray(keys, dtype=np.int64)
    codes = np.zeros(keys.shape[0], dtype=np.int64)
    for j in range(keys.shape[1]):
        codes *= kappa
        codes += keys[:, j] - 1
    return codes


def unflatten_codes(codes: np.ndarray, spec: BinSpec) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.int64).copy()
    keys = np.empty((codes.shape[0], spec.dim), dtype=np.int64)
    for j in range(spec.dim - 1, -1, -1):
        keys[:, j] = codes % spec.kappa + 1
        codes //= spec.kappa
    return keys


def cell_codes(points, spec: BinSpec) -> np.ndarray:
    """Per-point cell identifiers suitable for equality grouping.

    Returns int64 flat codes when ``kappa**d`` fits in an int64, otherwise the
    ``(m, d)`` key matrix itself.
    """
    keys = bin_indices(points, spec)
    if spec.flat_keys:
        return flatten_keys(keys, spec.kappa)
    return keys


@dataclass(frozen=True)
class SparseCounts:
    """Occupancy counts of the occupied cells of a partition.

    ``keys`` holds the 1-based cell coordinates in lexicographic order and
    ``counts`` the matching positive counts.
    """

    spec: BinSpec
    keys: np.ndarray
    counts: np.ndarray
    total: int
    _codes: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.keys.shape != (self.counts.shape[0], self.spec.dim):
            raise ValueError("keys and counts disagree in length or dimension")
        if self.counts.size and self.counts.min() <= 0:
            raise ValueError("SparseCounts stores occupied cells only")
        if int(self.counts.sum()) != self.total:
            raise ValueError("stored counts do not sum to total")

    def __len__(self) -> int:
        return int(self.counts.shape[0])

    @property
    def codes(self) -> np.ndarray:
        """Flat int64 codes of the occupied cells (only when they fit)."""
        if self._codes is None:
            if not self.spec.flat_keys:
                raise OverflowError("kappa**d exceeds int64; use keys instead of flat codes")
            object.__setattr__(self, "_codes", flatten_keys(self.keys, self.spec.kappa))
        return self._codes

    def as_dict(self) -> dict[tuple[int, ...], int]:
        return {tuple(int(v) for v in k): int(c) for k, c in zip(self.keys, self.counts)}

    def to_dense(self) -> np.ndarray:
        """Dense count array of shape ``(kappa,) * d``; only for small partitions."""
        n_cells = total_cells(self.spec).value
        if n_cells > 10**8:
            raise MemoryError(f"refusing to materialise {n_cells} cells")
        dense = np.zeros((self.spec.kappa,) * self.spec.dim, dtype=np.int64)
        if len(self):
            dense[tuple((self.keys - 1).T)] = self.counts
        return dense

    @classmethod
    def from_dict(cls, mapping: dict, spec: BinSpec) -> SparseCounts:
        items = sorted((tuple(k), int(c)) for k, c in mapping.items() if int(c) != 0)
        if any(c < 0 for _, c in items):
            raise ValueError("counts must be nonnegative")
        keys = np.array([k for k, _ in items], dtype=np.int64).reshape(-1, spec.dim)
        if keys.size and ((keys < 1) | (keys > spec.kappa)).any():
            raise ValueError("cell key outside [1, kappa]")
        counts = np.array([c for _, c in items], dtype=np.int64)
        return cls(spec, keys, counts, int(counts.sum()))


def count_bins(sample, spec: BinSpec) -> SparseCounts:
    """Sparse occupancy counts of ``sample`` on the partition ``spec``.

    Examples
    --------
    >>> count_bins([0.1, 0.2, 0.9], BinSpec(2, 1)).as_dict()
    {(1,): 2, (2,): 1}
    """
    x = as_sample(sample, spec.dim)
    keys = _axis_indices(x, spec.kappa)
    if spec.flat_keys:
        codes, counts = np.unique(flatten_keys(keys, spec.kappa), return_counts=True)
        return SparseCounts(spec, unflatten_codes(codes, spec), counts.astype(np.int64), x.shape[0], codes)
    uniq, counts = np.unique(keys, axis=0, return_counts=True)
    return SparseCounts(spec, uniq.reshape(-1, spec.dim), counts.astype(np.int64), x.shape[0])
