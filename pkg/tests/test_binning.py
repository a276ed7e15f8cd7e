import math
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bingof.binning import (
    BinSpec,
    DomainError,
    SparseCounts,
    bin_index,
    bin_indices,
    count_bins,
    flatten_keys,
    total_cells,
    unflatten_codes,
)


def exact_cell(x: float, kappa: int) -> int:
    """ceil(kappa * x) in exact rational arithmetic, with 0 sent to cell 1."""
    if x == 0.0:
        return 1
    return math.ceil(Fraction(x) * kappa)


class TestBinIndex:
    def test_interior_point(self):
        assert bin_index((0.6, 0.2), BinSpec(2, 2)) == (2, 1)

    def test_right_endpoint_is_closed(self):
        assert bin_index((0.5, 1.0), BinSpec(2, 2)) == (1, 2)

    def test_zero_goes_to_first_cell(self):
        assert bin_index((0.0,), BinSpec(4, 1)) == (1,)

    @pytest.mark.parametrize("bad", [1.7, -0.1, float("nan"), float("inf")])
    def test_out_of_domain(self, bad):
        with pytest.raises(DomainError):
            bin_index((0.5, bad), BinSpec(3, 2))

    def test_wrong_dimension(self):
        with pytest.raises(ValueError):
            bin_index((0.5,), BinSpec(3, 2))

    def test_grid_boundaries_are_exact(self):
        # k / kappa rounded to the nearest double sits on either side of the
        # true boundary; the exact ceiling decides which
        for kappa in (3, 7, 10, 49, 1000, 12345):
            x = np.arange(0, kappa + 1) / kappa
            got = bin_indices(x[:, None], BinSpec(kappa, 1))[:, 0]
            want = [exact_cell(float(v), kappa) for v in x]
            assert got.tolist() == want

    @settings(max_examples=300, deadline=None)
    @given(
        x=st.floats(min_value=0.0, max_value=1.0, allow_nan=False),
        kappa=st.integers(min_value=1, max_value=2**40),
    )
    def test_matches_rational_ceiling(self, x, kappa):
        assert bin_index((x,), BinSpec(kappa, 1)) == (exact_cell(x, kappa),)

    @settings(max_examples=100, deadline=None)
    @given(k=st.integers(1, 10**6), kappa=st.integers(1, 10**6))
    def test_near_boundaries(self, k, kappa):
        k = min(k, kappa)
        b = k / kappa
        for x in (np.nextafter(b, 0.0), b, np.nextafter(b, 1.0)):
            if 0.0 <= x <= 1.0:
                assert bin_index((float(x),), BinSpec(kappa, 1)) == (exact_cell(float(x), kappa),)


class TestTotalCells:
    def test_small(self):
        assert total_cells(BinSpec(2, 10)) == (1024, True)
        assert total_cells(BinSpec(1, 7)).value == 1

    def test_exceeds_int64(self):
        c = total_cells(BinSpec(16, 20))
        assert c.value == 2**80
        assert not c.fits_int64

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            BinSpec(0, 2)
        with pytest.raises(ValueError):
            BinSpec(2, 0)


class TestCountBins:
    def test_hand_example(self):
        c = count_bins([0.1, 0.2, 0.9], BinSpec(2, 1))
        assert c.as_dict() == {(1,): 2, (2,): 1}
        assert c.total == 3

    def test_empty(self):
        c = count_bins(np.empty((0, 2)), BinSpec(3, 2))
        assert c.as_dict() == {}
        assert c.total == 0
        assert len(c) == 0

    def test_matches_direct_loop(self):
        x = np.random.default_rng(0).random((1000, 3))
        c = count_bins(x, BinSpec(4, 3))
        loop = Counter(tuple(exact_cell(v, 4) for v in row) for row in x.tolist())
        assert c.as_dict() == dict(loop)
        assert c.total == 1000 == int(c.counts.sum())

    def test_dense_roundtrip(self):
        x = np.random.default_rng(1).random((200, 2))
        c = count_bins(x, BinSpec(5, 2))
        dense = c.to_dense()
        assert dense.sum() == 200
        assert SparseCounts.from_dict(
            {tuple(int(i) + 1 for i in idx): int(v) for idx, v in np.ndenumerate(dense)}, c.spec
        ).as_dict() == c.as_dict()

    def test_huge_partition_keeps_keys(self):
        # 16**20 cells do not fit an int64 code
        x = np.random.default_rng(2).random((50, 20))
        c = count_bins(x, BinSpec(16, 20))
        assert c.total == 50
        assert len(c) == 50  # collisions are astronomically unlikely
        with pytest.raises(OverflowError):
            c.codes

    def test_from_dict_rejects_bad_keys(self):
        with pytest.raises(ValueError):
            SparseCounts.from_dict({(3,): 1}, BinSpec(2, 1))
        with pytest.raises(ValueError):
            SparseCounts.from_dict({(1,): -1}, BinSpec(2, 1))


@settings(max_examples=50, deadline=None)
@given(kappa=st.integers(1, 30), d=st.integers(1, 4), seed=st.integers(0, 2**32 - 1))
def test_flatten_roundtrip(kappa, d, seed):
    spec = BinSpec(kappa, d)
    keys = np.random.default_rng(seed).integers(1, kappa + 1, size=(20, d))
    codes = flatten_keys(keys, kappa)
    assert ((0 <= codes) & (codes < kappa**d)).all()
    np.testing.assert_array_equal(unflatten_codes(codes, spec), keys)
