import math

import numpy as np
import pytest
from scipy import stats

from bingof.binning import BinSpec, count_bins
from bingof.generators import (
    IngsterAlternative,
    InadmissibleAlternativeError,
    axis_embedding,
    cell_masses,
    curve_embedding,
    embed_surface,
    empty_cube_probability,
    identity_embedding,
    integrate_cells,
    l2_distance_to_null,
    make_bump,
    max_admissible_epsilon,
    random_signs,
    sample_ingster,
    sample_uniform,
)


@pytest.fixture(params=["plateau", "mollifier"])
def profile(request):
    return request.param


class TestBump:
    def test_zero_mean_unit_norm_1d(self, profile):
        h = make_bump(1, profile)
        # ten cells put the plateau's transition points on cell edges
        mean, _ = integrate_cells(h, 10, 1, tol=1e-11)
        sq, _ = integrate_cells(lambda x: h(x) ** 2, 10, 1, tol=1e-11)
        assert abs(mean) < 1e-8
        assert sq == pytest.approx(1.0, abs=1e-6)

    def test_zero_mean_unit_norm_2d(self, profile):
        h = make_bump(2, profile)
        mean, _ = integrate_cells(h, 10, 2, tol=1e-9)
        sq, _ = integrate_cells(lambda x: h(x) ** 2, 10, 2, tol=1e-9)
        assert abs(mean) < 1e-8
        assert sq == pytest.approx(1.0, abs=1e-6)

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_vanishes_on_boundary(self, profile, d):
        h = make_bump(d, profile)
        rng = np.random.default_rng(d)
        x = rng.random((200, d))
        x[np.arange(200), rng.integers(0, d, 200)] = rng.integers(0, 2, 200)
        assert np.abs(h(x)).max() < 1e-12

    def test_antisymmetry(self, profile):
        h = make_bump(2, profile)
        x = np.random.default_rng(0).random((500, 2))
        mirrored = x.copy()
        mirrored[:, 0] = 1 - mirrored[:, 0]
        np.testing.assert_allclose(h(x), -h(mirrored), atol=1e-12)

    @pytest.mark.parametrize("d", [1, 2])
    def test_sup_norm(self, profile, d):
        h = make_bump(d, profile)
        t = np.linspace(0, 1, 4001)
        if d == 1:
            grid_max = np.abs(h(t[:, None])).max()
        else:
            # the maximum sits at the peak of the second factor, t = 1/2
            pts = np.stack([t, np.full_like(t, 0.5)], axis=1)
            grid_max = np.abs(h(pts)).max()
        assert h.sup_norm >= grid_max - 1e-12
        assert h.sup_norm == pytest.approx(grid_max, rel=1e-5)

    def test_invalid(self):
        with pytest.raises(ValueError):
            make_bump(0)
        with pytest.raises(ValueError):
            make_bump(1, "box")


class TestIngsterDensity:
    def test_null_embedding(self):
        alt = IngsterAlternative.from_epsilon(4, 0.0, 2, rng=0)
        x = np.random.default_rng(0).random((100, 2))
        np.testing.assert_array_equal(alt(x), np.ones(100))

    def test_locality(self):
        kappa, d = 3, 2
        alt = IngsterAlternative.from_epsilon(kappa, 0.3, d, rng=1)
        x = np.array([[0.4, 0.9]])  # cell (2, 3)
        j = (2 - 1) * kappa + (3 - 1)
        local = kappa * x - np.array([[1, 2]])
        want = 1 + alt.rho * kappa ** (d / 2) * alt.signs[j] * alt.bump(local)
        np.testing.assert_allclose(alt(x), want, rtol=1e-14)

    @pytest.mark.parametrize("kappa,d,eps", [(1, 1, 0.5), (5, 1, 0.3), (16, 1, 0.6), (3, 2, 0.4), (6, 2, 0.2)])
    def test_integrates_to_one(self, kappa, d, eps):
        alt = IngsterAlternative.from_epsilon(kappa, eps, d, rng=kappa + d)
        total, _ = integrate_cells(alt, kappa, d, tol=1e-9)
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_l2_closed_form(self):
        alt = IngsterAlternative(16, 0.01, random_signs(16, 1, 0), make_bump(1), 1)
        assert l2_distance_to_null(alt) == pytest.approx(0.04)
        assert l2_distance_to_null(IngsterAlternative.from_epsilon(5, 0.0, 1, rng=0)) == 0.0

    @pytest.mark.parametrize("kappa,d,eps", [(7, 1, 0.5), (4, 2, 0.3)])
    def test_l2_matches_quadrature(self, kappa, d, eps):
        alt = IngsterAlternative.from_epsilon(kappa, eps, d, rng=3)
        sq, _ = integrate_cells(lambda x: (alt(x) - 1.0) ** 2, 10 * kappa, d, tol=1e-9)
        assert math.sqrt(sq) == pytest.approx(l2_distance_to_null(alt), abs=1e-5)

    def test_nonnegative_at_admissible_limit(self):
        bump = make_bump(2)
        alt = IngsterAlternative.from_epsilon(3, max_admissible_epsilon(bump), 2, rng=0, bump=bump)
        x = np.random.default_rng(0).random((200_000, 2))
        assert alt(x).min() >= -1e-12
        assert alt.envelope <= 2 + 1e-12

    def test_inadmissible(self):
        bump = make_bump(1)
        with pytest.raises(InadmissibleAlternativeError, match="largest admissible"):
            IngsterAlternative.from_epsilon(4, 1.01 * max_admissible_epsilon(bump), 1, rng=0)

    def test_bad_signs(self):
        with pytest.raises(ValueError):
            IngsterAlternative(2, 0.1, np.array([1, 0]), make_bump(1), 1)
        with pytest.raises(ValueError):
            IngsterAlternative(2, 0.1, np.array([1, 1, 1]), make_bump(1), 1)


class TestCellMasses:
    def test_sum_to_one(self):
        alt = IngsterAlternative.from_epsilon(3, 0.5, 2, rng=0)
        assert cell_masses(alt, 7).sum() == pytest.approx(1.0, abs=1e-12)

    def test_aligned_partition_is_blind(self):
        # every bump integrates to zero over its own cell
        alt = IngsterAlternative.from_epsilon(5, 0.6, 1, rng=0)
        np.testing.assert_allclose(cell_masses(alt, 5), np.full(5, 0.2), atol=1e-12)

    def test_matches_gauss_quadrature(self):
        alt = IngsterAlternative.from_epsilon(3, 0.5, 1, rng=4)
        kappa = 4
        masses = cell_masses(alt, kappa)
        for l in range(kappa):
            def f(x, l=l):
                inside = (x[:, 0] > l / kappa) & (x[:, 0] <= (l + 1) / kappa)
                return np.where(inside, alt(x), 0.0)
            # 60 sub-cells align with both partitions and the plateau's transition points
            got, _ = integrate_cells(f, 60, 1, tol=1e-11)
            assert masses[l] == pytest.approx(got, abs=1e-10)


class TestSampling:
    def test_null_is_uniform(self):
        alt = IngsterAlternative.from_epsilon(4, 0.0, 3, rng=0)
        pvals = []
        for r in range(20):
            x = sample_ingster(alt, 500, r)
            pvals += [stats.kstest(x[:, j], "uniform").pvalue for j in range(3)]
        # per-axis KS at level 0.01: allow a few chance rejections out of 60
        assert sum(p < 0.01 for p in pvals) <= 3

    def test_acceptance_rate(self):
        alt = IngsterAlternative.from_epsilon(4, max_admissible_epsilon(make_bump(2)), 2, rng=0)
        _, rate = sample_ingster(alt, 20_000, 1, return_acceptance=True)
        assert rate >= 0.5 - 3 * math.sqrt(0.25 / 20_000)

    def test_cell_frequencies(self):
        alt = IngsterAlternative.from_epsilon(2, 0.6, 1, rng=2)
        kappa, m = 6, 100_000
        x = sample_ingster(alt, m, 3)
        p = cell_masses(alt, kappa).ravel()
        counts = count_bins(x, BinSpec(kappa, 1)).to_dense().ravel()
        se = np.sqrt(m * p * (1 - p))
        assert np.all(np.abs(counts - m * p) <= 4 * se)
        assert np.abs(p - 1 / kappa).max() > 0.01  # the alternative is visible at this scale

    def test_deterministic(self):
        alt = IngsterAlternative.from_epsilon(3, 0.4, 2, rng=0)
        np.testing.assert_array_equal(sample_ingster(alt, 100, 9), sample_ingster(alt, 100, 9))

    def test_uniform_in_cube(self):
        x = sample_uniform(1000, 4, 0)
        assert x.shape == (1000, 4) and x.min() >= 0 and x.max() <= 1


class TestSigns:
    def test_values(self):
        s = random_signs(5, 2, 0)
        assert s.shape == (25,)
        assert set(np.unique(s)) <= {-1, 1}

    def test_mean_shrinks(self):
        for n in (100, 10_000, 1_000_000):
            kappa = int(round(n ** 0.5))
            s = random_signs(kappa, 2, kappa)
            assert abs(s.mean()) <= 4 / math.sqrt(s.size)


class TestSurfaces:
    def test_axis_slice_occupancy(self):
        base = sample_uniform(5000, 1, 0)
        x = embed_surface(base, axis_embedding(1, 3))
        for kappa in (4, 16, 64):
            assert len(count_bins(x, BinSpec(kappa, 3))) <= kappa

    def test_curve_box_counting(self):
        base = sample_uniform(200_000, 1, 1)
        x = embed_surface(base, curve_embedding(3))
        ks = np.array([8, 16, 32, 64, 128])
        occ = [len(count_bins(x, BinSpec(int(k), 3))) for k in ks]
        slope = stats.linregress(np.log(ks), np.log(occ)).slope
        assert slope == pytest.approx(1.0, abs=0.2)

    def test_identity(self):
        base = sample_uniform(50, 3, 2)
        np.testing.assert_array_equal(embed_surface(base, identity_embedding(3)), base)

    def test_bad_dims(self):
        with pytest.raises(ValueError):
            axis_embedding(4, 3)


class TestEmptyCube:
    def test_closed_form(self):
        assert empty_cube_probability(100, 10, 0.25) == pytest.approx((1 - 2.0**-10) ** 100, rel=1e-12)
        assert empty_cube_probability(100, 10, 0.25) == pytest.approx(0.9069, abs=1e-4)

    def test_vanishing_cube(self):
        assert empty_cube_probability(10**6, 2, 0.5 - 1e-9) == pytest.approx(1.0, abs=1e-3)

    def test_invalid(self):
        with pytest.raises(ValueError):
            empty_cube_probability(10, 2, 0.5)
