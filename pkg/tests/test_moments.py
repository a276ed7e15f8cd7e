import itertools

import numpy as np
import pytest

from bingof.moments import (
    ChebConfig,
    brute_force_moments,
    cheb_power_condition,
    cheb_rejection_cutoff,
    cheb_threshold,
    expected_T,
    var_T_bound,
)
from bingof.statistics import ContractError


def sequence_moments(p, q, m):
    """Mean and variance of T by enumerating every pair of outcome sequences."""
    K = len(p)
    mean = second = 0.0
    for a in itertools.product(range(K), repeat=m):
        pa = np.prod([p[i] for i in a])
        if pa == 0:
            continue
        M = np.bincount(a, minlength=K)
        for b in itertools.product(range(K), repeat=m):
            w = pa * np.prod([q[i] for i in b])
            if w == 0:
                continue
            T = float(np.sum((M - np.bincount(b, minlength=K)) ** 2))
            mean += w * T
            second += w * T * T
    return mean, second - mean * mean


def random_dist(rng, k):
    return rng.dirichlet(np.ones(k))


class TestExpectedT:
    def test_balanced(self):
        assert expected_T([0.5, 0.5], [0.5, 0.5], 10) == pytest.approx(10.0)
        assert expected_T([0.5, 0.5], [0.5, 0.5], 2) == pytest.approx(2.0)

    def test_point_masses(self):
        assert expected_T([1, 0], [0, 1], 2) == pytest.approx(8.0)
        assert expected_T([1, 0], [0, 1], 1) == pytest.approx(2.0)

    def test_contract(self):
        with pytest.raises(ContractError):
            expected_T([0.5, 0.6], [0.5, 0.5], 3)
        with pytest.raises(ContractError):
            expected_T([0.5, 0.5], [1.0], 3)
        with pytest.raises(ContractError):
            expected_T([1.5, -0.5], [0.5, 0.5], 3)


class TestBruteForce:
    def test_point_masses_are_deterministic(self):
        assert brute_force_moments([1, 0], [0, 1], 2) == pytest.approx((8.0, 0.0), abs=1e-12)
        assert brute_force_moments([1, 0], [0, 1], 1) == pytest.approx((2.0, 0.0), abs=1e-12)

    def test_empty_samples(self):
        assert brute_force_moments([0.3, 0.7], [0.5, 0.5], 0) == (0.0, 0.0)

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_sequence_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        k, m = int(rng.integers(1, 4)), int(rng.integers(1, 5))
        p, q = random_dist(rng, k), random_dist(rng, k)
        mean, var = brute_force_moments(p, q, m)
        want_mean, want_var = sequence_moments(p, q, m)
        assert mean == pytest.approx(want_mean, abs=1e-12)
        assert var == pytest.approx(want_var, abs=1e-10)

    def test_three_cells_four_draws(self):
        rng = np.random.default_rng(99)
        p, q = random_dist(rng, 3), random_dist(rng, 3)
        mean, _ = brute_force_moments(p, q, 4)
        assert mean == pytest.approx(sequence_moments(p, q, 4)[0], abs=1e-12)
        assert mean == pytest.approx(expected_T(p, q, 4), abs=1e-12)

    def test_zero_probability_cells(self):
        mean, var = brute_force_moments([0.0, 0.4, 0.6], [0.2, 0.0, 0.8], 3)
        want = sequence_moments([0.0, 0.4, 0.6], [0.2, 0.0, 0.8], 3)
        assert (mean, var) == pytest.approx(want, abs=1e-12)

    def test_enumeration_limit(self):
        with pytest.raises(ContractError, match="exceeds the limit"):
            brute_force_moments(np.full(20, 0.05), np.full(20, 0.05), 40)


class TestVarianceBound:
    def test_single_cell(self):
        m = 6
        assert brute_force_moments([1.0], [1.0], m) == pytest.approx((0.0, 0.0))
        assert var_T_bound([1.0], [1.0], m) == pytest.approx(8 * m * m)

    def test_balanced(self):
        assert var_T_bound([0.5, 0.5], [0.5, 0.5], 5) == pytest.approx(100.0)
        assert brute_force_moments([0.5, 0.5], [0.5, 0.5], 5)[1] <= 100.0

    @pytest.mark.parametrize("seed", range(20))
    def test_bounds_exact_variance(self, seed):
        rng = np.random.default_rng(1000 + seed)
        p, q = random_dist(rng, 3), random_dist(rng, 3)
        assert brute_force_moments(p, q, 4)[1] <= var_T_bound(p, q, 4) * (1 + 1e-12)


class TestChebyshev:
    def test_equal_distributions(self):
        assert not cheb_power_condition([0.5, 0.5], [0.5, 0.5], 100, ChebConfig(eta=0.5))

    def test_maximal_separation(self):
        assert cheb_power_condition([1.0, 0.0], [0.0, 1.0], 10**4, ChebConfig(eta=1.0))

    def test_threshold_formula(self):
        cfg = ChebConfig(eta=0.25, a=2.0)
        # max(a sqrt(eta), a^2 eta, eta) = max(1, 1, 0.25)
        assert cheb_threshold(100, cfg) == pytest.approx(16 / 100)
        assert cheb_rejection_cutoff(100, cfg) == pytest.approx(200 + 100)

    def test_eta_violation_names_cell(self):
        with pytest.raises(ContractError, match="cell 1"):
            cheb_power_condition([0.2, 0.8], [0.5, 0.5], 10, ChebConfig(eta=0.6))

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            ChebConfig(eta=0.0)
        with pytest.raises(ValueError):
            ChebConfig(eta=0.5, a=-1)

    def test_power_when_condition_holds(self):
        # where the condition holds the test at the cutoff should reject with
        # probability at least 1/2 (Chebyshev gives far more)
        k, m, a = 20, 400, 1.0
        p = np.full(k, 1 / k)
        q = p.copy()
        q[: k // 2] *= 1.6
        q[k // 2:] *= 0.4
        cfg = ChebConfig(eta=float(max(p.max(), q.max())), a=a)
        assert cheb_power_condition(p, q, m, cfg)
        rng = np.random.default_rng(0)
        M = rng.multinomial(m, p, size=2000)
        N = rng.multinomial(m, q, size=2000)
        T = ((M - N) ** 2).sum(axis=1)
        assert np.mean(T >= cheb_rejection_cutoff(m, cfg)) > 0.5
