import math

import pytest

from bingof.experiments import (
    CSV_COLUMNS,
    CriticalPoint,
    ExperimentConfig,
    NonMonotoneRiskError,
    _check_monotone,
    alternative_kappa,
    critical_epsilon,
    curse_demo,
    empty_cube_frequency,
    intrinsic_dim_experiment,
    make_design,
    minimax_exponent,
    rate_fit,
    risk_experiment,
    scale_adaptivity_experiment,
)
from bingof.generators import (
    axis_embedding,
    empty_cube_probability,
    identity_embedding,
    make_bump,
    max_admissible_epsilon,
)
from bingof.statistics import ContractError


def small(**kw):
    base = dict(dims=[1], sizes=[256], epsilons=[0.0, 0.4], replicates=60, seed=3)
    base.update(kw)
    return ExperimentConfig(**base)


class TestConfig:
    @pytest.mark.parametrize("kw", [
        {"dims": []}, {"replicates": 0}, {"test": "ks"}, {"calibration": "bootstrap"},
        {"test": "normalized", "calibration": "analytic"},
        {"test": "one-sample", "calibration": "permutation"}, {"epsilons": [-0.1]},
    ])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            small(**kw)


@pytest.mark.parametrize("kappa,expected", [(1, 1), (2, 1), (4, 2), (5, 1), (6, 3), (12, 6), (21, 7), (27, 9),
                                            (48, 24), (256, 128)])
def test_alternative_kappa(kappa, expected):
    k = alternative_kappa(kappa)
    assert k == expected
    assert kappa % k == 0


class TestRiskExperiment:
    def test_columns_and_decomposition(self):
        table = risk_experiment(small())
        assert table.to_csv().splitlines()[0] == ",".join(CSV_COLUMNS)
        for r in table.rows:
            assert r.risk == pytest.approx(r.type1 + r.type2)
            assert 0 <= r.type1 <= 1 and 0 <= r.type2 <= 1
        assert "prior" in table.metadata["note"]

    def test_null_signal(self):
        table = risk_experiment(small(epsilons=[0.0], replicates=400))
        r = table.rows[0]
        assert r.type2 == pytest.approx(1 - r.type1, abs=4 * r.se + 1e-12)

    def test_deterministic_and_worker_independent(self):
        a = risk_experiment(small())
        b = risk_experiment(small())
        c = risk_experiment(small(n_jobs=2, replicates=60))
        assert a.statistical_fields() == b.statistical_fields() == c.statistical_fields()

    def test_seed_matters(self):
        assert risk_experiment(small()).statistical_fields() != risk_experiment(small(seed=4)).statistical_fields()

    def test_strong_signal_detected(self):
        eps = max_admissible_epsilon(make_bump(1)) * (1 - 1e-9)
        table = risk_experiment(ExperimentConfig(dims=[1], sizes=[4096], epsilons=[eps], replicates=100, seed=0))
        assert table.rows[0].risk < 0.25

    def test_monotone_in_signal(self):
        table = risk_experiment(small(epsilons=[0.05, 0.2, 0.4, 0.6], replicates=200))
        risks = [r.risk for r in table.rows]
        ses = [r.se for r in table.rows]
        for i in range(len(risks) - 1):
            assert risks[i + 1] <= risks[i] + 2 * math.hypot(ses[i], ses[i + 1])

    def test_standard_error_scaling(self):
        # SE ~ 1/sqrt(R): four times the replicates halves it
        r1 = risk_experiment(small(epsilons=[0.3], replicates=100)).rows[0]
        r4 = risk_experiment(small(epsilons=[0.3], replicates=400)).rows[0]
        assert r4.se / r1.se == pytest.approx(0.5, rel=0.2)

    def test_inadmissible_signal(self):
        with pytest.raises(ContractError, match="largest admissible epsilon"):
            risk_experiment(small(epsilons=[2.0]))

    @pytest.mark.parametrize("test,cal", [("one-sample", "analytic"), ("one-sample", "monte_carlo"),
                                          ("multiscale", "analytic"), ("multiscale", "monte_carlo"),
                                          ("normalized", "permutation"), ("two-sample", "permutation")])
    def test_other_tests_run(self, test, cal):
        table = risk_experiment(small(test=test, calibration=cal, replicates=10, B=19, epsilons=[0.5]))
        assert len(table.rows) == 1


class TestIntrinsic:
    def test_identity_reduces_to_native(self):
        cfg = small(dims=[2])
        native = risk_experiment(cfg)
        embedded = intrinsic_dim_experiment(2, 2, identity_embedding(2), cfg)
        assert native.statistical_fields() == embedded.statistical_fields()

    def test_axis_embedding_matches_native_exactly(self):
        cfg = small(dims=[1])
        native = risk_experiment(cfg)
        embedded = intrinsic_dim_experiment(4, 1, None, cfg)
        assert [r[2:] for r in native.statistical_fields()] == [r[2:] for r in embedded.statistical_fields()]
        assert all(r.d == 4 for r in embedded.rows)

    def test_bins_follow_intrinsic_dimension(self):
        design = make_design(small(), 5, 4096, axis_embedding(1, 5))
        assert design.kappa == 27 and design.gen_dim == 1

    def test_too_large_intrinsic(self):
        with pytest.raises(ValueError):
            intrinsic_dim_experiment(2, 3, None, small())


class TestRates:
    def test_minimax_exponent(self):
        assert minimax_exponent(1, 1) == pytest.approx(-0.4)
        assert minimax_exponent(1, 4) == pytest.approx(-0.25)

    def test_exact_power_law(self):
        pts = [(m, 3.0 * m**-0.4) for m in (512, 1024, 4096, 16384)]
        assert rate_fit(pts).slope == pytest.approx(-0.4, abs=1e-6)

    def test_needs_two_points(self):
        with pytest.raises(ValueError):
            rate_fit([(100, 0.1)])

    def test_non_monotone_detected(self):
        evals = [(0.1, 0.3, 0.01, 100), (0.2, 0.8, 0.01, 100)]
        with pytest.raises(NonMonotoneRiskError):
            _check_monotone(evals)
        _check_monotone([(0.1, 0.8, 0.01, 100), (0.2, 0.3, 0.01, 100)])

    def test_critical_epsilon(self):
        cfg = ExperimentConfig(dims=[1], sizes=[512], replicates=60, seed=2, bisection_steps=6)
        p = critical_epsilon(cfg, 1, 512)
        assert isinstance(p, CriticalPoint)
        assert 0 < p.epsilon < max_admissible_epsilon(make_bump(1))
        assert (p.kappa, p.kappa_alt) == (12, 6)
        # bracketing: some evaluation on each side of the target
        assert min(r for _, r, _, _ in p.evaluations) <= 0.5 <= max(r for _, r, _, _ in p.evaluations)


class TestAdaptivity:
    def test_small_run(self):
        res = scale_adaptivity_experiment(1024, 1, [1.0, 2.0], {1.0: 0.3, 2.0: 0.3}, replicates=20,
                                          null_replicates=99, seed=0)
        assert set(res.power) == {1.0, 2.0}
        assert set(res.power[1.0]) == {"single@16", "single@4", "multiscale"}
        for s in res.power:
            assert res.paired_se(s, "multiscale", res.oracle[s]) >= 0


class TestCurse:
    def test_frequency_vs_bound(self):
        for d in (1, 4, 10):
            p, se = empty_cube_frequency(100, d, 0.25, 2000, seed=1)
            assert p >= empty_cube_probability(100, d, 0.25) - 2 * se - 1e-12

    def test_demo_rows(self):
        rows = curse_demo(100, [1, 2, 3], runs=200)
        assert [r.d for r in rows] == [1, 2, 3]
        assert rows[0].bound == empty_cube_probability(100, 1, 0.25)

    def test_deterministic(self):
        assert empty_cube_frequency(50, 6, 0.25, 500, 3) == empty_cube_frequency(50, 6, 0.25, 500, 3)
