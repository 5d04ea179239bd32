import math

import numpy as np
import pytest
from scipy import stats

from blunderfit.exclusion import ExclusionError
from blunderfit.report import dumps, validate
from blunderfit.simulation import (
    BLOCK_TRIALS,
    BlunderScenario,
    NullSimSpec,
    binomial_excess_prob,
    block_rng,
    simulate_blunders,
    simulate_null,
    standard_normals,
)


class TestGenerator:
    def test_block_streams_independent_of_order(self):
        a = block_rng(7, 3).random(5)
        block_rng(7, 0).random(100)
        assert np.array_equal(block_rng(7, 3).random(5), a)
        assert not np.array_equal(block_rng(7, 2).random(5), a)
        assert not np.array_equal(block_rng(8, 3).random(5), a)

    def test_normals_look_normal(self):
        z = standard_normals(block_rng(1, 0), 200_000)
        assert np.all(np.isfinite(z))
        assert stats.kstest(z, "norm").pvalue > 1e-3

    @pytest.mark.parametrize("seed", [-1, 2**64, 1.5, True])
    def test_bad_seed(self, seed):
        with pytest.raises(ValueError):
            NullSimSpec(n=10, trials=10, seed=seed)


class TestNull:
    def test_tiny(self):
        rep = simulate_null(NullSimSpec(n=2, trials=1, seed=3))
        assert rep.null.mean_L in (0.0, 1.0, 2.0)

    def test_deterministic(self):
        spec = NullSimSpec(n=50, trials=3000, seed=99)
        assert dumps(simulate_null(spec).to_dict()) == dumps(simulate_null(spec).to_dict())

    def test_seed_matters(self):
        a = simulate_null(NullSimSpec(n=50, trials=3000, seed=1)).null.mean_L
        b = simulate_null(NullSimSpec(n=50, trials=3000, seed=2)).null.mean_L
        assert a != b

    def test_trial_count_not_multiple_of_block(self):
        rep = simulate_null(NullSimSpec(n=10, trials=BLOCK_TRIALS + 7, seed=0))
        assert rep.null.trials == BLOCK_TRIALS + 7

    def test_prefix_property(self):
        # the first block is shared by any run with the same seed
        small = simulate_null(NullSimSpec(n=30, trials=BLOCK_TRIALS, seed=5)).null
        rng = block_rng(5, 0)
        r = standard_normals(rng, (BLOCK_TRIALS, 30))
        L = np.count_nonzero(np.abs(r) > small.kappa, axis=1)
        assert small.mean_L == L.mean()

    @pytest.mark.parametrize("n", [5, 20, 100])
    def test_binomial_agreement(self, n):
        rep = simulate_null(NullSimSpec(n=n, trials=40_000, seed=n)).null
        assert abs(rep.mean_L - 1.0) <= 3 * rep.se_mean_L
        for m in ("2", "3", "4"):
            exact = binomial_excess_prob(n, int(m))
            se = math.sqrt(exact * (1 - exact) / rep.trials)
            assert abs(rep.p_L_ge[m] - exact) <= 3 * se

    def test_poisson_close_to_binomial_at_100(self):
        from blunderfit.stat_core import poisson_excess_prob

        for m in (2, 3, 4):
            assert abs(poisson_excess_prob(m) - binomial_excess_prob(100, m)) < 0.01

    def test_report_schema(self):
        rep = simulate_null(NullSimSpec(n=20, trials=500, seed=0))
        validate(rep.to_dict(), "simulation_report")


class TestBlunders:
    def test_scenario_validation(self):
        with pytest.raises(ValueError):
            BlunderScenario(n=10, blunder_count=10, blunder_magnitude=5.0, trials=1)
        with pytest.raises(ValueError):
            BlunderScenario(n=10, blunder_count=1, blunder_magnitude=math.inf, trials=1)
        with pytest.raises(ValueError):
            BlunderScenario(n=2, blunder_count=0, blunder_magnitude=0.0, trials=1)

    def test_bad_rule_names_index(self):
        sc = BlunderScenario(n=20, blunder_count=1, blunder_magnitude=5.0, trials=2)
        with pytest.raises(ExclusionError, match="rule 1"):
            simulate_blunders(sc, ["adaptive", "nonsense"])
        with pytest.raises(ExclusionError, match="rule 0"):
            simulate_blunders(sc, [{"gamma": 2.0}])

    def test_paired_and_deterministic(self):
        sc = BlunderScenario(n=30, blunder_count=2, blunder_magnitude=8.0, trials=300, seed=4)
        a = simulate_blunders(sc, ["adaptive", "baseline3"])
        b = simulate_blunders(sc, ["baseline3", "adaptive"])
        assert a.rules["adaptive"] == b.rules["adaptive"]
        assert a.rules["baseline3"] == b.rules["baseline3"]
        assert a.reference == b.reference
        validate(a.to_dict(), "simulation_report")

    def test_unbiased_without_contamination(self):
        sc = BlunderScenario(n=30, blunder_count=0, blunder_magnitude=0.0, trials=2000, seed=12)
        rep = simulate_blunders(sc, ["adaptive", "baseline3"])
        for summary in list(rep.rules.values()) + list(rep.reference.values()):
            for b, se in zip(summary.bias, summary.bias_se):
                assert abs(b) <= 3 * se
            assert summary.missed_blunder_rate == 0.0

    def test_contamination_biases_plain_fit(self):
        sc = BlunderScenario(n=50, blunder_count=1, blunder_magnitude=10.0, trials=500, seed=2)
        rep = simulate_blunders(sc, ["adaptive"])
        dirty = rep.reference["contaminated_wls"]
        # one +10 sigma point among 50 shifts the intercept by ~0.2
        assert dirty.bias[0] > 10 * dirty.bias_se[0]
        assert abs(rep.rules["adaptive"].bias[0]) < 3 * rep.rules["adaptive"].bias_se[0] + 0.01

    def test_single_blunder_recovery(self):
        sc = BlunderScenario(n=50, blunder_count=1, blunder_magnitude=10.0, trials=4000, seed=2024)
        rep = simulate_blunders(sc, ["adaptive"])
        adaptive = rep.rules["adaptive"]
        clean = rep.reference["clean_wls"]
        assert adaptive.missed_blunder_rate < 0.01
        for a, c in zip(adaptive.rmse, clean.rmse):
            assert a <= 1.10 * c

    def test_adaptive_excludes_little_on_clean_data(self):
        sc = BlunderScenario(n=1000, blunder_count=0, blunder_magnitude=0.0, trials=300, seed=8)
        rep = simulate_blunders(sc, ["adaptive", "baseline3"])
        assert rep.rules["adaptive"].mean_excluded < 0.3
        assert rep.rules["baseline3"].mean_first_pass_excluded > 2.0
