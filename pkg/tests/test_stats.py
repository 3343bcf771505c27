import math

import numpy as np
import pytest

from treeohm import (
    ReplicateSet,
    RngStream,
    TreeModel,
    ValidationError,
    WeightDistribution,
    dist_moments,
    efron_stein_diagnostic,
    estimate_moments,
    fit_expectation,
    fit_variance_slope,
    gw_experiment,
    rde_init,
    rde_levels,
    rde_step,
    run_replicates,
    sweep,
    tail_profile,
    variance_bound_constants,
)


class TestRunReplicates:
    def test_constant_model(self):
        model = TreeModel.regular(2, WeightDistribution.constant(1.0))
        batch = run_replicates(model, 5, 3, 42)
        assert batch.resistance.tolist() == [5.0, 5.0, 5.0]
        assert batch.conductance.tolist() == [0.2, 0.2, 0.2]

    def test_deterministic_per_seed(self, binary_twopoint_model):
        a = run_replicates(binary_twopoint_model, 6, 50, 7)
        b = run_replicates(binary_twopoint_model, 6, 50, 7)
        assert np.array_equal(a.resistance, b.resistance)

    def test_workers_do_not_change_values(self, binary_twopoint_model):
        serial = run_replicates(binary_twopoint_model, 6, 40, 7, workers=1)
        parallel = run_replicates(binary_twopoint_model, 6, 40, 7, workers=2)
        assert np.array_equal(serial.resistance, parallel.resistance)

    def test_envelope_seed7(self, binary_twopoint_model):
        batch = run_replicates(binary_twopoint_model, 10, 10**4, 7)
        assert batch.resistance.min() >= 5.0
        assert batch.resistance.max() <= 15.0

    def test_replicate_streams_match_singletons(self, binary_twopoint_model):
        from treeohm import resistance_fast

        batch = run_replicates(binary_twopoint_model, 5, 8, 99)
        for j in range(8):
            one = resistance_fast(binary_twopoint_model, 5, RngStream(99, j))
            assert batch.resistance[j] == one.resistance

    def test_branching_model(self):
        model = TreeModel.galton_watson(
            [(1, 0.5), (2, 0.5)], WeightDistribution.constant(1.0)
        )
        batch = run_replicates(model, 4, 20, 3)
        assert np.all(batch.resistance > 0)

    def test_bad_m(self, binary_twopoint_model):
        with pytest.raises(ValidationError):
            run_replicates(binary_twopoint_model, 4, 0, 1)


class TestMoments:
    def test_tiny_sample(self):
        rep = estimate_moments(ReplicateSet.from_values(1, np.array([1.0, 2.0, 3.0])))
        assert rep.r.mean == 2.0
        assert rep.r.variance == 1.0

    def test_constant_samples(self):
        rep = estimate_moments(ReplicateSet.from_values(5, np.full(10, 5.0)))
        assert rep.r.variance == 0.0
        assert rep.r.m4 == 0.0

    def test_constant_model_scaled(self):
        model = TreeModel.regular(2, WeightDistribution.constant(0.7))
        for n in (3, 8):
            rep = estimate_moments(run_replicates(model, n, 5, 0))
            assert rep.r.mean == pytest.approx(0.7 * n, rel=1e-12)
            assert rep.r.variance == 0.0

    def test_fourth_moment_dominates_variance_squared(self):
        x = RngStream(5).uniforms(500) * 3.0 + 1.0
        rep = estimate_moments(ReplicateSet.from_values(1, x))
        assert rep.r.m4 >= rep.r.m2**2
        assert rep.c.m4 >= rep.c.m2**2

    def test_quantiles_monotone(self, binary_twopoint_model):
        rep = estimate_moments(run_replicates(binary_twopoint_model, 6, 500, 2))
        assert list(rep.r.quantiles) == sorted(rep.r.quantiles)

    def test_jackknife_se_tracks_simulation_spread(self):
        # the delete-1 jackknife SE for the variance should match the
        # spread of independent variance estimates to within a factor
        seeds = range(30)
        model = TreeModel.regular(2, WeightDistribution.two_point(0.5, 1.5))
        variances = []
        ses = []
        for s in seeds:
            rep = estimate_moments(run_replicates(model, 4, 400, 1000 + s))
            variances.append(rep.r.variance)
            ses.append(rep.r.se_variance)
        spread = np.std(variances, ddof=1)
        assert np.mean(ses) == pytest.approx(spread, rel=0.5)

    def test_needs_two(self):
        with pytest.raises(ValidationError):
            estimate_moments(ReplicateSet.from_values(1, np.array([1.0])))


class TestTailProfile:
    def test_degenerate_all_equal(self):
        batch = ReplicateSet.from_values(3, np.full(200, 3.0))
        rep = tail_profile(batch)
        assert np.all(rep.freq == 0.0)

    def test_zero_threshold_counts_everything_off_mean(self):
        x = np.concatenate([np.full(100, 1.0), np.full(100, 2.0)])
        rep = tail_profile(ReplicateSet.from_values(1, x), t_grid=np.array([0.0]))
        assert rep.freq[0] == 1.0

    def test_monotone_and_bounded(self, binary_twopoint_model):
        batch = run_replicates(binary_twopoint_model, 8, 2000, 11)
        rep = tail_profile(batch, tail_constant=100.0)
        assert np.all(np.diff(rep.freq) <= 0)
        assert np.all((rep.wilson_lo >= 0) & (rep.wilson_hi <= 1))
        assert np.all(rep.wilson_lo <= rep.freq) and np.all(rep.freq <= rep.wilson_hi)
        assert np.all(rep.bound == 2.0 * np.exp(-rep.t**2 / 400.0))

    def test_needs_hundred(self):
        with pytest.raises(ValidationError):
            tail_profile(ReplicateSet.from_values(1, np.ones(50)))


class TestVarianceBoundConstants:
    def test_chain_for_unit_double(self):
        mom = dist_moments(WeightDistribution.two_point(1.0, 2.0))
        vb = variance_bound_constants(1.0, 2.0, mom.recip_variance, 4)
        assert vb.k0 == 2.0
        assert vb.k1 == 2.0
        assert vb.k == 32.0
        assert vb.bound == pytest.approx(32768.0 / 4**4, rel=1e-15)

    def test_degenerate(self):
        vb = variance_bound_constants(1.0, 1.0, 0.0, 7)
        assert vb.k0 == 0.0 and vb.bound == 0.0

    def test_quartic_decay(self):
        b1 = variance_bound_constants(0.5, 1.5, 4 / 9, 5).bound
        b2 = variance_bound_constants(0.5, 1.5, 4 / 9, 10).bound
        assert b2 / b1 == pytest.approx(1.0 / 16.0, rel=1e-12)

    def test_validation(self):
        with pytest.raises(ValidationError):
            variance_bound_constants(0.0, 1.0, 0.0, 3)
        with pytest.raises(ValidationError):
            variance_bound_constants(1.0, 2.0, -0.1, 3)


class TestConductanceRecursion:
    def test_init_constant(self):
        pool = rde_init(WeightDistribution.constant(1.0), 100, RngStream(0))
        assert np.all(pool.values == 1.0)
        assert pool.level == 1

    def test_init_twopoint_support(self, twopoint_half):
        pool = rde_init(twopoint_half, 1000, RngStream(1))
        assert set(np.unique(pool.values)) == {2.0, 2.0 / 3.0}

    def test_init_mean_near_recip_mean(self, twopoint_half):
        pool = rde_init(twopoint_half, 10**5, RngStream(2))
        mom = dist_moments(twopoint_half)
        se = pool.values.std(ddof=1) / math.sqrt(len(pool.values))
        assert abs(pool.values.mean() - mom.recip_mean) <= 4 * se

    def test_degenerate_step(self):
        dist = WeightDistribution.constant(2.0)
        pool = rde_init(WeightDistribution.constant(0.5), 50, RngStream(0))
        # all pool entries are 1/0.5 = 2; the update gives 2 / (1 + 2*2) = 0.4
        stepped = rde_step(pool, dist, RngStream(3))
        assert np.all(stepped.values == pytest.approx(0.4, rel=1e-15))
        assert stepped.level == 2

    def test_unit_weights_exact_level2(self):
        dist = WeightDistribution.constant(1.0)
        pool = rde_init(dist, 64, RngStream(0))
        stepped = rde_step(pool, dist, RngStream(1))
        assert np.all(stepped.values == 0.5)

    def test_envelope_propagates(self, twopoint_half):
        pools = rde_levels(twopoint_half, 2000, 8, RngStream(13))
        for pool in pools:
            lo = 1.0 / (1.5 * pool.level)
            hi = 1.0 / (0.5 * pool.level)
            assert pool.values.min() >= lo - 1e-12
            assert pool.values.max() <= hi + 1e-12

    def test_deterministic(self, twopoint_half):
        a = rde_levels(twopoint_half, 500, 5, RngStream(13))[-1].values
        b = rde_levels(twopoint_half, 500, 5, RngStream(13))[-1].values
        assert np.array_equal(a, b)


class TestFits:
    def test_exact_recovery(self):
        ns = np.arange(2, 19, dtype=float)
        y = 1.0 * ns - 0.25 * np.log(ns) + 3.0
        rep = fit_expectation(ns, y, np.ones_like(ns), 1.0, 0.25)
        assert rep.alpha == pytest.approx(1.0, abs=1e-9)
        assert rep.beta == pytest.approx(-0.25, abs=1e-9)
        assert rep.gamma == pytest.approx(3.0, abs=1e-9)
        assert rep.constrained_range <= 1e-9

    def test_linear_data(self):
        ns = np.arange(2, 11, dtype=float)
        rep = fit_expectation(ns, ns.copy(), np.ones_like(ns), 1.0, 0.0)
        assert rep.alpha == pytest.approx(1.0, abs=1e-9)
        assert rep.beta == pytest.approx(0.0, abs=1e-9)
        assert rep.gamma == pytest.approx(0.0, abs=1e-9)

    def test_weighted_residuals_have_zero_weighted_mean(self):
        ns = np.arange(2, 12, dtype=float)
        rng = RngStream(5)
        y = ns - 0.3 * np.log(ns) + 1.0 + 0.01 * (rng.uniforms(10) - 0.5)
        ses = 0.5 + rng.uniforms(10)
        rep = fit_expectation(ns, y, ses, 1.0, 0.3)
        w = 1.0 / ses**2
        assert abs(np.sum(w * rep.residuals)) <= 1e-9 * np.sum(w * np.abs(y))

    def test_needs_six_points(self):
        ns = np.array([2.0, 3.0, 4.0, 5.0, 6.0])
        with pytest.raises(ValidationError):
            fit_expectation(ns, ns, np.ones_like(ns), 1.0, 0.0)

    def test_repeated_n_rejected(self):
        ns = np.array([2.0, 2.0, 3.0, 4.0, 5.0, 6.0])
        with pytest.raises(ValidationError):
            fit_expectation(ns, ns, np.ones_like(ns), 1.0, 0.0)

    def test_variance_slope_exact(self):
        ns = np.array([2.0, 4.0, 8.0, 16.0])
        slope, intercept = fit_variance_slope(ns, 7.0 / ns**4)
        assert slope == pytest.approx(-4.0, abs=1e-9)
        assert intercept == pytest.approx(math.log(7.0), abs=1e-9)
        slope, _ = fit_variance_slope(ns, 3.0 / ns**2)
        assert slope == pytest.approx(-2.0, abs=1e-9)

    def test_variance_slope_rejects_zero(self):
        with pytest.raises(ValidationError):
            fit_variance_slope(np.array([2.0, 3.0, 4.0]), np.array([1.0, 0.0, 1.0]))


class TestSweep:
    def test_reports_shape_and_determinism(self, binary_twopoint_model):
        ns = [2, 3, 4]
        reps = {2: 60, 3: 60, 4: 60}
        a = sweep(binary_twopoint_model, ns, reps, 5)
        b = sweep(binary_twopoint_model, ns, reps, 5)
        assert [r.n for r in a] == ns
        assert all(x.r.mean == y.r.mean for x, y in zip(a, b))

    def test_depths_use_decorrelated_seeds(self, binary_twopoint_model):
        reports = sweep(binary_twopoint_model, [4, 5], {4: 30, 5: 30}, 9)
        assert reports[0].r.mean != reports[1].r.mean


class TestBranchingExperiment:
    def test_deterministic_binary_records(self):
        report = gw_experiment(((2, 1.0),), WeightDistribution.constant(1.0), 6, 10, 0)
        assert np.all(report.resistance == 7.0)
        assert np.all(report.shorted == 7.0)
        assert np.all(report.w_hat == 1.0)
        assert np.all(report.b1 == 2)

    def test_shorted_below_exact(self):
        report = gw_experiment(
            ((1, 0.5), (2, 0.5)), WeightDistribution.constant(1.0), 8, 100, 17
        )
        assert np.all(report.shorted <= report.resistance + 1e-12)

    def test_conditional_means_split_by_root_degree(self):
        report = gw_experiment(
            ((1, 0.5), (2, 0.5)), WeightDistribution.constant(1.0), 10, 400, 17
        )
        assert set(report.cond_mean_nc) == {1, 2}
        assert report.cond_mean_nc[2] > report.cond_mean_nc[1]


class TestEfronSteinDiagnostic:
    def test_variance_below_scaled_bound(self, binary_twopoint_model):
        rep = efron_stein_diagnostic(binary_twopoint_model, 8, 300, 21)
        assert rep.var_r <= rep.bound_scaled + 3 * rep.se_var_r
        assert rep.bound_scaled == pytest.approx(
            (1.5 - 0.5) ** 2 * rep.mean_s4_scaled, rel=1e-12
        )
        assert rep.bound_plain_half == pytest.approx(
            0.5 * rep.mean_s4_plain, rel=1e-12
        )
