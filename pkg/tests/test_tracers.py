import math

import numpy as np
import pytest

from sparsetrace.distributions import BetaPrior, SparsePopulation, TernarySample, sample_matrix, sample_prior
from sparsetrace.learners import LearnerConfig
from sparsetrace.problems import BOX_LP, L1_CAPPED, ParameterPoint, ProblemSpec, support_argmax
from sparsetrace.rng import substream
from sparsetrace.tracers import (
    calibrate_threshold,
    default_beta,
    default_prior,
    estimate_trace_value,
    half_trace_value,
    max_score_vector_norm,
    null_quantile,
    recall_lower_bound_pz,
    run_trace_trial,
    scaling_tracer,
    score_batch,
    score_scaling_matrix,
    score_sparse,
    sparse_tracer,
    trace_value_contribution,
)

SEED = 20240904

ERM = LearnerConfig("erm")


def _score_sparse_reference(theta, z, mu, k, p, d):
    """Independent scalar implementation of the sparse score."""
    total = 0.0
    for j in range(d):
        if z[j] != 0:
            total += theta[j] * (z[j] - (d / k) * mu[j])
    return (d ** (1 / p) / math.sqrt(k)) * total


class TestSparseScore:
    def test_zero_parameter_scores_zero(self):
        tr = sparse_tracer(np.zeros(4), 4, 2.0, 4)
        z = TernarySample.from_entries([1, -1, 1, 1])
        assert score_sparse(tr, np.zeros(4), z) == 0.0

    def test_direct_evaluation(self):
        tr = sparse_tracer(np.zeros(4), 4, 2.0, 4)
        z = TernarySample.from_entries([1, 1, 1, 1])
        assert score_sparse(tr, np.full(4, 0.5), z) == pytest.approx(2.0)

    def test_hand_evaluation_with_nonzero_mean(self):
        tr = sparse_tracer(np.array([0.25, 0.0]), 1, 2.0, 2)
        theta = np.full(2, 1 / math.sqrt(2))
        z = TernarySample.from_entries([1, 0])
        assert score_sparse(tr, theta, z) == pytest.approx(0.5)

    def test_matches_independent_scalar_implementation(self):
        rng = substream(SEED, 0, "score")
        d, k, p = 8, 3, 2.5
        mu = rng.uniform(-k / d, k / d, size=d)
        tr = sparse_tracer(mu, k, p, d)
        pop = SparsePopulation.from_array(mu, k, d)
        spec = ProblemSpec(BOX_LP, d=d, p=p, k=k)
        for _ in range(50):
            theta = rng.uniform(-spec.box_radius, spec.box_radius, size=d)
            z = sample_matrix(pop, 1, rng)[0]
            expected = _score_sparse_reference(theta, z, mu, k, p, d)
            assert score_sparse(tr, theta, z) == pytest.approx(expected, abs=1e-12)

    def test_clip_bound_never_triggers_for_feasible_theta(self):
        rng = substream(SEED, 1, "score")
        d, k, p = 16, 4, 2.0
        mu = rng.uniform(-k / d, k / d, size=d)
        tr = sparse_tracer(mu, k, p, d)
        pop = SparsePopulation.from_array(mu, k, d)
        spec = ProblemSpec(BOX_LP, d=d, p=p, k=k)
        z = sample_matrix(pop, 2000, rng)
        theta = spec.box_radius * np.where(rng.random(d) < 0.5, 1.0, -1.0)
        scores, clipped = score_batch(tr, theta, z)
        assert clipped == 0
        assert np.max(np.abs(scores)) <= 2 * math.sqrt(k)

    def test_clipping_clamps_and_counts(self):
        tr = sparse_tracer(np.zeros(2), 2, 2.0, 2, clip_bound=0.5)
        z = np.array([[1, 1]], dtype=np.int8)
        scores, clipped = score_batch(tr, np.array([5.0, 5.0]), z)
        assert clipped == 1 and scores[0] == pytest.approx(0.5)

    def test_dimension_mismatch_rejected(self):
        tr = sparse_tracer(np.zeros(4), 2, 2.0, 4)
        with pytest.raises(ValueError):
            score_batch(tr, np.zeros(3), np.zeros((1, 4), dtype=np.int8))


class TestScalingScore:
    def test_zero_mean_reduces_to_inner_product(self):
        tr = scaling_tracer(np.zeros(3), 0.5, 4, 3)
        z = TernarySample.from_entries([1, -1, 1])
        theta = np.array([0.1, 0.2, 0.3])
        assert score_scaling_matrix(tr, theta, z) == pytest.approx(2.0 * (0.1 - 0.2 + 0.3))

    def test_scaling_factor_value(self):
        tr = scaling_tracer(np.full(1, 0.25), 0.5, 1, 1)
        z = TernarySample.from_entries([1])
        # Lambda = (1 - (0.25/0.5)^2) / (1 - 0.25^2) = 0.8
        assert score_scaling_matrix(tr, np.ones(1), z) == pytest.approx(0.8 * 0.75)

    def test_mean_at_gamma_contributes_nothing(self):
        tr = scaling_tracer(np.array([0.5, 0.0]), 0.5, 1, 2)
        z = TernarySample.from_entries([1, 1])
        assert score_scaling_matrix(tr, np.array([1.0, 0.0]), z) == pytest.approx(0.0)

    def test_singular_mean_rejected(self):
        with pytest.raises(ValueError):
            scaling_tracer(np.array([1.0]), 0.5, 1, 1)


class TestCalibrateThreshold:
    def test_half_trace_value(self):
        assert calibrate_threshold(half_trace_value(1.6), []) == pytest.approx(0.8)

    def test_small_order_statistic_example(self):
        lam = calibrate_threshold(null_quantile(0.5), [1.0, 2.0, 3.0, 4.0])
        assert lam == pytest.approx(3.0)

    def test_normal_quantile(self):
        rng = substream(SEED, 2, "thresh")
        lam = calibrate_threshold(null_quantile(0.05), rng.standard_normal(10**4))
        assert abs(lam - 1.645) < 0.05

    def test_insufficient_null_sample_rejected(self):
        with pytest.raises(ValueError):
            calibrate_threshold(null_quantile(0.05), np.zeros(10))

    def test_calibration_tail_mass_at_most_xi(self):
        rng = substream(SEED, 3, "thresh")
        for xi in (0.01, 0.05, 0.3):
            scores = rng.standard_normal(5000)
            lam = calibrate_threshold(null_quantile(xi), scores)
            assert np.mean(scores >= lam) <= xi + 1e-12


class TestRunTraceTrial:
    def test_constant_learner_has_zero_recall_at_positive_threshold(self):
        spec = ProblemSpec(BOX_LP, d=8, p=2.0, k=8)
        cfg = LearnerConfig("constant", fixed_point=ParameterPoint(np.zeros(8), True))
        prior = BetaPrior(1.0, 1.0, 8)
        report = run_trace_trial(cfg, spec, "sparse", prior, n=16, M=32,
                                 policy=half_trace_value(1.0), rng=substream(SEED, 4))
        assert np.all(report.scores_train == 0.0)
        assert report.recall_estimate == 0.0
        assert report.flagged.size == 0

    def test_erm_flags_training_points_and_is_sound(self):
        spec = ProblemSpec(BOX_LP, d=1024, p=2.0, k=1024)
        prior = default_prior(spec, alpha_target=0.1)
        M = 500
        report = run_trace_trial(ERM, spec, "sparse", prior, n=64, M=M,
                                 policy=null_quantile(0.05), rng=substream(SEED, 5))
        assert report.recall_estimate > 0
        assert report.soundness_estimate <= 0.05 + 3 * math.sqrt(0.05 / M)
        assert np.array_equal(report.flagged, np.flatnonzero(report.scores_train >= report.threshold))

    def test_dp_recall_respects_privacy_ceiling(self):
        spec = ProblemSpec(BOX_LP, d=1024, p=2.0, k=1024)
        prior = default_prior(spec, alpha_target=0.1)
        cfg = LearnerConfig("gaussian_dp", epsilon=0.1, delta=1e-6)
        n, xi, trials = 100, 0.05, 50
        recalls = []
        for t in range(trials):
            report = run_trace_trial(cfg, spec, "sparse", prior, n=n, M=50,
                                     policy=null_quantile(xi), rng=substream(SEED, 100 + t))
            recalls.append(report.recall_estimate)
        mean = float(np.mean(recalls))
        ci = 1.96 * float(np.std(recalls, ddof=1)) / math.sqrt(trials)
        ceiling = n * math.exp(0.1) * xi + n * 1e-6
        assert mean <= ceiling + 4 * ci

    def test_scaling_tracer_on_capped_problem_runs(self):
        spec = ProblemSpec(L1_CAPPED, d=64, s=8)
        prior = default_prior(spec, alpha_target=0.05)
        report = run_trace_trial(ERM, spec, "scaling_matrix", prior, n=32, M=64,
                                 policy=null_quantile(0.1), rng=substream(SEED, 6))
        assert 0.0 <= report.soundness_estimate <= 1.0
        assert 0.0 <= report.recall_estimate <= 32

    def test_report_invariants_hold(self):
        spec = ProblemSpec(BOX_LP, d=128, p=2.0, k=32)
        prior = default_prior(spec, alpha_target=0.1)
        report = run_trace_trial(ERM, spec, "sparse", prior, n=40, M=80,
                                 policy=null_quantile(0.1), rng=substream(SEED, 14))
        assert report.soundness_estimate == pytest.approx(
            np.count_nonzero(report.scores_fresh >= report.threshold) / 80)
        assert report.recall_estimate == report.flagged.size
        assert 0.0 <= report.recall_estimate <= 40
        assert report.clip_events == 0

    def test_fresh_scores_have_zero_mean(self):
        # For Z independent of theta the score is exactly centered.
        for kind, spec in (("sparse", ProblemSpec(BOX_LP, d=256, p=2.0, k=64)),
                           ("scaling_matrix", ProblemSpec(L1_CAPPED, d=256, s=16))):
            prior = default_prior(spec, alpha_target=0.1)
            report = run_trace_trial(ERM, spec, kind, prior, n=32, M=20000,
                                     policy=null_quantile(0.05), rng=substream(SEED, 7))
            fresh = report.scores_fresh
            sigma = float(np.std(fresh, ddof=1)) / math.sqrt(fresh.size)
            assert abs(float(fresh.mean())) < 4 * sigma


class TestEstimateTraceValue:
    def test_constant_learner_scores_exactly_zero(self):
        spec = ProblemSpec(BOX_LP, d=8, p=2.0, k=8)
        cfg = LearnerConfig("constant", fixed_point=ParameterPoint(np.zeros(8), True))
        prior = BetaPrior(1.0, 1.0, 8)
        t_hat, ci = estimate_trace_value(cfg, spec, "sparse", prior, n=8, trials=40,
                                         rng=substream(SEED, 8))
        assert t_hat == 0.0 and ci == 0.0

    def test_independent_learner_is_centered(self):
        spec = ProblemSpec(BOX_LP, d=32, p=2.0, k=32)
        prior = BetaPrior(2.0, 1.0, 32)
        side_rng = substream(SEED, 9, "disjoint")

        def disjoint_erm(z):
            other = np.where(side_rng.random(z.shape) < 0.5, 1, -1)
            return support_argmax(ProblemSpec(BOX_LP, d=32, p=2.0, k=32), other.mean(axis=0)).theta

        t_hat, ci = estimate_trace_value(disjoint_erm, spec, "sparse", prior, n=16,
                                         trials=600, rng=substream(SEED, 10))
        assert abs(t_hat) <= 2 * ci + 1e-9

    def test_too_few_trials_rejected(self):
        spec = ProblemSpec(BOX_LP, d=4, p=2.0, k=4)
        with pytest.raises(ValueError):
            estimate_trace_value(ERM, spec, "sparse", BetaPrior(1.0, 1.0, 4),
                                 n=4, trials=10, rng=substream(SEED, 15))

    def test_identity_learner_matches_exact_oracle_value(self):
        from sparsetrace.oracles import verify_sparse_identity

        spec = ProblemSpec(BOX_LP, d=1, p=2.0, k=1)
        prior = BetaPrior(1.0, 1.0, 1)
        identity = lambda z: z.mean(axis=0)
        t_hat, ci = estimate_trace_value(identity, spec, "sparse", prior, n=1,
                                         trials=4000, rng=substream(SEED, 11))
        oracle = verify_sparse_identity(1, 1, 1, 1.0, identity, name="identity")
        assert oracle.lhs == pytest.approx(2 / 3, abs=1e-10)
        assert abs(t_hat - oracle.lhs) < 2 * ci


class TestRecallLowerBound:
    def test_hand_example(self):
        assert recall_lower_bound_pz([2.0, 0.0, 0.0], 1 / 3) == pytest.approx(0.25)

    def test_equality_case_all_equal(self):
        scores = np.full(8, 3.0)
        assert recall_lower_bound_pz(scores, 0.0) == pytest.approx(8.0)

    def test_zero_scores_give_zero(self):
        assert recall_lower_bound_pz(np.zeros(5), -1.0) == 0.0

    def test_never_exceeds_direct_count(self):
        rng = substream(SEED, 12, "pz")
        for _ in range(10**4):
            n = int(rng.integers(1, 20))
            scores = rng.uniform(-1, 1, size=n)
            lam = float(rng.uniform(-1.5, 1.5))
            count = int(np.count_nonzero(scores >= lam))
            assert recall_lower_bound_pz(scores, lam) <= count + 1e-12


class TestDefaultPrior:
    def test_box_beta_formula(self):
        spec = ProblemSpec(BOX_LP, d=256, p=2.0, k=64)
        alpha = 0.05
        expected = ((64 / 256) ** 0.5 / (6 * alpha)) ** 2
        assert default_beta(spec, alpha) == pytest.approx(expected)
        assert default_prior(spec, alpha).gamma == pytest.approx(0.25)

    def test_beta_floor_at_one(self):
        spec = ProblemSpec(BOX_LP, d=4, p=2.0, k=4)
        assert default_beta(spec, 10.0) == 1.0

    def test_l1_gamma_tracks_alpha(self):
        spec = ProblemSpec(L1_CAPPED, d=4096, s=256)
        prior = default_prior(spec, alpha_target=0.05)
        assert prior.gamma == pytest.approx(0.4)
        assert prior.beta == pytest.approx(1 + 0.5 * math.log(4096 / (16 * 256)))


class TestScoreNormScaling:
    def test_heuristic_norm_scales_like_sqrt_n_plus_sqrt_d(self):
        rng = substream(SEED, 13, "norm")
        ratios = []
        for n in (64, 256):
            for d in (64, 256):
                spec = ProblemSpec(BOX_LP, d=d, p=2.0, k=d)
                prior = BetaPrior(2.0, 1.0, d)
                mu = sample_prior(prior, rng).values
                tr = sparse_tracer(mu, d, 2.0, d)
                pop = SparsePopulation.from_array(mu, d, d)
                z = sample_matrix(pop, n, rng)
                value = max_score_vector_norm(tr, z, spec.box_radius, rng, restarts=32)
                ratios.append(value / (math.sqrt(n) + math.sqrt(d)))
        assert max(ratios) / min(ratios) <= 3.0


class TestTraceValueCeiling:
    def test_t_hat_scaling_stays_in_band(self):
        ratios = []
        for i, d in enumerate((64, 256, 1024)):
            spec = ProblemSpec(BOX_LP, d=d, p=2.0, k=d)
            prior = default_prior(spec, alpha_target=0.1)
            values = [trace_value_contribution(ERM, spec, "sparse", prior, 64,
                                               substream(SEED, 200 * i + t, "ceil"))
                      for t in range(120)]
            ratios.append(float(np.mean(values)) * math.sqrt(64) / math.sqrt(d))
        assert max(ratios) / min(ratios) <= 3.0
