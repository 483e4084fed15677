"""Scale-up estimators, posterior summaries, recall calibration and
adjustment, and convergence diagnostics."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nsum.data import validate_dataset
from nsum.errors import (
    DomainError,
    FitDiverged,
    RecallAdjustmentSuspect,
    TooFewDraws,
    ZeroDegreeSum,
    ZeroWithinVariance,
)
from nsum.numerics import RandomStream
from nsum.postprocess import (
    RecallCalibration,
    check_recall_applicability,
    effective_sample_size,
    fit_recall_calibration,
    gelman_rubin,
    recall_adjust_draws,
    scaleup_degrees,
    scaleup_size,
    summarize,
)


class TestScaleupDegrees:
    def test_hand_evaluation(self):
        # d = N * sum known y / sum known sizes = 1000 * 4 / 300
        ds = validate_dataset([[1, 3, 0]], [100, 200], 1000, unknown_index=2)
        assert scaleup_degrees(ds)[0] == pytest.approx(1000 * 4 / 300, rel=1e-12)

    def test_zero_responses(self):
        ds = validate_dataset([[0, 0, 5]], [100, 200], 1000, unknown_index=2)
        assert scaleup_degrees(ds)[0] == 0.0

    def test_linear_in_total_population(self):
        y = [[2, 1, 3], [0, 4, 1]]
        d1 = scaleup_degrees(validate_dataset(y, [100, 200], 1000, unknown_index=2))
        d2 = scaleup_degrees(validate_dataset(y, [100, 200], 2000, unknown_index=2))
        assert np.allclose(2.0 * d1, d2)

    def test_sums_skip_unknown_column(self):
        # moving the unknown column must not change the known-column sums
        ds = validate_dataset([[7, 1, 3]], [100, 200], 1000, unknown_index=0)
        assert scaleup_degrees(ds)[0] == pytest.approx(1000 * 4 / 300, rel=1e-12)


class TestScaleupSize:
    def test_single_respondent_illustration(self):
        # someone with degree 100 knowing 2 members scales to 2% of 10,000
        ds = validate_dataset([[2, 2]], [1], 10_000, unknown_index=1)
        assert scaleup_size(ds, degrees=np.array([100.0])) == pytest.approx(200.0)

    def test_zero_unknown_responses(self):
        ds = validate_dataset([[3, 0]], [500], 10_000, unknown_index=1)
        assert scaleup_size(ds) == 0.0

    def test_prevalence_invariant_to_consistent_scaling(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            y = rng.integers(0, 6, size=(5, 3))
            y[:, 2] = rng.integers(0, 4, size=5)
            sizes = [400, 900]
            n1 = 50_000
            ds1 = validate_dataset(y, sizes, n1, unknown_index=2)
            # scale the population and known sizes together
            ds2 = validate_dataset(y, [s * 3 for s in sizes], n1 * 3, unknown_index=2)
            if scaleup_degrees(ds1).sum() == 0:
                continue
            p1 = scaleup_size(ds1) / n1
            p2 = scaleup_size(ds2) / (n1 * 3)
            assert p1 == pytest.approx(p2, rel=1e-12)

    def test_zero_degree_sum(self):
        ds = validate_dataset([[0, 2]], [500], 10_000, unknown_index=1)
        with pytest.raises(ZeroDegreeSum):
            scaleup_size(ds)


class TestSummarize:
    def test_constant_draws(self):
        s = summarize(np.full(500, 3.25))
        assert s.mean == s.median == 3.25
        assert s.sd == 0.0
        assert s.ci80 == (3.25, 3.25)
        assert s.ci95 == (3.25, 3.25)

    def test_type7_quantiles_on_ramp(self):
        s = summarize(np.arange(1.0, 10_001.0))
        assert s.ci95[0] == pytest.approx(250.975, abs=1e-9)
        assert s.ci95[1] == pytest.approx(9750.025, abs=1e-9)

    def test_prevalence_transform(self):
        draws = np.linspace(100, 200, 500)
        s = summarize(draws, transform="prevalence", total_population=1000)
        assert s.mean == pytest.approx(0.15)

    def test_too_few(self):
        with pytest.raises(TooFewDraws):
            summarize(np.arange(99))

    def test_prevalence_needs_total(self):
        with pytest.raises(DomainError):
            summarize(np.arange(200.0), transform="prevalence")

    @given(st.integers(min_value=0, max_value=9999))
    @settings(max_examples=30, deadline=None)
    def test_intervals_nested(self, seed):
        draws = np.random.default_rng(seed).normal(size=300)
        s = summarize(draws)
        assert s.ci95[0] <= s.ci80[0] <= s.median <= s.ci80[1] <= s.ci95[1]


class TestGelmanRubin:
    def test_same_distribution_near_one(self):
        rng = np.random.default_rng(0)
        chains = rng.normal(size=(2, 10_000))
        assert 0.99 < gelman_rubin(chains) < 1.02

    def test_separated_chains_large(self):
        rng = np.random.default_rng(1)
        chains = np.stack([rng.normal(0, 1, 2000), rng.normal(100, 1, 2000)])
        assert gelman_rubin(chains) > 1.1 * 10

    def test_constant_chains(self):
        with pytest.raises(ZeroWithinVariance):
            gelman_rubin(np.ones((2, 100)))

    def test_affine_invariance(self):
        rng = np.random.default_rng(2)
        chains = rng.normal(size=(3, 500))
        base = gelman_rubin(chains)
        assert gelman_rubin(5.0 * chains - 11.0) == pytest.approx(base, rel=1e-10)

    def test_needs_two_chains(self):
        with pytest.raises(DomainError):
            gelman_rubin(np.random.default_rng(0).normal(size=(1, 100)))

    def test_needs_length_ten(self):
        with pytest.raises(DomainError):
            gelman_rubin(np.random.default_rng(0).normal(size=(2, 5)))


class TestEffectiveSampleSize:
    def test_iid_is_near_n(self):
        x = np.random.default_rng(3).normal(size=20_000)
        assert effective_sample_size(x) > 0.5 * x.size

    def test_ar1_matches_theory(self):
        # AR(1) with coefficient phi has ESS ~ n (1-phi) / (1+phi)
        rng = np.random.default_rng(4)
        phi, n = 0.9, 200_000
        x = np.empty(n)
        x[0] = 0.0
        eps = rng.normal(size=n)
        for t in range(1, n):
            x[t] = phi * x[t - 1] + eps[t]
        expected = n * (1 - phi) / (1 + phi)
        assert effective_sample_size(x) == pytest.approx(expected, rel=0.25)

    def test_constant_series(self):
        assert effective_sample_size(np.ones(50)) == 50.0


class TestRecallCalibration:
    def test_invariants(self):
        with pytest.raises(DomainError):
            RecallCalibration(a=-1.0, b=0.5, sigma_eps=0.1)
        with pytest.raises(DomainError):
            RecallCalibration(a=1.0, b=0.0, sigma_eps=0.1)
        with pytest.raises(DomainError):
            RecallCalibration(a=1.0, b=1.5, sigma_eps=0.1)
        RecallCalibration(a=1.0, b=1.0, sigma_eps=0.0)

    def test_noiseless_line_recovery(self):
        true_n = np.geomspace(1e3, 1e6, 12)
        est = np.exp(6.7 + 0.5 * np.log(true_n))
        pts = [(e, 0.0, t) for e, t in zip(est, true_n)]
        cal = fit_recall_calibration(pts)
        assert cal.a == pytest.approx(6.7, abs=1e-3)
        assert cal.b == pytest.approx(0.5, abs=1e-3)
        assert cal.sigma_eps == pytest.approx(0.0, abs=1e-3)

    def test_identity_data_gives_identity_calibration(self):
        true_n = np.geomspace(1e3, 1e6, 10)
        pts = [(t, 0.0, t) for t in true_n]
        cal = fit_recall_calibration(pts)
        assert cal.b == pytest.approx(1.0, abs=1e-6)
        assert cal.a == pytest.approx(0.0, abs=1e-4)
        assert cal.sigma_eps == pytest.approx(0.0, abs=1e-4)

    def test_sigma_recovery_with_spread(self):
        rng = RandomStream(21, 0)
        true_n = np.geomspace(1e3, 5e6, 29)
        recovered = []
        for _ in range(40):
            s = rng.gen.uniform(0.05, 0.15, size=29)
            noise = rng.gen.normal(0.0, np.sqrt(s**2 + 0.35**2))
            est = np.exp(6.7 + 0.5 * np.log(true_n) + noise)
            cal = fit_recall_calibration(list(zip(est, s, true_n)))
            recovered.append(cal.sigma_eps)
        assert np.median(recovered) == pytest.approx(0.35, rel=0.30)

    def test_diverged_when_slope_wants_negative(self):
        true_n = np.geomspace(1e3, 1e6, 8)
        est = np.exp(10.0 - 0.8 * np.log(true_n))
        with pytest.raises(FitDiverged):
            fit_recall_calibration([(e, 0.0, t) for e, t in zip(est, true_n)])

    def test_needs_three_points(self):
        with pytest.raises(DomainError):
            fit_recall_calibration([(10.0, 0.1, 20.0), (30.0, 0.1, 40.0)])


class TestRecallAdjustDraws:
    def test_fixed_point_is_exact(self):
        cal = RecallCalibration(a=6.7, b=0.5, sigma_eps=0.0)
        out = recall_adjust_draws([13.4], cal, RandomStream(0, 0))
        assert out[0] == 13.4  # bitwise: (13.4 - 6.7) / 0.5 == 13.4

    def test_identity_calibration_is_identity(self):
        cal = RecallCalibration(a=0.0, b=1.0, sigma_eps=0.0)
        draws = np.linspace(8.0, 14.0, 1000)
        out = recall_adjust_draws(draws, cal, RandomStream(1, 0))
        assert np.array_equal(out, draws)

    def test_variance_algebra(self):
        # Var(out) = Var(Y)/b^2 + sigma^2/b^2
        cal = RecallCalibration(a=2.0, b=0.5, sigma_eps=0.3)
        rng = RandomStream(2, 0)
        draws = rng.gen.normal(10.0, 0.8, size=100_000)
        out = recall_adjust_draws(draws, cal, RandomStream(3, 0))
        expected = 0.8**2 / 0.25 + 0.09 / 0.25
        assert out.var() == pytest.approx(expected, rel=0.02)

    def test_length_preserved(self):
        cal = RecallCalibration(a=1.0, b=0.5, sigma_eps=0.2)
        out = recall_adjust_draws(np.ones(137), cal, RandomStream(4, 0))
        assert out.shape == (137,)


class TestRecallApplicability:
    def test_warns_when_target_exceeds_known_range(self):
        ds = validate_dataset([[1, 0, 2]], [100, 200], 1000, unknown_index=2)
        with pytest.warns(RecallAdjustmentSuspect):
            suspect = check_recall_applicability(ds, unadjusted_size_mean=500.0)
        assert suspect

    def test_silent_inside_known_range(self):
        ds = validate_dataset([[1, 0, 2]], [100, 200], 1000, unknown_index=2)
        assert not check_recall_applicability(ds, unadjusted_size_mean=150.0)
