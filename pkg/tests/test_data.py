"""Dataset validation, the mean/dispersion Beta parameterization, and model
spec invariants."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nsum.data import (
    BetaMR,
    ModelSpec,
    beta_mr_from_shapes,
    beta_mr_to_shapes,
    fit_beta_mr_moments,
    validate_dataset,
)
from nsum.errors import (
    DegenerateSamples,
    DomainError,
    KnownSizeExceedsTotal,
    NegativeResponse,
    ShapeMismatch,
)
from nsum.numerics import RandomStream


class TestValidateDataset:
    def test_minimal_valid(self):
        ds = validate_dataset([[1, 0, 2], [0, 0, 1]], [100, 200], 1000, unknown_index=2)
        assert ds.n_respondents == 2
        assert ds.n_groups == 3
        assert ds.unknown_index == 2
        assert list(ds.known_sizes) == [100, 200]
        assert list(ds.known_columns) == [0, 1]

    def test_negative_response_names_location(self):
        with pytest.raises(NegativeResponse, match="row 1, column 2"):
            validate_dataset([[1, 0, 2], [0, 0, -1]], [100, 200], 1000)

    def test_known_size_must_be_strictly_below_total(self):
        with pytest.raises(KnownSizeExceedsTotal, match="#0"):
            validate_dataset([[1, 0], [0, 1]], [1000], 1000)

    def test_ragged_table(self):
        with pytest.raises(ShapeMismatch):
            validate_dataset([[1, 0, 2], [0, 0]], [100, 200], 1000)

    def test_wrong_size_count(self):
        with pytest.raises(ShapeMismatch, match="expected 2 known sizes"):
            validate_dataset([[1, 0, 2]], [100], 1000)

    def test_bad_unknown_index(self):
        with pytest.raises(ShapeMismatch, match="unknown_index"):
            validate_dataset([[1, 0]], [100], 1000, unknown_index=5)

    def test_non_integer_response(self):
        with pytest.raises(ShapeMismatch, match="row 0, column 1"):
            validate_dataset([[1, 0.5]], [100], 1000)

    def test_needs_two_groups(self):
        with pytest.raises(ShapeMismatch):
            validate_dataset([[3]], [], 1000)

    def test_does_not_mutate_input(self):
        raw = [[1, 0, 2], [0, 0, 1]]
        arr = np.array(raw)
        validate_dataset(arr, [100, 200], 1000)
        assert np.array_equal(arr, np.array(raw))

    def test_result_arrays_are_readonly(self):
        ds = validate_dataset([[1, 0, 2]], [100, 200], 1000)
        with pytest.raises(ValueError):
            ds.responses[0, 0] = 5

    def test_default_unknown_is_last_column(self):
        ds = validate_dataset([[1, 2, 3]], [10, 20], 1000)
        assert ds.unknown_index == 2

    def test_size_lookup_by_column(self):
        ds = validate_dataset([[1, 0, 2]], [100, 200], 1000, unknown_index=1)
        assert ds.size_of_column(0) == 100
        assert ds.size_of_column(2) == 200
        with pytest.raises(DomainError):
            ds.size_of_column(1)


class TestBetaMR:
    def test_symmetric_unit_shapes(self):
        # alpha + beta = 1/rho - 1 = 2 at rho = 1/3, split by the mean
        a, b = beta_mr_to_shapes(BetaMR(0.5, 1.0 / 3.0))
        assert a == pytest.approx(1.0, rel=1e-12)
        assert b == pytest.approx(1.0, rel=1e-12)

    def test_informative_prior_shapes(self):
        # alpha + beta = 1/0.011 - 1, split 0.542 / 0.458
        a, b = beta_mr_to_shapes(BetaMR(0.542, 0.011))
        total = 1.0 / 0.011 - 1.0
        assert a == pytest.approx(0.542 * total, rel=1e-12)
        assert b == pytest.approx(0.458 * total, rel=1e-12)
        assert a == pytest.approx(48.731, abs=5e-3)
        assert b == pytest.approx(41.178, abs=5e-3)

    def test_limiting_dispersion(self):
        a, b = beta_mr_to_shapes(BetaMR(0.5, 1.0 - 1e-9))
        assert 0 < a < 1e-6 and 0 < b < 1e-6

    def test_domain(self):
        with pytest.raises(DomainError):
            BetaMR(0.0, 0.5)
        with pytest.raises(DomainError):
            BetaMR(0.5, 1.0)

    @given(
        st.floats(min_value=1e-6, max_value=1.0 - 1e-6),
        st.floats(min_value=1e-6, max_value=1.0 - 1e-6),
    )
    @settings(max_examples=200, deadline=None)
    def test_round_trip(self, m, rho):
        p = BetaMR(m, rho)
        back = beta_mr_from_shapes(*beta_mr_to_shapes(p))
        assert back.m == pytest.approx(m, rel=1e-12)
        assert back.rho == pytest.approx(rho, rel=1e-12)

    @pytest.mark.parametrize(
        "m,rho",
        [(0.1, 0.05), (0.5, 0.333), (0.9, 0.8), (0.542, 0.011), (0.05, 0.95)],
    )
    def test_variance_identity_monte_carlo(self, m, rho):
        # Var = m (1-m) rho, against 1e6 beta draws
        a, b = beta_mr_to_shapes(BetaMR(m, rho))
        draws = RandomStream(77, 0).gen.beta(a, b, size=1_000_000)
        assert draws.var() == pytest.approx(m * (1 - m) * rho, rel=0.01)


class TestFitBetaMRMoments:
    def test_zero_variance(self):
        with pytest.raises(DegenerateSamples):
            fit_beta_mr_moments([0.5, 0.5, 0.5])

    def test_two_point_hand_arithmetic(self):
        # mean 0.5, sample variance 0.02, rho = 0.02 / 0.25
        fitted = fit_beta_mr_moments([0.4, 0.6])
        assert fitted.m == pytest.approx(0.5, rel=1e-12)
        assert fitted.rho == pytest.approx(0.08, rel=1e-10)

    def test_recovery_from_draws(self):
        a, b = beta_mr_to_shapes(BetaMR(0.542, 0.011))
        draws = RandomStream(3, 1).gen.beta(a, b, size=100_000)
        fitted = fit_beta_mr_moments(draws)
        assert fitted.m == pytest.approx(0.542, rel=0.05)
        assert fitted.rho == pytest.approx(0.011, rel=0.05)

    def test_requires_open_interval(self):
        with pytest.raises(DomainError):
            fit_beta_mr_moments([0.0, 0.5])

    def test_requires_two_samples(self):
        with pytest.raises(DegenerateSamples):
            fit_beta_mr_moments([0.4])


class TestModelSpec:
    def test_defaults(self):
        spec = ModelSpec(kind="random_degree")
        assert spec.mu_range == (3.0, 8.0)
        assert spec.sigma_range == (0.25, 2.0)
        assert spec.jacobian_mode == "exact"

    def test_transmission_prior_required_exactly_when_needed(self):
        prior = BetaMR(0.542, 0.011)
        with pytest.raises(DomainError):
            ModelSpec(kind="transmission")
        with pytest.raises(DomainError):
            ModelSpec(kind="combined")
        with pytest.raises(DomainError):
            ModelSpec(kind="barrier", transmission_prior=prior)
        ModelSpec(kind="transmission", transmission_prior=prior)
        ModelSpec(kind="combined", transmission_prior=prior)

    def test_empty_range_rejected(self):
        with pytest.raises(DomainError):
            ModelSpec(kind="random_degree", mu_range=(5.0, 5.0))

    def test_unknown_kind(self):
        with pytest.raises(DomainError):
            ModelSpec(kind="degree")

    def test_jacobian_mode_checked(self):
        with pytest.raises(DomainError):
            ModelSpec(
                kind="transmission",
                transmission_prior=BetaMR(0.5, 0.1),
                jacobian_mode="fd",
            )
