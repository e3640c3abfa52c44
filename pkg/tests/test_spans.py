"""Mixture heads, stick-breaking, the trapezoid mask, and span extraction."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from protolens.errors import ConfigError
from protolens.spans import (
    SIGMA_CLAMP_HI,
    SIGMA_CLAMP_LO,
    MixtureHeadParams,
    MixtureParams,
    SpanMask,
    extract_discrete_span,
    extract_soft_mask,
    gaussian_pdf,
    init_mixture_head,
    mixture_params,
    pad_curve,
    select_component,
    span_mask,
    stick_break,
)


def zero_head(t_max=8, hidden=4, M=3):
    return MixtureHeadParams(
        t_max=t_max,
        hidden=hidden,
        num_components=M,
        w1=np.zeros((hidden, t_max)),
        b1=np.zeros(hidden),
        w2=np.zeros((hidden, hidden)),
        b2=np.zeros(hidden),
        w_mu=np.zeros((M, hidden)),
        b_mu=np.zeros(M),
        w_sigma=np.zeros((M, hidden)),
        b_sigma=np.zeros(M),
        w_pi=np.zeros((M, hidden)),
        b_pi=np.zeros(M),
    )


def make_params(pi_raw, mu, sigma):
    pi_raw = np.asarray(pi_raw, dtype=np.float64)
    return MixtureParams(
        nu=np.full_like(pi_raw, 0.5),
        pi_raw=pi_raw,
        pi_norm=pi_raw / pi_raw.sum(),
        mu=np.asarray(mu, dtype=np.float64),
        sigma=np.asarray(sigma, dtype=np.float64),
    )


class TestHeadConstruction:
    def test_init_shapes(self):
        rng = np.random.default_rng(0)
        head = init_mixture_head(16, 8, 3, rng)
        assert head.w1.shape == (8, 16)
        assert head.w2.shape == (8, 8)
        assert head.w_mu.shape == (3, 8)
        assert head.b_sigma.shape == (3,)

    def test_init_deterministic(self):
        a = init_mixture_head(16, 8, 3, np.random.default_rng(5))
        b = init_mixture_head(16, 8, 3, np.random.default_rng(5))
        assert np.array_equal(a.w1, b.w1)
        assert np.array_equal(a.w_pi, b.w_pi)

    def test_shape_validation(self):
        head = zero_head()
        with pytest.raises(ConfigError, match="w_mu"):
            MixtureHeadParams(
                t_max=head.t_max,
                hidden=head.hidden,
                num_components=head.num_components,
                w1=head.w1,
                b1=head.b1,
                w2=head.w2,
                b2=head.b2,
                w_mu=np.zeros((99, head.hidden)),
                b_mu=head.b_mu,
                w_sigma=head.w_sigma,
                b_sigma=head.b_sigma,
                w_pi=head.w_pi,
                b_pi=head.b_pi,
            )

    def test_pad_curve(self):
        padded = pad_curve(np.array([1.0, 2.0]), 5)
        assert np.array_equal(padded, [1.0, 2.0, 0.0, 0.0, 0.0])
        same = pad_curve(np.array([1.0, 2.0, 3.0]), 3)
        assert np.array_equal(same, [1.0, 2.0, 3.0])
        with pytest.raises(ConfigError):
            pad_curve(np.zeros(6), 5)

    def test_zero_head_neutral_outputs(self):
        params = mixture_params(zero_head(), np.linspace(-1, 1, 6))
        assert np.allclose(params.nu, 0.5, atol=1e-15)
        assert np.allclose(params.mu, 3.0, atol=1e-15)  # 0.5 * T with T=6
        assert np.allclose(params.sigma, 1.0, atol=1e-15)

    def test_mixture_params_ranges(self):
        rng = np.random.default_rng(1)
        head = init_mixture_head(12, 8, 4, rng)
        for _ in range(20):
            T = int(rng.integers(1, 13))
            curve = rng.uniform(-1, 1, T)
            p = mixture_params(head, curve)
            assert np.all((p.mu >= 0) & (p.mu <= T))
            assert np.all(p.sigma >= math.exp(SIGMA_CLAMP_LO) - 1e-15)
            assert np.all(p.sigma <= math.exp(SIGMA_CLAMP_HI) + 1e-12)
            assert np.all((p.nu > 0) & (p.nu < 1))


class TestStickBreak:
    def test_halves_exactly(self):
        pi_raw, pi_norm = stick_break(np.array([0.5, 0.5, 0.5]))
        assert np.array_equal(pi_raw, [0.5, 0.25, 0.125])
        assert np.allclose(pi_norm, [4 / 7, 2 / 7, 1 / 7], atol=1e-15)

    def test_single_component(self):
        pi_raw, pi_norm = stick_break(np.array([0.3]))
        assert pi_raw[0] == pytest.approx(0.3)
        assert pi_norm[0] == 1.0

    @given(
        nu=st.lists(st.floats(1e-6, 0.999), min_size=1, max_size=8),
    )
    @settings(max_examples=200, deadline=None)
    def test_simplex_properties(self, nu):
        pi_raw, pi_norm = stick_break(np.array(nu))
        assert np.all(pi_raw >= 0)
        assert pi_raw.sum() < 1.0
        assert abs(pi_norm.sum() - 1.0) <= 1e-9

    def test_near_one_fractions_round_to_unit_sum(self):
        # the exact sum is 1 - (1e-6)**3, which float64 rounds up to 1.0;
        # the strict inequality is an exact-arithmetic property
        pi_raw, pi_norm = stick_break(np.array([1 - 1e-6] * 3))
        assert pi_raw.sum() <= 1.0
        assert abs(pi_norm.sum() - 1.0) <= 1e-9

    def test_ordering_matches_prefix_products(self):
        nu = np.array([0.9, 0.2, 0.7])
        pi_raw, _ = stick_break(nu)
        assert pi_raw[0] == pytest.approx(0.9)
        assert pi_raw[1] == pytest.approx(0.1 * 0.2)
        assert pi_raw[2] == pytest.approx(0.1 * 0.8 * 0.7)


class TestGaussianPdf:
    def test_peak_value(self):
        sigma = 1.0 / math.sqrt(2.0 * math.pi)
        assert gaussian_pdf(3.0, 3.0, sigma) == pytest.approx(1.0, abs=1e-12)

    def test_standard_normal_at_zero(self):
        assert gaussian_pdf(0.0, 0.0, 1.0) == pytest.approx(
            1.0 / math.sqrt(2.0 * math.pi), abs=1e-15
        )

    def test_symmetry(self):
        assert gaussian_pdf(2.0, 5.0, 1.3) == pytest.approx(
            gaussian_pdf(8.0, 5.0, 1.3), abs=1e-15
        )

    def test_invalid_sigma(self):
        with pytest.raises(ValueError):
            gaussian_pdf(0.0, 0.0, 0.0)

    def test_mixture_density_integrates_to_one(self):
        mu, sigma = 4.2, 1.7
        xs = np.linspace(mu - 10 * sigma, mu + 10 * sigma, 20001)
        total = np.trapezoid(gaussian_pdf(xs, mu, sigma), xs)
        assert total == pytest.approx(1.0, abs=1e-6)


class TestSpanMask:
    def test_plateau_and_zeros(self):
        mask = span_mask(mu=5.0, sigma=1.0, ramp=2.0, T=10)
        assert np.array_equal(mask[3:6], [1.0, 1.0, 1.0])  # |mu-t| <= 1
        assert mask[0] == 0.0 and mask[9] == 0.0  # |mu-t| >= 3

    def test_linear_ramp_values(self):
        mask = span_mask(mu=5.0, sigma=1.0, ramp=2.0, T=10)
        assert mask[2] == pytest.approx(0.5)  # t=3, dist 2, (2+1-2)/2
        assert mask[6] == pytest.approx(0.5)

    def test_single_position(self):
        mask = span_mask(mu=1.0, sigma=0.5, ramp=1.0, T=1)
        assert mask.shape == (1,)
        assert mask[0] == 1.0

    def test_errors(self):
        with pytest.raises(ValueError):
            span_mask(1.0, 1.0, 0.0, 5)
        with pytest.raises(ValueError):
            span_mask(1.0, 1.0, 1.0, 0)

    @given(
        mu=st.floats(-2.0, 14.0),
        sigma=st.floats(0.01, 5.0),
        ramp=st.floats(0.1, 5.0),
        T=st.integers(1, 12),
    )
    @settings(max_examples=200, deadline=None)
    def test_step_bounded_by_slope(self, mu, sigma, ramp, T):
        mask = span_mask(mu, sigma, ramp, T)
        assert np.all((mask >= 0.0) & (mask <= 1.0))
        if T > 1:
            steps = np.abs(np.diff(mask))
            assert np.all(steps <= 1.0 / ramp + 1e-12)

    def test_monotone_in_sigma(self):
        narrow = span_mask(4.0, 0.5, 2.0, 8)
        wide = span_mask(4.0, 2.0, 2.0, 8)
        assert np.all(wide >= narrow - 1e-15)


class TestSelection:
    def test_select_component_argmax(self):
        params = make_params([0.2, 0.5, 0.3], [1.0, 2.0, 3.0], [0.1, 0.2, 0.3])
        assert select_component(params) == (2.0, 0.2)

    def test_tie_goes_to_lower_index(self):
        params = make_params([0.4, 0.4, 0.2], [1.0, 2.0, 3.0], [0.1, 0.2, 0.3])
        assert select_component(params) == (1.0, 0.1)

    def test_union_mode_dominates_argmax(self):
        params = make_params([0.5, 0.4], [2.0, 7.0], [1.0, 1.0])
        arg = extract_soft_mask(params, ramp=2.0, T=9, mode="argmax")
        uni = extract_soft_mask(params, ramp=2.0, T=9, mode="union")
        assert np.all(uni.soft >= arg.soft - 1e-15)
        assert uni.anchor == arg.anchor == 2.0

    def test_unknown_mode(self):
        params = make_params([1.0, 1.0], [1.0, 2.0], [1.0, 1.0])
        with pytest.raises(ConfigError):
            extract_soft_mask(params, ramp=2.0, T=4, mode="everything")


class TestDiscreteSpan:
    def test_plateau_run(self):
        mask = SpanMask(
            soft=np.array([0.0, 0.6, 1.0, 0.6, 0.0]), anchor=3.0, spread=1.0, ramp=2.0
        )
        assert extract_discrete_span(mask) == (2, 4)

    def test_all_below_threshold(self):
        mask = SpanMask(
            soft=np.array([0.1, 0.2, 0.1]), anchor=2.0, spread=0.1, ramp=0.5
        )
        assert extract_discrete_span(mask) is None

    def test_full_coverage(self):
        mask = SpanMask(soft=np.ones(4), anchor=2.5, spread=9.0, ramp=1.0)
        assert extract_discrete_span(mask) == (1, 4)

    def test_anchor_clipped_into_range(self):
        mask = SpanMask(
            soft=np.array([0.9, 0.4, 0.0]), anchor=-3.0, spread=1.0, ramp=1.0
        )
        assert extract_discrete_span(mask) == (1, 1)

    def test_custom_threshold(self):
        mask = SpanMask(
            soft=np.array([0.0, 0.6, 1.0, 0.6, 0.0]), anchor=3.0, spread=1.0, ramp=2.0
        )
        assert extract_discrete_span(mask, threshold=0.8) == (3, 3)

    def test_end_to_end_with_real_curve(self):
        rng = np.random.default_rng(3)
        head = init_mixture_head(10, 8, 3, rng)
        curve = np.zeros(10)
        curve[6] = 1.0
        params = mixture_params(head, curve)
        mask = extract_soft_mask(params, ramp=2.0, T=10)
        span = extract_discrete_span(mask)
        assert span is not None
        lo, hi = span
        assert 1 <= lo <= hi <= 10
