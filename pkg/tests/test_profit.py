import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from offerlab.choice import logistic
from offerlab.errors import ConfigurationError, InvalidInputError
from offerlab.hb import POSTERIOR_MEAN
from offerlab.profit import (
    NopConfig,
    SegmentData,
    annuity_factor,
    contract_months_to_years,
    grid_oracle,
    nop,
    optimize_policy,
    present_value,
    segment_data_from_assignments,
    segment_objective,
)
from offerlab.segments import SEGMENTS, SegmentAssignment
from tests.test_hb import hand_built_draws


def make_segment(betas_per_customer, loyalty, mrp=None, segment="inelastic-loyal"):
    """SegmentData plus a single-draw posterior built from explicit betas."""
    betas = np.asarray(betas_per_customer, dtype=float)
    if betas.ndim == 2:
        betas = betas[None, :, :]
    n = betas.shape[1]
    ids = list(range(1, n + 1))
    draws = hand_built_draws(betas, customer_ids=ids)
    seg = SegmentData(
        segment=segment,
        customer_ids=tuple(ids),
        loyalty=np.asarray(loyalty, dtype=float),
        mrp=np.full(n, 100.0) if mrp is None else np.asarray(mrp, dtype=float),
    )
    return seg, draws


class TestPresentValue:
    def test_single_undiscounted_term(self):
        assert present_value(100.0, 5.0, 0.5, 1, 0.0) == 145.0

    def test_zero_rate_is_linear_in_months(self):
        assert present_value(100.0, 5.0, 0.5, 60, 0.0) == 60 * 145.0

    def test_annuity_fixture(self):
        # closed form: 100 * (1 - 1.01^-12) / 0.01 = 1125.50775...
        assert present_value(100.0, 0.0, 0.0, 12, 0.12) == pytest.approx(1125.51, abs=0.01)

    def test_months_floor(self):
        with pytest.raises(InvalidInputError):
            present_value(100.0, 5.0, 0.0, 0, 0.12)

    @given(st.floats(-0.5, 0.5), st.floats(-0.4, 0.5), st.integers(1, 60))
    @settings(max_examples=100)
    def test_increasing_in_rate_when_margin_positive(self, r1, r2, months):
        if r1 + 1e-9 >= r2:
            return
        lo = present_value(100.0, 5.0, r1, months, 0.12)
        hi = present_value(100.0, 5.0, r2, months, 0.12)
        assert lo < hi

    @given(st.integers(1, 59), st.floats(0.0, 0.5))
    @settings(max_examples=100)
    def test_increasing_in_months_when_margin_positive(self, months, r):
        shorter = present_value(100.0, 5.0, r, months, 0.12)
        longer = present_value(100.0, 5.0, r, months + 1, 0.12)
        assert shorter < longer

    @given(st.floats(0.0, 0.5), st.floats(0.01, 0.5))
    @settings(max_examples=100)
    def test_decreasing_in_discount_rate(self, d1, extra):
        a = present_value(100.0, 5.0, 0.2, 24, d1)
        b = present_value(100.0, 5.0, 0.2, 24, d1 + extra)
        assert b < a

    def test_matches_term_by_term_sum(self):
        mrp, mrc, r, months, d = 87.5, 4.0, -0.2, 37, 0.09
        expected = sum(
            (mrp * (1 + r) - mrc) / (1 + d / 12) ** m for m in range(1, months + 1)
        )
        assert present_value(mrp, mrc, r, months, d) == pytest.approx(expected, rel=1e-12)


class TestNop:
    def test_zero_probability(self):
        assert nop(0.0, 0.9, 1000.0, 10.0) == 0.0

    def test_zero_loyalty(self):
        assert nop(0.9, 0.0, 1000.0, 10.0) == 0.0

    def test_direct_product(self):
        assert nop(0.5, 0.8, 1000.0, 0.0) == 400.0

    @given(st.floats(0, 1), st.floats(0, 1), st.floats(-1e4, 1e4), st.floats(0, 2))
    @settings(max_examples=100)
    def test_linear_in_loyalty_and_probability(self, p, l, pv, scale):
        base = nop(p, l, pv, 0.0)
        assert nop(p * scale, l, pv, 0.0) == pytest.approx(scale * base, rel=1e-9, abs=1e-9)
        assert nop(p, l * scale, pv, 0.0) == pytest.approx(scale * base, rel=1e-9, abs=1e-9)

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidInputError):
            nop(float("nan"), 0.5, 1.0, 0.0)


class TestSegmentObjective:
    def test_empty_segment(self):
        seg, draws = make_segment(np.zeros((1, 3)), [0.5])
        empty = SegmentData("inelastic-loyal", (), np.array([]), np.array([]))
        assert segment_objective(0.1, 12, empty, draws, NopConfig()) == 0.0

    def test_saturated_customer_reduces_to_present_value(self):
        seg, draws = make_segment([[500.0, 0.0, 0.0]], loyalty=[1.0])
        config = NopConfig(annual_rate=0.0)
        months, r = 24, 0.3
        value = segment_objective(r, months, seg, draws, config)
        assert value == pytest.approx(months * (100.0 * (1 + r) - 5.0), rel=1e-9)

    def test_matches_per_customer_recomputation(self):
        rng = np.random.default_rng(4)
        betas = rng.normal([0.5, 0.2, -3.0], [0.5, 0.1, 1.0], size=(7, 3))
        loyalty = rng.random(7)
        mrp = 80 + 40 * rng.random(7)
        seg, draws = make_segment(betas, loyalty, mrp)
        config = NopConfig()
        r, months = -0.15, 36
        years = contract_months_to_years(months)
        expected = 0.0
        for i in range(7):
            u = betas[i, 0] + betas[i, 1] * years + betas[i, 2] * r
            prob = 1 / (1 + math.exp(-u))
            pv = present_value(mrp[i], config.monthly_cost, r, months, config.annual_rate)
            expected += nop(prob, loyalty[i], pv, config.initial_cost)
        assert segment_objective(r, months, seg, draws, config) == pytest.approx(
            expected, rel=1e-9
        )

    def test_rejects_rate_outside_trained_band(self):
        seg, draws = make_segment([[0.5, 0.2, -3.0]], [0.5])
        with pytest.raises(InvalidInputError):
            segment_objective(0.75, 12, seg, draws, NopConfig())

    def test_draw_averaged_probability_used(self):
        betas = np.array([[[2.0, 0.0, 0.0]], [[-2.0, 0.0, 0.0]]])
        seg, _ = make_segment(betas[0], [1.0])
        draws = hand_built_draws(betas, customer_ids=[1])
        config = NopConfig(annual_rate=0.0, monthly_cost=0.0)
        value = segment_objective(0.0, 1, seg, draws, config)
        expected_prob = (logistic(2.0) + logistic(-2.0)) / 2
        assert value == pytest.approx(expected_prob * 100.0, rel=1e-9)


class TestOptimizePolicy:
    def test_discount_insensitive_segment_hits_upper_bound(self):
        rng = np.random.default_rng(9)
        betas = np.column_stack(
            [rng.normal(1.0, 0.3, 12), rng.normal(0.2, 0.05, 12), rng.normal(0.0, 0.01, 12)]
        )
        seg, draws = make_segment(betas, rng.random(12))
        policy = optimize_policy(seg, draws, NopConfig())
        assert policy.r == pytest.approx(0.5, abs=1e-9)
        assert policy.months == 60
        assert not policy.degenerate

    def test_pinned_bounds(self):
        seg, draws = make_segment([[0.5, 0.1, -2.0]], [0.8])
        config = NopConfig(r_bounds={s: (0.15, 0.15) for s in SEGMENTS})
        policy = optimize_policy(seg, draws, config)
        assert policy.r == 0.15
        assert policy.months in config.contract_options

    def test_zero_loyalty_degenerate_flag(self):
        seg, draws = make_segment([[0.5, 0.1, -2.0]], [0.0])
        policy = optimize_policy(seg, draws, NopConfig())
        assert policy.degenerate
        assert policy.r == 0.5
        assert policy.months == 60
        assert policy.nop_value == 0.0

    def test_agrees_with_grid_oracle_on_random_instances(self):
        rng = np.random.default_rng(21)
        config = NopConfig()
        for _ in range(5):
            n = int(rng.integers(3, 10))
            betas = np.column_stack(
                [
                    rng.normal(0.5, 1.0, n),
                    rng.normal(0.0, 0.4, n),
                    rng.normal(-3.0, 2.0, n),
                ]
            )
            seg, draws = make_segment(betas, rng.random(n), 60 + 80 * rng.random(n))
            policy = optimize_policy(seg, draws, config)
            oracle = grid_oracle(seg, draws, config, r_step=0.002)
            assert policy.nop_value >= oracle.nop_value - 0.001 * abs(oracle.nop_value)

    def test_empty_segment_rejected(self):
        _, draws = make_segment([[0.5, 0.1, -2.0]], [0.8])
        empty = SegmentData("elastic-loyal", (), np.array([]), np.array([]))
        with pytest.raises(InvalidInputError):
            optimize_policy(empty, draws, NopConfig())

    def test_posterior_mean_mode_runs(self):
        seg, draws = make_segment([[0.5, 0.1, -2.0]], [0.8])
        policy = optimize_policy(seg, draws, NopConfig(), mode=POSTERIOR_MEAN)
        assert policy.months in NopConfig().contract_options


class TestGridOracle:
    def test_single_grid_point(self):
        seg, draws = make_segment([[0.5, 0.1, -2.0]], [0.8])
        config = NopConfig(
            r_bounds={s: (0.2, 0.2) for s in SEGMENTS}, contract_options=(12,)
        )
        policy = grid_oracle(seg, draws, config)
        assert policy.r == 0.2
        assert policy.months == 12

    def test_monotone_objective_returns_upper_bound(self):
        seg, draws = make_segment([[3.0, 0.1, 0.0]], [1.0])
        policy = grid_oracle(seg, draws, NopConfig(), r_step=0.01)
        assert policy.r == pytest.approx(0.5, abs=1e-12)


class TestNopConfig:
    def test_bounds_must_stay_in_trained_band(self):
        with pytest.raises(ConfigurationError):
            NopConfig(r_bounds={s: (-0.7, 0.5) for s in SEGMENTS}).validate()

    def test_contract_options_floor(self):
        with pytest.raises(ConfigurationError):
            NopConfig(contract_options=(0, 12)).validate()

    def test_dict_round_trip(self):
        config = NopConfig(annual_rate=0.08, contract_options=(1, 12))
        rebuilt = NopConfig.from_dict(config.to_dict())
        assert rebuilt == config

    def test_segment_data_grouping(self):
        assignments = [
            SegmentAssignment(1, -0.5, 0.9, "inelastic-loyal"),
            SegmentAssignment(2, -2.5, 0.2, "elastic-not-loyal"),
            SegmentAssignment(3, -0.1, 0.8, "inelastic-loyal"),
        ]
        config = NopConfig()
        grouped = segment_data_from_assignments(assignments, config, mrp={2: 55.0})
        assert grouped["inelastic-loyal"].customer_ids == (1, 3)
        assert grouped["elastic-not-loyal"].mrp == pytest.approx([55.0])
        assert grouped["inelastic-loyal"].mrp == pytest.approx([100.0, 100.0])
        assert grouped["elastic-loyal"].n_customers == 0

    def test_months_to_years(self):
        assert contract_months_to_years(1) == pytest.approx(1 / 12)
        assert contract_months_to_years(60) == 5.0

    def test_annuity_factor_zero_rate(self):
        assert annuity_factor(60, 0.0) == 60.0
