"""
Unit tests for the numerical theorem checks.

Covers the discrete generator-loss integral, its log 2 lower bound, the
divergence rate under a density floor, the refinement convergence suite
and the gradient-vanishing check.
"""

import math

import numpy as np
import pytest

from src.config import SmartConfig, TrainConfig
from src.exceptions import InvalidDistributionError, LabError, VerificationError
from src.gan import build_gan_pair
from src.schedule import build_schedule
from src.theorem_lab import (
    LOG2,
    SUMMARY_HEADER,
    DiscreteDist,
    RefinementRun,
    RefinementSuiteReport,
    SupportRelation,
    VerificationSummary,
    closed_form_discriminator,
    closed_form_logit,
    closed_form_logit_gradient,
    divergence_rate_scan,
    generator_loss_integral,
    gradient_vanishing_check,
    lower_bound_scan,
    perturbation_check,
    refinement_convergence_suite,
    run_verification_suite,
)
from src.toy_data import GridMixture, OracleNoisePredictor


class TestDiscreteDist:
    """Test cases for DiscreteDist validation."""

    def test_uniform(self):
        dist = DiscreteDist.uniform(['a', 'b', 'c', 'd'])
        assert dist.mass_of('c') == 0.25
        assert dist.mass_of('z') == 0.0

    @pytest.mark.parametrize('support,mass', [
        (['a', 'b'], [0.5, 0.6]),
        (['a', 'a'], [0.5, 0.5]),
        (['a', 'b'], [1.5, -0.5]),
        (['a', 'b'], [1.0]),
        (['a', 'b'], [np.nan, 1.0]),
    ])
    def test_invalid(self, support, mass):
        with pytest.raises(InvalidDistributionError):
            DiscreteDist(support, np.array(mass))

    def test_positive_support_skips_zero_mass(self):
        dist = DiscreteDist.from_mapping({'a': 1.0, 'b': 0.0})
        assert dist.positive_support == {'a'}


class TestGeneratorLossIntegral:
    """Test cases for generator_loss_integral."""

    def test_equal_distributions_give_log2(self):
        dist = DiscreteDist(['a', 'b', 'c'], np.array([0.2, 0.3, 0.5]))
        report = generator_loss_integral(dist, dist)
        assert report.value == pytest.approx(LOG2, abs=1e-12)
        assert report.support_relation is SupportRelation.EQUAL
        assert not report.divergent

    def test_disjoint_point_masses_with_floor(self):
        report = generator_loss_integral(DiscreteDist.point('a'), DiscreteDist.point('b'), floor=1e-9)
        assert report.value == pytest.approx(-math.log(1e-9 / (1 + 1e-9)), rel=1e-9)
        assert report.support_relation is SupportRelation.A_MINUS_B_POSITIVE
        assert report.escaped_mass == 1.0

    def test_zero_floor_is_divergent(self):
        report = generator_loss_integral(DiscreteDist.uniform(['a', 'b']), DiscreteDist.point('a'))
        assert report.divergent
        assert math.isinf(report.value)
        assert report.escaped_mass == 0.5

    def test_overlapping_is_finite(self):
        """supp qA inside supp qB never diverges."""
        report = generator_loss_integral(DiscreteDist.point('a'), DiscreteDist.uniform(['a', 'b']))
        assert report.support_relation is SupportRelation.OVERLAPPING
        assert report.value == pytest.approx(math.log(3.0))
        assert report.value > LOG2

    def test_zero_mass_atoms_ignored(self):
        qB = DiscreteDist.from_mapping({'a': 0.25, 'b': 0.75})
        plain = generator_loss_integral(DiscreteDist.from_mapping({'a': 0.5, 'b': 0.5}), qB)
        padded = generator_loss_integral(DiscreteDist.from_mapping({'a': 0.5, 'b': 0.5, 'c': 0.0}), qB)
        assert padded.value == plain.value

    def test_negative_floor(self):
        dist = DiscreteDist.point('a')
        with pytest.raises(InvalidDistributionError):
            generator_loss_integral(dist, dist, floor=-1.0)


class TestBounds:
    """Test cases for the log 2 bound, perturbations and divergence rate."""

    def test_lower_bound_scan_passes(self):
        report = lower_bound_scan(2000, 8, np.random.default_rng(0))
        assert report.passed
        assert report.min_excess > 0
        assert report.max_equality_error <= 1e-12

    def test_lower_bound_scan_single_atom(self):
        """With one atom every pair is equal and sits on the bound."""
        report = lower_bound_scan(10, 1, np.random.default_rng(0))
        assert report.bound_violations == 0
        assert report.min_excess == pytest.approx(0.0, abs=1e-12)

    def test_lower_bound_scan_arguments(self):
        with pytest.raises(LabError):
            lower_bound_scan(0, 8, np.random.default_rng(0))
        with pytest.raises(LabError):
            lower_bound_scan(10, 0, np.random.default_rng(0))

    def test_small_perturbation_exceeds_log2(self):
        report = perturbation_check(DiscreteDist.uniform(range(8)), 1e-3, atom_index=3)
        assert report.passed
        assert 0 < report.excess < 1e-3

    @pytest.mark.parametrize('p', [0.1, 0.3, 0.7])
    def test_divergence_rate_matches_escaped_mass(self, p):
        report = divergence_rate_scan(p)
        assert report.relative_error <= 0.01
        assert np.all(np.diff(report.values) > 0)

    def test_divergence_rate_rejects_bad_mass(self):
        with pytest.raises(LabError):
            divergence_rate_scan(1.0)


class TestRefinementSuite:
    """Test cases for refinement_convergence_suite."""

    def setup_method(self):
        self.mix = GridMixture.grid()
        self.sched = build_schedule(1000)

    def test_terminal_distance_shrinks_with_t(self):
        report = refinement_convergence_suite(self.mix, [160, 80, 40], 60, 1000,
                                              np.random.default_rng(1), sched=self.sched)
        assert report.terminal_decreasing
        assert [run.window_checked for run in report.runs] == [False, True, True]
        assert all(run.windows_non_increasing for run in report.runs if run.window_checked)
        assert report.runs[-1].terminal_distance < 0.1
        assert report.passed

    def test_large_t_windows_are_recorded_not_gated(self):
        rising = RefinementRun(t=160, terminal_distance=0.37, window_means=np.array([0.359, 0.368]),
                               windows_non_increasing=False, window_checked=False)
        settled = RefinementRun(t=40, terminal_distance=0.03, window_means=np.array([0.05, 0.03]),
                                windows_non_increasing=True)
        assert RefinementSuiteReport(runs=[rising, settled]).passed
        rising.window_checked = True
        assert not RefinementSuiteReport(runs=[rising, settled]).passed

    def test_conditional_refinement_lands_on_own_center(self):
        report = refinement_convergence_suite(self.mix, [40], 40, 500, np.random.default_rng(2),
                                              conditional=True, sched=self.sched)
        run = report.runs[0]
        assert run.label_match_fraction == 1.0
        assert run.min_cross_label_distance >= 0.5

    def test_empty_t_list(self):
        with pytest.raises(LabError):
            refinement_convergence_suite(self.mix, [], 10, 10, np.random.default_rng(0))


class TestGradientVanishing:
    """Test cases for sharpening the discriminator toward its closed form."""

    def setup_method(self):
        self.mix = GridMixture.grid()
        self.sched = build_schedule(1000)
        self.oracle = OracleNoisePredictor(self.mix, self.sched)

    def test_closed_form_discriminator(self):
        d = closed_form_discriminator(self.mix, (0.5, 0.5), np.array([[0.0, 0.0], [0.5, 0.5], [0.25, 0.25]]))
        assert d[0] > 0.99
        assert d[1] < 0.01
        assert d[2] == pytest.approx(0.5)

    def test_logit_gradient_matches_finite_difference(self):
        x = np.array([[0.3, 0.1], [-1.2, 0.45], [2.05, -2.4]])
        h = 1e-6
        numeric = np.zeros_like(x)
        for axis in range(2):
            step = np.zeros(2)
            step[axis] = h
            numeric[:, axis] = (closed_form_logit(self.mix, (0.5, 0.5), x + step)
                                - closed_form_logit(self.mix, (0.5, 0.5), x - step)) / (2 * h)
        analytic = closed_form_logit_gradient(self.mix, (0.5, 0.5), x)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-4)

    def test_check_leaves_pair_untouched(self):
        rng = np.random.default_rng(4)
        pair = build_gan_pair(2, rng)
        before = pair.discriminator.layers[0].weight.copy()
        report = gradient_vanishing_check(pair, self.mix, (0.5, 0.5), self.oracle, self.sched,
                                          SmartConfig(), rng, n=128, stages=3, train_steps=20)
        np.testing.assert_array_equal(pair.discriminator.layers[0].weight, before)
        assert [stage.weight for stage in report.stages] == [0.25, 0.5, 1.0]
        assert report.regularity_bounded
        assert report.optimal_d_fake_mean < 0.01

    def test_fully_sharpened_stage_is_the_optimum(self):
        rng = np.random.default_rng(6)
        report = gradient_vanishing_check(build_gan_pair(2, rng), self.mix, (0.5, 0.5), self.oracle,
                                          self.sched, SmartConfig(), rng, n=256, train_steps=50)
        last = report.stages[-1]
        assert last.d_fake_mean == pytest.approx(report.optimal_d_fake_mean)
        # at the optimum -log D keeps a gradient of about |offset| / sigma^2 per fake
        assert last.adversarial_norm > 100.0
        assert last.saturating_norm < 1e-6

    @pytest.mark.slow
    def test_saturating_gradient_vanishes(self):
        rng = np.random.default_rng(5)
        report = gradient_vanishing_check(build_gan_pair(2, rng), self.mix, (0.5, 0.5), self.oracle,
                                          self.sched, SmartConfig(), rng)
        assert report.saturating_monotone
        assert report.g_loss_rising
        assert report.passed

    def test_invalid_arguments(self):
        pair = build_gan_pair(2, np.random.default_rng(0), num_classes=49)
        with pytest.raises(LabError):
            gradient_vanishing_check(pair, self.mix, (0.5, 0.5), self.oracle, self.sched,
                                     SmartConfig(), np.random.default_rng(0))
        with pytest.raises(LabError, match="stages"):
            gradient_vanishing_check(build_gan_pair(2, np.random.default_rng(0)), self.mix, (0.5, 0.5),
                                     self.oracle, self.sched, SmartConfig(), np.random.default_rng(0), stages=0)


class TestVerificationSummary:
    """Test cases for the summary bookkeeping."""

    def test_rows_and_failures(self):
        summary = VerificationSummary()
        summary.add('first', True, 1.0, "fine, really")
        summary.add('second', False, 2.0)
        assert summary.failed == ['second']
        assert not summary.passed
        assert summary.rows()[0] == ('first', 1, 1.0, 'fine; really')
        assert len(SUMMARY_HEADER) == len(summary.rows()[0])
        with pytest.raises(VerificationError) as exc_info:
            summary.raise_for_failures()
        assert exc_info.value.context['failed_checks'] == ['second']


@pytest.mark.slow
class TestVerificationSuite:
    """The full suite on the default configuration."""

    def test_every_check_passes(self):
        summary = run_verification_suite(TrainConfig())
        assert summary.failed == []
        names = [check.name for check in summary.checks]
        assert 'gradient_vanishing' in names
        assert 'divergence_rate_p0.3' in names
