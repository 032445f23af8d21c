"""
Unit tests for the GAN trainer and the score-matching regularity.

Gradients of the adversarial losses and of the regularity are checked
against central finite differences on small networks.
"""

import math
from unittest.mock import patch

import numpy as np
import pytest

from src import gan as gan_module
from src.checkpoint import load_checkpoint
from src.config import JacobianMode, SmartConfig, TrainConfig
from src.data_models import LabeledBatch
from src.diffusion import NoisePredictor, TIME_FEATURES
from src.exceptions import DivergenceError, LabError, NonFiniteError, TimestepError
from src.gan import (
    GanPair,
    GanStreams,
    adversarial_output_gradient,
    build_gan_pair,
    d_loss,
    g_loss,
    generator_step,
    sample_generator,
    sample_generator_sharded,
    score_regularity,
    train_gan,
)
from src.nn import AdamOptimizer, Mlp
from src.schedule import build_schedule
from src.toy_data import GridMixture, OracleNoisePredictor


def perturbation_gradient(loss, array, indices, h=1e-6):
    values = []
    for idx in indices:
        original = array[idx]
        array[idx] = original + h
        plus = loss()
        array[idx] = original - h
        minus = loss()
        array[idx] = original
        values.append((plus - minus) / (2 * h))
    return np.array(values)


def small_pair(rng, num_classes=0):
    generator = Mlp.build([2 + num_classes, 8, 2], rng, name="gen")
    discriminator = Mlp.build([2 + num_classes, 8, 1], rng, name="disc")
    for net in (generator, discriminator):
        for layer in net.layers:
            layer.bias[:] = rng.uniform(-0.1, 0.1, size=layer.bias.shape)
    return GanPair(generator, discriminator, latent_dim=2, num_classes=num_classes)


def quick_config(**overrides):
    cfg = TrainConfig()
    cfg.gan.iters = 20
    cfg.gan.batch = 64
    cfg.eval.interval = 10
    cfg.eval.samples = 490
    cfg.eval.shards = 2
    for key, value in overrides.items():
        section, attr = key.split('__')
        setattr(getattr(cfg, section), attr, value)
    return cfg


class TestGanPair:
    """Test cases for construction and sampling."""

    def setup_method(self):
        self.rng = np.random.default_rng(0)

    def test_default_architecture(self):
        pair = build_gan_pair(2, self.rng)
        assert pair.generator.dims == [2, 128, 128, 2]
        assert pair.discriminator.dims == [2, 128, 128, 1]

    def test_conditional_architecture(self):
        pair = build_gan_pair(2, self.rng, num_classes=49)
        assert pair.generator.in_dim == 51
        assert pair.discriminator.in_dim == 51
        assert pair.conditional

    def test_rejects_mismatched_networks(self):
        with pytest.raises(LabError, match="generator"):
            GanPair(Mlp.build([3, 2], self.rng), Mlp.build([2, 1], self.rng), latent_dim=2)
        with pytest.raises(LabError, match="discriminator"):
            GanPair(Mlp.build([2, 2], self.rng), Mlp.build([2, 2], self.rng), latent_dim=2)

    def test_conditional_needs_labels(self):
        pair = small_pair(self.rng, num_classes=3)
        with pytest.raises(LabError, match="labels"):
            pair.generate(np.zeros((2, 2)))

    def test_sample_generator(self):
        pair = small_pair(self.rng)
        batch = sample_generator(pair, 7, self.rng)
        assert batch.points.shape == (7, 2)
        assert batch.labels is None

    def test_conditional_sample_draws_labels(self):
        pair = small_pair(self.rng, num_classes=3)
        batch = sample_generator(pair, 30, self.rng)
        assert batch.labels.shape == (30,)
        assert set(batch.labels) <= {0, 1, 2}

    def test_sharded_sampling_is_reproducible(self):
        pair = small_pair(self.rng)
        a = sample_generator_sharded(pair, 101, 5, shards=4)
        b = sample_generator_sharded(pair, 101, 5, shards=4)
        np.testing.assert_array_equal(a.points, b.points)

    def test_tensors_round_trip(self):
        pair = small_pair(self.rng, num_classes=3)
        restored = GanPair.from_tensors(pair.to_tensors())
        assert restored.latent_dim == 2 and restored.num_classes == 3
        z = self.rng.standard_normal((4, 2))
        labels = np.array([0, 1, 2, 0])
        np.testing.assert_array_equal(restored.generate(z, labels, cache=False),
                                      pair.generate(z, labels, cache=False))


class TestAdversarialLosses:
    """Test cases for d_loss and g_loss."""

    def setup_method(self):
        self.rng = np.random.default_rng(3)
        self.pair = small_pair(self.rng)
        self.real = LabeledBatch(points=self.rng.standard_normal((6, 2)))
        self.z = self.rng.standard_normal((6, 2))

    def test_zero_logit_discriminator(self):
        """D = 1/2 everywhere gives d_loss = 2 log 2 and g_loss = log 2."""
        last = self.pair.discriminator.layers[-1]
        last.weight[:] = 0.0
        last.bias[:] = 0.0
        assert d_loss(self.pair, self.real, self.z, compute_gradients=False) == pytest.approx(2 * math.log(2))
        assert g_loss(self.pair, self.z, compute_gradients=False) == pytest.approx(math.log(2))

    def test_separating_discriminator_has_zero_d_loss(self):
        logits = [np.full((6, 1), 50.0), np.full((6, 1), -50.0)]
        with patch.object(self.pair.discriminator, 'forward', side_effect=logits):
            loss = d_loss(self.pair, self.real, self.z, compute_gradients=False)
        assert loss == pytest.approx(0.0, abs=1e-20)

    def test_confident_rejection_gives_large_finite_g_loss(self):
        last = self.pair.discriminator.layers[-1]
        last.weight[:] = 0.0
        last.bias[:] = -50.0
        assert g_loss(self.pair, self.z) == pytest.approx(50.0)
        for _, _, grad, _, _ in self.pair.generator.parameters():
            assert np.all(np.isfinite(grad))

    def test_d_loss_gradients(self):
        d_loss(self.pair, self.real, self.z)
        layer = self.pair.discriminator.layers[0]
        indices = [(0, 0), (3, 1), (7, 0)]
        analytic = np.array([layer.grad_weight[idx] for idx in indices])

        def loss():
            return d_loss(self.pair, self.real, self.z, compute_gradients=False)

        np.testing.assert_allclose(analytic, perturbation_gradient(loss, layer.weight, indices),
                                   rtol=1e-4, atol=1e-8)

    def test_d_loss_leaves_generator(self):
        d_loss(self.pair, self.real, self.z)
        for _, _, grad, _, _ in self.pair.generator.parameters():
            assert np.all(grad == 0.0)

    def test_g_loss_gradients(self):
        g_loss(self.pair, self.z)
        layer = self.pair.generator.layers[0]
        indices = [(0, 0), (2, 1), (5, 1)]
        analytic = np.array([layer.grad_weight[idx] for idx in indices])

        def loss():
            return g_loss(self.pair, self.z, compute_gradients=False)

        np.testing.assert_allclose(analytic, perturbation_gradient(loss, layer.weight, indices),
                                   rtol=1e-4, atol=1e-8)

    def test_g_loss_leaves_discriminator(self):
        g_loss(self.pair, self.z)
        for _, _, grad, _, _ in self.pair.discriminator.parameters():
            assert np.all(grad == 0.0)

    def test_saturating_gradient_sign(self):
        x = self.rng.standard_normal((4, 2))
        plain = adversarial_output_gradient(self.pair, x)
        saturating = adversarial_output_gradient(self.pair, x, saturating=True)
        assert plain.loss > 0
        assert saturating.loss < 0
        # both push generated points towards higher D
        assert np.all(np.sum(plain.grad * saturating.grad, axis=1) >= 0)

    def test_non_finite_loss(self):
        self.pair.discriminator.layers[-1].bias[:] = np.inf
        with pytest.raises(NonFiniteError):
            d_loss(self.pair, self.real, self.z, compute_gradients=False)


class TestScoreRegularity:
    """Test cases for score_regularity."""

    def setup_method(self):
        self.rng = np.random.default_rng(8)
        self.sched = build_schedule(100)
        self.mix = GridMixture.grid()
        self.oracle = OracleNoisePredictor(self.mix, build_schedule(100))
        self.smart = SmartConfig(t_lo=4, t_hi=6)
        self.x = self.rng.uniform(-3, 3, size=(5, 2))

    def regularity(self, pred, x, smart, seed=1):
        return score_regularity(pred, self.sched, x, smart, np.random.default_rng(seed))

    def test_full_mode_gradient_matches_finite_differences(self):
        result = self.regularity(self.oracle, self.x, self.smart)
        indices = [(0, 0), (2, 1), (4, 0)]

        def loss():
            return self.regularity(self.oracle, self.x, self.smart).loss

        expected = perturbation_gradient(loss, self.x, indices)
        np.testing.assert_allclose([result.grad[idx] for idx in indices], expected, rtol=1e-4, atol=1e-7)

    def test_full_mode_with_trained_predictor(self):
        net = Mlp.build([2 + TIME_FEATURES, 16, 2], self.rng, name="dpm")
        pred = NoisePredictor(net, T=100)
        result = self.regularity(pred, self.x, self.smart)
        indices = [(1, 0), (3, 1)]

        def loss():
            return self.regularity(pred, self.x, self.smart).loss

        expected = perturbation_gradient(loss, self.x, indices)
        np.testing.assert_allclose([result.grad[idx] for idx in indices], expected, rtol=1e-4, atol=1e-8)

    def test_omit_mode_drops_jacobian(self):
        smart = SmartConfig(t_lo=4, t_hi=6, jacobian=JacobianMode.OMIT)
        result = self.regularity(self.oracle, self.x, smart)
        alpha = self.sched.alpha[result.t][:, None]
        sigma = self.sched.sigma[result.t][:, None]
        residual = self.oracle.predict(alpha * self.x + sigma * result.eps, result.t) - result.eps
        np.testing.assert_allclose(result.grad, alpha * 2 * residual / 5)

    def test_timesteps_within_interval(self):
        result = self.regularity(self.oracle, self.rng.standard_normal((200, 2)), self.smart)
        assert result.t.min() >= 4 and result.t.max() <= 6

    def test_refine_distance_identity(self):
        """||R(g) - g||^2 = (sigma/alpha)^2 times the denoising residual."""
        result = self.regularity(self.oracle, self.x, self.smart)
        ratio = self.sched.sigma[result.t] / self.sched.alpha[result.t]
        np.testing.assert_allclose(result.refine_sq, ratio ** 2 * result.per_sample)

    @pytest.mark.parametrize('t_lo,t_hi', [(0, 5), (5, 101)])
    def test_interval_outside_schedule(self, t_lo, t_hi):
        with pytest.raises(TimestepError):
            self.regularity(self.oracle, self.x, SmartConfig(t_lo=t_lo, t_hi=t_hi))

    def test_on_manifold_points_have_small_loss(self):
        on = self.regularity(self.oracle, self.mix.centers.copy(), self.smart)
        off = self.regularity(self.oracle, self.mix.centers + 0.5, self.smart)
        assert on.loss < off.loss

    def test_monte_carlo_estimates_agree(self):
        x = np.tile(self.x, (20000, 1))
        first = score_regularity(self.oracle, self.sched, x, self.smart, np.random.default_rng(11)).loss
        second = score_regularity(self.oracle, self.sched, x, self.smart, np.random.default_rng(12)).loss
        assert second == pytest.approx(first, rel=0.02)


class SpyPredictor:
    """Oracle wrapper that records the labels it is asked about."""

    conditional = True

    def __init__(self, oracle):
        self.oracle = oracle
        self.labels = []

    def predict(self, x_t, t, labels=None):
        self.labels.append(None if labels is None else np.array(labels))
        return self.oracle.predict(x_t, t, labels)

    def input_vjp(self, x_t, t, grad_out, labels=None):
        self.labels.append(None if labels is None else np.array(labels))
        return self.oracle.input_vjp(x_t, t, grad_out, labels)


class TestGeneratorStep:
    """Test cases for one generator update."""

    def setup_method(self):
        self.mix = GridMixture.grid()
        self.sched = build_schedule(100)
        self.oracle = OracleNoisePredictor(self.mix, self.sched)
        self.cfg = quick_config(gan__batch=16, smart__t_lo=4, smart__t_hi=6)

    def optimizers(self, pair):
        main = AdamOptimizer(pair.generator, lr=1e-3, beta1=0.5)
        side = AdamOptimizer(pair.generator, lr=1e-3, beta1=0.5, own_moments=True)
        return main, side

    def test_regularity_keeps_out_of_adversarial_moments(self):
        pair = small_pair(np.random.default_rng(4))
        vanilla = pair.copy()
        main, side = self.optimizers(pair)
        step = generator_step(pair, main, self.oracle, self.sched, self.cfg, 0, GanStreams.from_seed(2), side)
        assert step.regularity_applied
        generator_step(vanilla, self.optimizers(vanilla)[0], None, self.sched, self.cfg, 0,
                       GanStreams.from_seed(2))

        for (_, _, _, m, v), (_, _, _, m_ref, v_ref) in zip(pair.generator.parameters(),
                                                           vanilla.generator.parameters()):
            np.testing.assert_array_equal(m, m_ref)
            np.testing.assert_array_equal(v, v_ref)
        assert any(np.any(m != 0) for m, _ in side.moments)
        assert not np.array_equal(pair.generator.layers[-1].bias, vanilla.generator.layers[-1].bias)

    def test_shared_optimizer_sees_regularity(self):
        pair = small_pair(np.random.default_rng(4))
        vanilla = pair.copy()
        generator_step(pair, self.optimizers(pair)[0], self.oracle, self.sched, self.cfg, 0,
                       GanStreams.from_seed(2))
        generator_step(vanilla, self.optimizers(vanilla)[0], None, self.sched, self.cfg, 0,
                       GanStreams.from_seed(2))
        assert not np.array_equal(pair.generator.layers[-1].v_bias, vanilla.generator.layers[-1].v_bias)

    def test_skipped_iteration_leaves_side_optimizer(self):
        pair = small_pair(np.random.default_rng(4))
        main, side = self.optimizers(pair)
        step = generator_step(pair, main, self.oracle, self.sched, self.cfg, 3, GanStreams.from_seed(2), side)
        assert not step.regularity_applied
        assert side.step_index == 0
        assert main.step_index == 1

    @pytest.mark.parametrize('fresh', [True, False])
    def test_conditional_labels_match_predictor_condition(self, fresh):
        pair = small_pair(np.random.default_rng(5), num_classes=49)
        spy = SpyPredictor(self.oracle)
        cfg = quick_config(gan__batch=32, smart__t_lo=4, smart__t_hi=6, smart__fresh_latents=fresh,
                           cond__enabled=True)
        main, side = self.optimizers(pair)
        with patch.object(pair.generator, 'forward', wraps=pair.generator.forward) as forward:
            generator_step(pair, main, spy, self.sched, cfg, 0, GanStreams.from_seed(6), side)

        generator_labels = np.argmax(forward.call_args_list[-1][0][0][:, 2:], axis=1)
        assert len(spy.labels) >= 1
        for labels in spy.labels:
            np.testing.assert_array_equal(labels, generator_labels)


class TestStreams:
    """Test cases for GanStreams."""

    def test_streams_are_independent_and_seeded(self):
        a = GanStreams.from_seed(3)
        b = GanStreams.from_seed(3)
        assert a.adversarial.integers(0, 10 ** 9) == b.adversarial.integers(0, 10 ** 9)
        c = GanStreams.from_seed(3)
        assert c.adversarial.integers(0, 10 ** 9) != c.regularity.integers(0, 10 ** 9)


class TestTrainGan:
    """Test cases for the training loop."""

    def setup_method(self):
        self.mix = GridMixture.grid()
        self.sched = build_schedule(1000)
        self.oracle = OracleNoisePredictor(self.mix, self.sched)

    def test_history_and_checkpoint(self, tmp_path):
        cfg = quick_config()
        rows = []
        path = tmp_path / 'gan.ckpt'
        result = train_gan(self.mix, self.oracle, cfg, self.sched, on_row=rows.append, checkpoint_path=path)
        assert [row.iter for row in result.history] == [10, 20]
        assert rows == result.history
        assert result.regularity_calls == 3
        assert len(result.refine_sq) == 3
        assert all(np.isfinite(row.score_loss) for row in result.history)
        restored = GanPair.from_tensors(load_checkpoint(path))
        assert restored.iterations == 20
        z = np.random.default_rng(0).standard_normal((3, 2))
        np.testing.assert_array_equal(restored.generate(z, cache=False), result.pair.generate(z, cache=False))

    def test_final_row_off_interval(self):
        cfg = quick_config(gan__iters=15)
        result = train_gan(self.mix, None, cfg, self.sched)
        assert [row.iter for row in result.history] == [10, 15]

    def test_vanilla_rows_have_nan_score_loss(self):
        result = train_gan(self.mix, None, quick_config(), self.sched)
        assert result.regularity_calls == 0
        assert all(math.isnan(row.score_loss) for row in result.history)

    def test_zero_iterations(self):
        result = train_gan(self.mix, self.oracle, quick_config(gan__iters=0), self.sched)
        assert result.history == []

    @pytest.mark.parametrize('fresh', [True, False])
    def test_zero_weight_matches_vanilla(self, fresh):
        """A zero regularity weight leaves the adversarial trajectory unchanged."""
        vanilla = train_gan(self.mix, None, quick_config(smart__enabled=False), self.sched)
        weighted = train_gan(self.mix, self.oracle,
                             quick_config(smart__lambda_score=0.0, smart__fresh_latents=fresh), self.sched)
        assert weighted.regularity_calls == 3
        for (_, a, _, _, _), (_, b, _, _, _) in zip(vanilla.pair.generator.parameters(),
                                                    weighted.pair.generator.parameters()):
            np.testing.assert_array_equal(a, b)

    def test_reproducible(self):
        a = train_gan(self.mix, self.oracle, quick_config(), self.sched)
        b = train_gan(self.mix, self.oracle, quick_config(), self.sched)
        assert [row.g_loss for row in a.history] == [row.g_loss for row in b.history]

    def test_conditional_needs_conditional_predictor(self):
        pred = NoisePredictor.build(1000, np.random.default_rng(0))
        with pytest.raises(LabError, match="conditional"):
            train_gan(self.mix, pred, quick_config(cond__enabled=True), self.sched)

    def test_conditional_with_oracle(self):
        result = train_gan(self.mix, self.oracle, quick_config(cond__enabled=True, gan__iters=10), self.sched)
        assert result.pair.num_classes == 49
        assert len(result.history) == 1

    def test_divergence_saves_last_good(self, tmp_path):
        path = tmp_path / 'gan.ckpt'
        cfg = quick_config(gan__iters=30)
        real_step = gan_module.generator_step
        calls = {'n': 0}

        def flaky_step(*args, **kwargs):
            calls['n'] += 1
            if calls['n'] == 15:
                raise NonFiniteError("generator gradient is NaN")
            return real_step(*args, **kwargs)

        with patch('src.gan.generator_step', side_effect=flaky_step):
            with pytest.raises(DivergenceError) as exc_info:
                train_gan(self.mix, None, cfg, self.sched, checkpoint_path=path)

        assert exc_info.value.context['iteration'] == 14
        assert exc_info.value.context['checkpoint'] == str(path)
        assert path.exists()
        assert GanPair.from_tensors(load_checkpoint(path)).iterations == 10
