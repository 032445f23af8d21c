"""
GAN trainer with the score-matching regularity.

The adversarial part uses the non-saturating generator loss and the usual
binary cross-entropy discriminator loss, both through stable log-sigmoids.
Every ``freq`` generator iterations the regularity adds
lambda * mean ||eps_theta(alpha_t g + sigma_t eps, t) - eps||^2 on generator
outputs g, with the noise predictor frozen.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Union

import numpy as np

from src.checkpoint import mlp_from_tensors, mlp_tensors, save_checkpoint
from src.config import JacobianMode, SmartConfig, TrainConfig
from src.data_models import LabeledBatch, MetricsRow
from src.diffusion import NoiseModel, build_schedule_from, sample_sharded
from src.exceptions import (
    DivergenceError,
    LabError,
    NonFiniteError,
    TimestepError,
    create_non_finite_error,
)
from src.logging_config import get_logger, log_operation, log_progress
from src.metrics import compute_metrics
from src.nn import AdamOptimizer, Mlp, log_sigmoid, one_hot, sigmoid
from src.schedule import NoiseSchedule
from src.toy_data import GridMixture, sample

HIDDEN_UNITS = (128, 128)

logger = get_logger(__name__)


@dataclass(eq=False)
class GanPair:
    """
    Generator and discriminator.

    Attributes:
        generator: latent_dim [+ one-hot] -> 2
        discriminator: 2 [+ one-hot] -> 1 logit
        latent_dim: Latent dimension
        num_classes: One-hot width for conditional pairs, 0 otherwise
        iterations: Completed training iterations
    """
    generator: Mlp
    discriminator: Mlp
    latent_dim: int
    num_classes: int = 0
    iterations: int = 0

    def __post_init__(self):
        if self.generator.in_dim != self.latent_dim + self.num_classes or self.generator.out_dim != 2:
            raise LabError(f"generator must map {self.latent_dim + self.num_classes} -> 2, "
                           f"got {self.generator.in_dim} -> {self.generator.out_dim}")
        if self.discriminator.in_dim != 2 + self.num_classes or self.discriminator.out_dim != 1:
            raise LabError(f"discriminator must map {2 + self.num_classes} -> 1, "
                           f"got {self.discriminator.in_dim} -> {self.discriminator.out_dim}")

    @property
    def conditional(self) -> bool:
        return self.num_classes > 0

    def _with_labels(self, x: np.ndarray, labels: Optional[np.ndarray]) -> np.ndarray:
        if not self.conditional:
            return x
        if labels is None:
            raise LabError("conditional GAN needs labels")
        return np.concatenate([x, one_hot(labels, self.num_classes)], axis=1)

    def generator_input(self, z: np.ndarray, labels: Optional[np.ndarray] = None) -> np.ndarray:
        return self._with_labels(np.atleast_2d(np.asarray(z, dtype=np.float64)), labels)

    def discriminator_input(self, x: np.ndarray, labels: Optional[np.ndarray] = None) -> np.ndarray:
        return self._with_labels(np.atleast_2d(np.asarray(x, dtype=np.float64)), labels)

    def generate(self, z: np.ndarray, labels: Optional[np.ndarray] = None, cache: bool = True) -> np.ndarray:
        return self.generator.forward(self.generator_input(z, labels), cache=cache)

    def copy(self) -> 'GanPair':
        return GanPair(self.generator.copy(), self.discriminator.copy(), self.latent_dim, self.num_classes,
                       self.iterations)

    def to_tensors(self) -> Dict[str, np.ndarray]:
        tensors = mlp_tensors(self.generator, "gen.")
        tensors.update(mlp_tensors(self.discriminator, "disc."))
        tensors["gen.latent_dim"] = np.array(float(self.latent_dim))
        tensors["gen.num_classes"] = np.array(float(self.num_classes))
        tensors["gen.iters"] = np.array(float(self.iterations))
        return tensors

    @classmethod
    def from_tensors(cls, tensors: Dict[str, np.ndarray]) -> 'GanPair':
        return cls(generator=mlp_from_tensors(tensors, "gen.", name="gen"),
                   discriminator=mlp_from_tensors(tensors, "disc.", name="disc"),
                   latent_dim=int(tensors["gen.latent_dim"]),
                   num_classes=int(tensors["gen.num_classes"]),
                   iterations=int(tensors["gen.iters"]) if "gen.iters" in tensors else 0)


def build_gan_pair(latent_dim: int, rng: np.random.Generator, num_classes: int = 0) -> GanPair:
    """Two 128-unit hidden layers for each network."""
    generator = Mlp.build([latent_dim + num_classes, *HIDDEN_UNITS, 2], rng, name="gen")
    discriminator = Mlp.build([2 + num_classes, *HIDDEN_UNITS, 1], rng, name="disc")
    return GanPair(generator, discriminator, latent_dim, num_classes)


def _checked(loss: float, name: str) -> float:
    if not np.isfinite(loss):
        raise create_non_finite_error(name, "loss")
    return loss


def d_loss(pair: GanPair, real: LabeledBatch, z: np.ndarray, labels: Optional[np.ndarray] = None,
           compute_gradients: bool = True) -> float:
    """-E[log D(x)] - E[log(1 - D(G(z)))]; accumulates discriminator gradients only.

    ``labels`` condition the fake half; the real half uses ``real.labels``.
    """
    fake = pair.generate(z, labels, cache=False)
    disc = pair.discriminator

    real_logits = disc.forward(pair.discriminator_input(real.points, real.labels))
    loss_real = -float(np.mean(log_sigmoid(real_logits)))
    if compute_gradients:
        disc.backward((sigmoid(real_logits) - 1.0) / real_logits.shape[0])

    fake_logits = disc.forward(pair.discriminator_input(fake, labels))
    loss_fake = -float(np.mean(log_sigmoid(-fake_logits)))
    if compute_gradients:
        disc.backward(sigmoid(fake_logits) / fake_logits.shape[0])

    return _checked(loss_real + loss_fake, "d_loss")


@dataclass
class AdversarialGradient:
    """Generator-side adversarial loss and its gradient w.r.t. the generated points."""
    loss: float
    grad: np.ndarray


def adversarial_output_gradient(pair: GanPair, x: np.ndarray, labels: Optional[np.ndarray] = None,
                                saturating: bool = False) -> AdversarialGradient:
    """
    Generator loss on points ``x`` with the discriminator frozen.

    Args:
        pair: GAN whose discriminator scores ``x``
        x: (n, 2) generated points
        labels: Condition for conditional pairs
        saturating: Use E[log(1 - D(x))] instead of -E[log D(x)]

    Returns:
        Loss value and d loss / d x, shape (n, 2)
    """
    logits = pair.discriminator.forward(pair.discriminator_input(x, labels))
    n = logits.shape[0]
    if saturating:
        loss = float(np.mean(log_sigmoid(-logits)))
        grad_logits = -sigmoid(logits) / n
    else:
        loss = -float(np.mean(log_sigmoid(logits)))
        grad_logits = (sigmoid(logits) - 1.0) / n
    grad = pair.discriminator.backward(grad_logits, accumulate_params=False)[:, :2]
    return AdversarialGradient(loss=loss, grad=grad)


def g_loss(pair: GanPair, z: np.ndarray, labels: Optional[np.ndarray] = None,
           compute_gradients: bool = True) -> float:
    """-E[log D(G(z))]; gradients flow through the frozen discriminator into G."""
    fake = pair.generate(z, labels)
    adversarial = adversarial_output_gradient(pair, fake, labels)
    _checked(adversarial.loss, "g_loss")
    if compute_gradients:
        pair.generator.backward(adversarial.grad)
    return adversarial.loss


@dataclass
class RegularityResult:
    """
    Score-matching regularity on one batch of generator outputs.

    Attributes:
        loss: Batch mean of ||eps_theta - eps||^2
        grad: d loss / d gen_out, shape (n, 2)
        per_sample: Per-sample squared residuals
        t: Per-sample timesteps
        eps: Injected noise
        refine_sq: Per-sample ||R(g, eps, t) - g||^2
    """
    loss: float
    grad: np.ndarray
    per_sample: np.ndarray
    t: np.ndarray
    eps: np.ndarray
    refine_sq: np.ndarray


def score_regularity(pred: NoiseModel, sched: NoiseSchedule, gen_out: np.ndarray, smart: SmartConfig,
                     rng: np.random.Generator, labels: Optional[np.ndarray] = None) -> RegularityResult:
    """
    Denoising residual of the frozen predictor on generator outputs.

    One timestep is drawn per sample from [t_lo, t_hi]. The full mode
    backpropagates through the predictor's input Jacobian; the omit mode
    passes the residual straight to the generator output.

    Raises:
        TimestepError: If [t_lo, t_hi] is not inside [1, T]
    """
    if not 1 <= smart.t_lo <= smart.t_hi <= sched.T:
        raise TimestepError(f"regularity interval [{smart.t_lo}, {smart.t_hi}] is outside [1, {sched.T}]",
                            timestep=(smart.t_lo, smart.t_hi))
    gen_out = np.atleast_2d(np.asarray(gen_out, dtype=np.float64))
    n = gen_out.shape[0]
    t = rng.integers(smart.t_lo, smart.t_hi + 1, size=n)
    eps = rng.standard_normal((n, 2))
    alpha, sigma, steps = sched.batch_coefficients(t, n, lowest=1)
    x_t = alpha * gen_out + sigma * eps

    residual = pred.predict(x_t, steps, labels) - eps
    per_sample = np.sum(residual ** 2, axis=1)
    upstream = 2.0 * residual / n
    if smart.jacobian is JacobianMode.FULL:
        grad = alpha * pred.input_vjp(x_t, steps, upstream, labels)
    else:
        grad = alpha * upstream

    return RegularityResult(loss=float(per_sample.mean()), grad=grad, per_sample=per_sample,
                            t=steps, eps=eps, refine_sq=(sigma[:, 0] / alpha[:, 0]) ** 2 * per_sample)


@dataclass
class GanStreams:
    """Independent random streams, one per concern."""
    init: np.random.Generator
    adversarial: np.random.Generator
    regularity: np.random.Generator
    evaluation: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> 'GanStreams':
        init, adversarial, regularity, evaluation = np.random.SeedSequence([seed, 2]).spawn(4)
        return cls(init=np.random.default_rng(init), adversarial=np.random.default_rng(adversarial),
                   regularity=np.random.default_rng(regularity), evaluation=np.random.default_rng(evaluation))


def _draw_conditioning(pair: GanPair, n: int, rng: np.random.Generator):
    z = rng.standard_normal((n, pair.latent_dim))
    labels = rng.integers(0, pair.num_classes, size=n) if pair.conditional else None
    return z, labels


def discriminator_step(pair: GanPair, optimizer: AdamOptimizer, real: LabeledBatch, z: np.ndarray,
                       labels: Optional[np.ndarray] = None) -> float:
    """One Adam step on the discriminator; returns d_loss."""
    loss = d_loss(pair, real, z, labels)
    optimizer.step()
    return loss


@dataclass
class GeneratorStepResult:
    g_loss: float
    score_loss: float = float('nan')
    refine_sq: float = float('nan')
    regularity_applied: bool = False


def generator_step(pair: GanPair, optimizer: AdamOptimizer, pred: Optional[NoiseModel],
                   sched: Optional[NoiseSchedule], cfg: TrainConfig, iteration: int,
                   streams: GanStreams, reg_optimizer: Optional[AdamOptimizer] = None) -> GeneratorStepResult:
    """
    g_loss, plus lambda * score_regularity when iteration % freq == 0, then the Adam update.

    The adversarial batch comes from ``streams.adversarial`` and the
    regularity draws from ``streams.regularity`` so a zero weight leaves the
    adversarial trajectory untouched. With ``reg_optimizer`` the regularity
    gradient is applied through that optimizer's own moment estimates after
    the adversarial step; without it both gradients share ``optimizer``.
    """
    smart = cfg.smart
    z, labels = _draw_conditioning(pair, cfg.gan.batch, streams.adversarial)
    apply = smart.enabled and pred is not None and iteration % smart.freq == 0
    result = GeneratorStepResult(g_loss=float('nan'), regularity_applied=apply)

    result.g_loss = g_loss(pair, z, labels)
    if not apply:
        optimizer.step()
        return result

    if smart.fresh_latents:
        z, labels = _draw_conditioning(pair, cfg.gan.batch, streams.regularity)
    if reg_optimizer is not None:
        optimizer.step()
    outputs = pair.generate(z, labels)
    regularity = score_regularity(pred, sched, outputs, smart, streams.regularity, labels)
    pair.generator.backward(smart.lambda_score * regularity.grad)
    result.score_loss = _checked(regularity.loss, "score_loss")
    result.refine_sq = float(regularity.refine_sq.mean())
    (reg_optimizer or optimizer).step()
    return result


def sample_generator(pair: GanPair, n: int, rng: np.random.Generator,
                     labels: Optional[np.ndarray] = None) -> LabeledBatch:
    """G(z) for standard normal z; conditional pairs draw uniform labels when none are given."""
    z = rng.standard_normal((n, pair.latent_dim))
    if pair.conditional and labels is None:
        labels = rng.integers(0, pair.num_classes, size=n)
    elif labels is not None:
        labels = np.broadcast_to(np.asarray(labels, dtype=np.int64), (n,))
    points = pair.generator.infer(pair.generator_input(z, labels))
    return LabeledBatch(points=points, labels=labels if pair.conditional else None)


def sample_generator_sharded(pair: GanPair, n: int, seed: Union[int, np.random.SeedSequence],
                             shards: int = 4) -> LabeledBatch:
    """sample_generator over thread shards with frozen parameters."""
    return sample_sharded(lambda size, rng: sample_generator(pair, size, rng), n, seed, shards)


@dataclass
class GanTrainingResult:
    """Trained pair, evaluation history and the number of regularity applications."""
    pair: GanPair
    history: List[MetricsRow] = field(default_factory=list)
    regularity_calls: int = 0
    refine_sq: List[float] = field(default_factory=list)


RowSink = Callable[[MetricsRow], None]


def train_gan(mix: GridMixture, pred: Optional[NoiseModel], cfg: TrainConfig,
              sched: Optional[NoiseSchedule] = None, on_row: Optional[RowSink] = None,
              checkpoint_path: Optional[Union[str, Path]] = None) -> GanTrainingResult:
    """
    Alternate one discriminator and one generator step per iteration.

    Args:
        mix: Real data distribution
        pred: Frozen noise predictor or oracle; None trains the vanilla GAN
        cfg: Run configuration
        sched: Noise schedule of ``pred``; built from cfg when omitted
        on_row: Called with every evaluation row
        checkpoint_path: Where the final pair (or the last good one on
            divergence) is written

    Raises:
        DivergenceError: On a non-finite loss or gradient
    """
    sched = sched or build_schedule_from(cfg)
    streams = GanStreams.from_seed(cfg.seed)
    num_classes = mix.num_components if cfg.cond.enabled else 0
    if num_classes and pred is not None and not getattr(pred, 'conditional', False):
        raise LabError("conditional GAN training needs a conditional noise predictor")
    pair = build_gan_pair(cfg.gan.latent_dim, streams.init, num_classes=num_classes)
    opt_d = AdamOptimizer(pair.discriminator, lr=cfg.gan.lr_d, beta1=cfg.gan.adam_beta1,
                          beta2=cfg.gan.adam_beta2, eps=cfg.adam_eps)
    opt_g = AdamOptimizer(pair.generator, lr=cfg.gan.lr_g, beta1=cfg.gan.adam_beta1,
                          beta2=cfg.gan.adam_beta2, eps=cfg.adam_eps)
    opt_reg = None
    if cfg.smart.separate_moments:
        opt_reg = AdamOptimizer(pair.generator, lr=cfg.smart.lr, beta1=cfg.gan.adam_beta1,
                                beta2=cfg.gan.adam_beta2, eps=cfg.adam_eps, own_moments=True)

    result = GanTrainingResult(pair=pair)
    last_good = pair.copy()
    score_loss = float('nan')
    mode = 'vanilla' if pred is None or not cfg.smart.enabled else f'smart/{cfg.smart.jacobian.value}'

    with log_operation(logger, f"GAN training ({cfg.gan.iters} iterations)", phase='train-gan', mode=mode):
        for iteration in range(cfg.gan.iters):
            try:
                real = sample(mix, cfg.gan.batch, streams.adversarial, with_labels=pair.conditional)
                z, labels = _draw_conditioning(pair, cfg.gan.batch, streams.adversarial)
                d_value = discriminator_step(pair, opt_d, real, z, labels)
                step = generator_step(pair, opt_g, pred, sched, cfg, iteration, streams, opt_reg)
            except NonFiniteError as e:
                if checkpoint_path is not None:
                    save_checkpoint(checkpoint_path, last_good.to_tensors())
                raise DivergenceError(f"GAN training diverged at iteration {iteration}: {e}",
                                      iteration=iteration,
                                      checkpoint_path=str(checkpoint_path) if checkpoint_path else None,
                                      original_error=e) from e

            if step.regularity_applied:
                result.regularity_calls += 1
                score_loss = step.score_loss
                result.refine_sq.append(step.refine_sq)

            done = iteration + 1
            pair.iterations = done
            if done % cfg.eval.interval == 0 or done == cfg.gan.iters:
                quality = evaluate_generator(pair, mix, cfg, streams)
                row = MetricsRow.from_quality(done, d_value, step.g_loss, score_loss, quality)
                result.history.append(row)
                last_good = pair.copy()
                if on_row is not None:
                    on_row(row)
                log_progress(logger, done, cfg.gan.iters, d_loss=float(d_value), g_loss=float(step.g_loss),
                             coverage=f"{quality.mode_coverage}/{mix.num_components}",
                             hq=float(quality.hq_fraction), mean_dist=float(quality.mean_dist))

    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, pair.to_tensors())
    return result


def evaluate_generator(pair: GanPair, mix: GridMixture, cfg: TrainConfig, streams: GanStreams):
    """Sharded evaluation sample scored with compute_metrics."""
    seed = int(streams.evaluation.integers(0, 2 ** 63 - 1))
    batch = sample_generator_sharded(pair, cfg.eval.samples, seed, cfg.eval.shards)
    return compute_metrics(batch, mix, cfg.eval.tau)
