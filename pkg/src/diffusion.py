"""
Discrete-time diffusion on the toy plane.

Forward corruption, denoising score matching, deterministic DDIM sampling
and the one-step refinement operator R(x, eps, t) with its iteration.
Every sampler accepts either a trained NoisePredictor or the closed-form
OracleNoisePredictor; both expose ``predict(x_t, t, labels)``.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Protocol, Union

import numpy as np

from src.config import TrainConfig
from src.data_models import LabeledBatch
from src.exceptions import DivergenceError, LabError, TimestepError
from src.logging_config import get_logger, log_operation, log_progress
from src.checkpoint import mlp_from_tensors, mlp_tensors
from src.nn import AdamOptimizer, Mlp, cosine_decay, one_hot
from src.schedule import NoiseSchedule, Timesteps, build_schedule
from src.toy_data import NUM_MODES, GridMixture, OracleNoisePredictor, manifold_distance, sample

TIME_FEATURES = 16
HIDDEN_UNITS = (128, 128)

logger = get_logger(__name__)


class NoiseModel(Protocol):
    """Anything that predicts the injected noise from (x_t, t)."""

    def predict(self, x_t: np.ndarray, t: Timesteps, labels: Optional[np.ndarray] = None) -> np.ndarray:
        ...

    def input_vjp(self, x_t: np.ndarray, t: Timesteps, grad_out: np.ndarray,
                  labels: Optional[np.ndarray] = None) -> np.ndarray:
        ...


def sinusoidal_time_features(t: Timesteps, T: int, n: Optional[int] = None) -> np.ndarray:
    """sin/cos of pi * 2^k * t / T for k = 0..7, one row per sample."""
    steps = np.asarray(t, dtype=np.float64)
    if n is not None:
        steps = np.broadcast_to(steps, (n,))
    tau = np.atleast_1d(steps)[:, None] / T
    frequencies = np.pi * 2.0 ** np.arange(TIME_FEATURES // 2)
    angles = tau * frequencies[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


class NoisePredictor:
    """
    MLP noise predictor eps_theta(x_t, t[, c]).

    Input is the 2-D point, 16 time features and, for conditional models, a
    one-hot label; output is the 2-D noise estimate.
    """

    def __init__(self, net: Mlp, T: int, num_classes: int = 0):
        expected_in = 2 + TIME_FEATURES + num_classes
        if net.in_dim != expected_in or net.out_dim != 2:
            raise LabError(f"noise predictor net must map {expected_in} -> 2, got "
                           f"{net.in_dim} -> {net.out_dim}")
        self.net = net
        self.T = T
        self.num_classes = num_classes

    @classmethod
    def build(cls, T: int, rng: np.random.Generator, conditional: bool = False,
              num_classes: int = NUM_MODES) -> 'NoisePredictor':
        classes = num_classes if conditional else 0
        dims = [2 + TIME_FEATURES + classes, *HIDDEN_UNITS, 2]
        return cls(Mlp.build(dims, rng, name="dpm"), T=T, num_classes=classes)

    @property
    def conditional(self) -> bool:
        return self.num_classes > 0

    def _inputs(self, x_t: np.ndarray, t: Timesteps, labels: Optional[np.ndarray]) -> np.ndarray:
        x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
        steps = np.asarray(t)
        if steps.size and (steps.min() < 1 or steps.max() > self.T):
            raise TimestepError(f"noise predictor accepts t in [1, {self.T}]", timestep=t)
        parts = [x_t, sinusoidal_time_features(steps, self.T, n=x_t.shape[0])]
        if self.conditional:
            if labels is None:
                raise LabError("conditional noise predictor needs labels")
            parts.append(one_hot(np.broadcast_to(labels, (x_t.shape[0],)), self.num_classes))
        return np.concatenate(parts, axis=1)

    def predict(self, x_t: np.ndarray, t: Timesteps, labels: Optional[np.ndarray] = None) -> np.ndarray:
        """Cache-free evaluation; safe for concurrent readers of frozen parameters."""
        return self.net.infer(self._inputs(x_t, t, labels))

    def forward(self, x_t: np.ndarray, t: Timesteps, labels: Optional[np.ndarray] = None) -> np.ndarray:
        return self.net.forward(self._inputs(x_t, t, labels))

    def backward(self, grad_out: np.ndarray, accumulate_params: bool = True) -> np.ndarray:
        """Backpropagate through the last ``forward``; returns d/dx_t."""
        return self.net.backward(grad_out, accumulate_params=accumulate_params)[:, :2]

    def input_vjp(self, x_t: np.ndarray, t: Timesteps, grad_out: np.ndarray,
                  labels: Optional[np.ndarray] = None) -> np.ndarray:
        """grad_out @ d eps_theta / d x_t with the parameters frozen."""
        self.forward(x_t, t, labels)
        return self.backward(grad_out, accumulate_params=False)

    def to_tensors(self) -> Dict[str, np.ndarray]:
        tensors = mlp_tensors(self.net, "dpm.")
        tensors["dpm.T"] = np.array(float(self.T))
        tensors["dpm.num_classes"] = np.array(float(self.num_classes))
        return tensors

    @classmethod
    def from_tensors(cls, tensors: Dict[str, np.ndarray]) -> 'NoisePredictor':
        net = mlp_from_tensors(tensors, "dpm.", name="dpm")
        return cls(net, T=int(tensors["dpm.T"]), num_classes=int(tensors["dpm.num_classes"]))


def q_sample(sched: NoiseSchedule, x0: np.ndarray, t: Timesteps, eps: np.ndarray) -> np.ndarray:
    """alpha_t x0 + sigma_t eps."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    eps = np.atleast_2d(np.asarray(eps, dtype=np.float64))
    if eps.shape != x0.shape:
        raise LabError(f"noise shape {eps.shape} does not match data shape {x0.shape}")
    alpha, sigma, _ = sched.batch_coefficients(t, x0.shape[0])
    return alpha * x0 + sigma * eps


@dataclass
class DsmResult:
    """Batch-mean denoising loss and its per-sample terms."""
    loss: float
    per_sample: np.ndarray


def dsm_loss(pred, sched: NoiseSchedule, x0: np.ndarray, t: Timesteps, eps: np.ndarray,
             labels: Optional[np.ndarray] = None, compute_gradients: bool = True) -> DsmResult:
    """mean ||eps_theta(alpha_t x0 + sigma_t eps, t) - eps||^2.

    With ``compute_gradients`` the predictor's parameter gradients are
    accumulated (the predictor must offer ``forward`` / ``backward``).
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    n = x0.shape[0]
    alpha, sigma, steps = sched.batch_coefficients(t, n, lowest=1)
    x_t = alpha * x0 + sigma * eps
    if compute_gradients:
        prediction = pred.forward(x_t, steps, labels)
    else:
        prediction = pred.predict(x_t, steps, labels)
    residual = prediction - eps
    per_sample = np.sum(residual ** 2, axis=1)
    if compute_gradients:
        pred.backward(2.0 * residual / n)
    return DsmResult(loss=float(per_sample.mean()), per_sample=per_sample)


@dataclass
class DpmTrainingResult:
    """
    Trained predictor with its loss curve.

    ``baseline_loss``, ``final_loss`` and ``oracle_loss`` are DSM losses of
    the untrained net, the trained net and the closed-form predictor on one
    held-out batch. The oracle loss is the irreducible floor for that batch.
    """
    predictor: NoisePredictor
    losses: List[float] = field(default_factory=list)
    smoothed: List[float] = field(default_factory=list)
    baseline_loss: float = float('nan')
    final_loss: float = float('nan')
    oracle_loss: float = float('nan')

    @property
    def reduction(self) -> float:
        """(baseline - floor) / (final - floor); inf when training reaches the floor."""
        excess = self.final_loss - self.oracle_loss
        if excess <= 0:
            return float('inf')
        return (self.baseline_loss - self.oracle_loss) / excess

    @property
    def target_met(self) -> bool:
        return self.reduction >= DSM_REDUCTION_TARGET


DSM_REDUCTION_TARGET = 10.0

LossSink = Callable[[int, float, float], None]


def train_dpm(mix: GridMixture, cfg: TrainConfig, sched: Optional[NoiseSchedule] = None,
              on_loss: Optional[LossSink] = None) -> DpmTrainingResult:
    """Fit a noise predictor to the mixture with Adam on the DSM objective.

    Args:
        mix: Training distribution
        cfg: Run configuration (dpm.*, cond.enabled, seed)
        sched: Noise schedule; built from cfg when omitted
        on_loss: Called with (iteration, loss, smoothed loss) per step

    Raises:
        DivergenceError: On a non-finite loss
    """
    sched = sched or build_schedule_from(cfg)
    init_seq, data_seq, held_out_seq = np.random.SeedSequence([cfg.seed, 1]).spawn(3)
    rng = np.random.default_rng(data_seq)
    predictor = NoisePredictor.build(sched.T, np.random.default_rng(init_seq),
                                     conditional=cfg.cond.enabled, num_classes=mix.num_components)
    optimizer = AdamOptimizer(predictor.net, lr=cfg.dpm.lr, beta1=cfg.dpm.adam_beta1,
                              beta2=cfg.dpm.adam_beta2, eps=cfg.adam_eps)

    held_out_rng = np.random.default_rng(held_out_seq)
    held_out = sample(mix, 4096, held_out_rng, with_labels=True)
    held_out_t = held_out_rng.integers(1, sched.T + 1, size=4096)
    held_out_eps = held_out_rng.standard_normal((4096, 2))
    held_out_labels = held_out.labels if predictor.conditional else None

    def held_out_loss(model) -> float:
        return dsm_loss(model, sched, held_out.points, held_out_t, held_out_eps, held_out_labels,
                        compute_gradients=False).loss

    result = DpmTrainingResult(predictor=predictor, baseline_loss=held_out_loss(predictor),
                               oracle_loss=held_out_loss(OracleNoisePredictor(mix, sched)))
    log_every = max(1, cfg.dpm.iters // 20)
    smoothed = float('nan')

    with log_operation(logger, f"diffusion training ({cfg.dpm.iters} iterations)", phase='train-dpm'):
        for iteration in range(cfg.dpm.iters):
            batch = sample(mix, cfg.dpm.batch, rng, with_labels=predictor.conditional)
            t = rng.integers(1, sched.T + 1, size=cfg.dpm.batch)
            eps = rng.standard_normal((cfg.dpm.batch, 2))
            optimizer.lr = cosine_decay(cfg.dpm.lr, cfg.dpm.lr_final, iteration, cfg.dpm.iters)
            loss = dsm_loss(predictor, sched, batch.points, t, eps, batch.labels).loss
            if not np.isfinite(loss):
                raise DivergenceError(f"diffusion loss became {loss} at iteration {iteration}",
                                      iteration=iteration)
            optimizer.step()

            smoothed = loss if iteration == 0 else 0.99 * smoothed + 0.01 * loss
            result.losses.append(loss)
            result.smoothed.append(smoothed)
            if on_loss is not None:
                on_loss(iteration, loss, smoothed)
            if iteration % log_every == 0:
                log_progress(logger, iteration, cfg.dpm.iters, dsm_loss=loss, smoothed=smoothed,
                             lr=float(optimizer.lr))

    result.final_loss = held_out_loss(predictor)
    logger.info(f"held-out DSM loss: {result.baseline_loss:.5f} untrained, {result.final_loss:.5f} trained, "
                f"{result.oracle_loss:.5f} closed-form floor (excess reduced {result.reduction:.1f}x)")
    if cfg.dpm.iters and not result.target_met:
        logger.error(f"excess DSM loss over the floor fell only {result.reduction:.1f}x, "
                     f"short of {DSM_REDUCTION_TARGET:g}x; raise dpm.iters or dpm.batch")
    return result


def build_schedule_from(cfg: TrainConfig) -> NoiseSchedule:
    return build_schedule(cfg.dpm.T, cfg.dpm.beta_start, cfg.dpm.beta_end)


def refine_step(pred: NoiseModel, sched: NoiseSchedule, x: np.ndarray, t: Timesteps, eps: np.ndarray,
                labels: Optional[np.ndarray] = None) -> np.ndarray:
    """R(x, eps, t) = x + (sigma_t / alpha_t) (eps - eps_theta(alpha_t x + sigma_t eps, t)).

    Raises:
        TimestepError: For t = 0
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    alpha, sigma, steps = sched.batch_coefficients(t, x.shape[0], lowest=1)
    prediction = pred.predict(alpha * x + sigma * eps, steps, labels)
    return x + (sigma / alpha) * (eps - prediction)


WINDOW_Z = 3.0


@dataclass
class RefinementTrace:
    """Mean manifold distance after each refinement (entry 0 is the start)."""
    t: int
    mean_distance: np.ndarray
    batches: List[np.ndarray] = field(default_factory=list)
    distance_std: np.ndarray = field(default_factory=lambda: np.empty(0))
    num_points: int = 0

    @property
    def final(self) -> np.ndarray:
        return self.batches[-1]

    def window_means(self, window: int = 10) -> np.ndarray:
        """Means of consecutive full windows over steps 1..k."""
        return _window_average(self.mean_distance, window)

    def window_standard_errors(self, window: int = 10) -> np.ndarray:
        """
        Standard error of each window mean, aligned with ``window_means``.

        Steps inside a window share their points, so the per-step spreads
        are averaged rather than pooled over window * n samples. Traces
        built without spreads give zeros.
        """
        if self.distance_std.size != self.mean_distance.size or self.num_points < 1:
            return np.zeros_like(self.window_means(window))
        return _window_average(self.distance_std, window) / math.sqrt(self.num_points)


def _window_average(per_step: np.ndarray, window: int) -> np.ndarray:
    steps = per_step[1:]
    full = (steps.shape[0] // window) * window
    if full == 0:
        return np.empty(0)
    return steps[:full].reshape(-1, window).mean(axis=1)


def is_non_increasing(values: np.ndarray, standard_errors: Optional[np.ndarray] = None,
                      z: float = WINDOW_Z) -> bool:
    """values[j + 1] <= values[j] + z * sqrt(se[j]^2 + se[j + 1]^2) for every j.

    Without standard errors the comparison is exact.
    """
    values = np.asarray(values, dtype=np.float64)
    if standard_errors is None:
        slack = 0.0
    else:
        se = np.asarray(standard_errors, dtype=np.float64)
        if se.shape != values.shape:
            raise LabError(f"standard errors shape {se.shape} does not match values {values.shape}")
        slack = z * np.sqrt(se[:-1] ** 2 + se[1:] ** 2)
    return bool(np.all(values[1:] <= values[:-1] + slack))


def refinement_sequence(pred: NoiseModel, sched: NoiseSchedule, y0: np.ndarray, t: int, k: int,
                        rng: np.random.Generator, mix: GridMixture,
                        labels: Optional[np.ndarray] = None,
                        keep_batches: bool = True) -> RefinementTrace:
    """Iterate y_{j+1} = R(y_j, eps_j, t) with fresh noise, recording mean distances and their spread."""
    if k < 0:
        raise LabError(f"refinement count must be >= 0, got {k}")
    y = np.atleast_2d(np.asarray(y0, dtype=np.float64))
    distance = manifold_distance(mix, y)
    means, spreads = [float(np.mean(distance))], [float(np.std(distance))]
    batches = [y]
    for _ in range(k):
        eps = rng.standard_normal(y.shape)
        y = refine_step(pred, sched, y, t, eps, labels)
        distance = manifold_distance(mix, y)
        means.append(float(np.mean(distance)))
        spreads.append(float(np.std(distance)))
        if keep_batches:
            batches.append(y)
    if not keep_batches:
        batches = [batches[0], y] if k else batches
    return RefinementTrace(t=t, mean_distance=np.array(means), batches=batches,
                           distance_std=np.array(spreads), num_points=y.shape[0])


def ddim_timesteps(T: int, steps: int) -> np.ndarray:
    """Evenly spaced descending timesteps from T to 0 (steps + 1 entries)."""
    if not 1 <= steps <= T:
        raise TimestepError(f"DDIM steps must lie in [1, {T}], got {steps}", timestep=steps)
    return np.round(np.linspace(T, 0, steps + 1)).astype(np.int64)


def ddim_sample(pred: NoiseModel, sched: NoiseSchedule, n: int, steps: int, rng: np.random.Generator,
                labels: Optional[np.ndarray] = None) -> np.ndarray:
    """Deterministic DDIM (eta = 0) starting from standard normal x_T."""
    grid = ddim_timesteps(sched.T, steps)
    x = rng.standard_normal((n, 2))
    for t, t_next in zip(grid[:-1], grid[1:]):
        alpha, sigma = sched.alpha[t], sched.sigma[t]
        eps_hat = pred.predict(x, np.full(n, t, dtype=np.int64), labels)
        x0_hat = (x - sigma * eps_hat) / alpha
        x = sched.alpha[t_next] * x0_hat + sched.sigma[t_next] * eps_hat
    return x


ShardSampler = Callable[[int, np.random.Generator], Union[np.ndarray, LabeledBatch]]


def sample_sharded(fn: ShardSampler, n: int, seed: Union[int, np.random.SeedSequence],
                   shards: int = 4) -> Union[np.ndarray, LabeledBatch]:
    """Run ``fn(size, rng)`` over thread-pool shards with spawned streams.

    Shard sizes and streams depend only on (n, seed, shards), and results are
    concatenated in shard order, so the output does not depend on scheduling.
    ``fn`` must only read frozen parameters.
    """
    if n < 1:
        raise LabError(f"sample count must be >= 1, got {n}")
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    sizes = [len(part) for part in np.array_split(np.arange(n), shards)]
    streams = root.spawn(shards)
    jobs = [(size, np.random.default_rng(stream)) for size, stream in zip(sizes, streams) if size]

    with ThreadPoolExecutor(max_workers=max(1, len(jobs))) as executor:
        futures = [executor.submit(fn, size, shard_rng) for size, shard_rng in jobs]
        results = [future.result() for future in futures]

    if results and isinstance(results[0], LabeledBatch):
        labels = None
        if results[0].labels is not None:
            labels = np.concatenate([batch.labels for batch in results])
        return LabeledBatch(points=np.concatenate([batch.points for batch in results]), labels=labels)
    return np.concatenate(results)
