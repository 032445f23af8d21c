"""
The 49-mode Gaussian grid and its closed-form oracles.

The mixture is uniform over its centers with a shared isotropic standard
deviation. Under the forward diffusion every component stays Gaussian,
N(alpha_t mu_i, (alpha_t^2 s^2 + sigma_t^2) I), so densities, scores and the
ideal noise predictor are available in closed form.
"""

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from scipy.special import logsumexp, softmax

from src.data_models import LabeledBatch
from src.exceptions import DimensionMismatchError, LabError, TimestepError
from src.schedule import NoiseSchedule, Timesteps

NUM_MODES = 49


@dataclass(eq=False)
class GridMixture:
    """
    Uniform mixture of isotropic Gaussians.

    Attributes:
        centers: (K, 2) component means; the index doubles as class label
        sigma_data: Shared per-mode standard deviation (0 = point masses)
        spacing: Grid spacing, used for the low-variance invariant
    """
    centers: np.ndarray
    sigma_data: float = 0.05
    spacing: float = 1.0

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64).reshape(-1, 2)
        if self.centers.shape[0] < 1:
            raise LabError("a mixture needs at least one center")
        if self.sigma_data < 0:
            raise LabError(f"sigma_data must be >= 0, got {self.sigma_data}")

    @classmethod
    def grid(cls, size: int = 7, spacing: float = 1.0, sigma_data: float = 0.05) -> 'GridMixture':
        """Centers at (i, j) * spacing for i, j in {-(size-1)/2, ..., (size-1)/2}."""
        if sigma_data > spacing / 10:
            raise LabError(f"sigma_data {sigma_data} is not low relative to spacing {spacing} "
                           f"(need <= {spacing / 10})")
        coords = (np.arange(size) - (size - 1) / 2.0) * spacing
        xs, ys = np.meshgrid(coords, coords, indexing='ij')
        centers = np.stack([xs.ravel(), ys.ravel()], axis=1)
        return cls(centers=centers, sigma_data=sigma_data, spacing=spacing)

    @property
    def num_components(self) -> int:
        return self.centers.shape[0]

    @property
    def label_count(self) -> int:
        return self.num_components

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.num_components, 1.0 / self.num_components)


def _as_points(x) -> Tuple[np.ndarray, bool]:
    points = np.asarray(x, dtype=np.float64)
    single = points.ndim == 1
    points = np.atleast_2d(points)
    if points.shape[1] != 2:
        raise DimensionMismatchError(f"expected 2-D points, got shape {np.shape(x)}", actual=np.shape(x))
    return points, single


def sample(mix: GridMixture, n: int, rng: np.random.Generator, with_labels: bool = True) -> LabeledBatch:
    """Uniform mode choice, then isotropic Gaussian noise of scale sigma_data."""
    if n < 1:
        raise LabError(f"sample size must be >= 1, got {n}")
    labels = rng.integers(0, mix.num_components, size=n)
    noise = rng.standard_normal((n, 2))
    points = mix.centers[labels] + mix.sigma_data * noise
    return LabeledBatch(points=points, labels=labels if with_labels else None)


def nearest_center(mix: GridMixture, x) -> Tuple[np.ndarray, np.ndarray]:
    """Index of and distance to the nearest center, per point."""
    points, _ = _as_points(x)
    sq = _squared_distances(points, np.ones((points.shape[0], 1)), mix.centers)
    index = np.argmin(sq, axis=1)
    distance = np.linalg.norm(points - mix.centers[index], axis=1)
    return index, distance


def manifold_distance(mix: GridMixture, x) -> Union[float, np.ndarray]:
    """Distance to the nearest center; a float for one point, an array for a batch."""
    _, single = _as_points(x)
    _, distance = nearest_center(mix, x)
    return float(distance[0]) if single else distance


_CHUNK_ROWS = 8192


def _squared_distances(points: np.ndarray, alpha: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """||x_n - alpha_n mu_k||^2 as an (n, K) array, by direct differences in row chunks."""
    out = np.empty((points.shape[0], centers.shape[0]))
    for start in range(0, points.shape[0], _CHUNK_ROWS):
        stop = start + _CHUNK_ROWS
        diff = points[start:stop, None, :] - alpha[start:stop, :, None] * centers[None, :, :]
        out[start:stop] = np.einsum('nkd,nkd->nk', diff, diff)
    return out


def _component_terms(mix: GridMixture, points: np.ndarray, t: Timesteps, sched: NoiseSchedule,
                     lowest: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-component log(w_i N(x; alpha mu_i, v I)) plus alpha, sigma, v columns."""
    alpha, sigma, _ = sched.batch_coefficients(t, points.shape[0], lowest)
    variance = alpha ** 2 * mix.sigma_data ** 2 + sigma ** 2
    if np.any(variance == 0.0):
        raise TimestepError("density is singular: zero variance at t = 0 with point-mass data", timestep=t)
    sq = _squared_distances(points, alpha, mix.centers)
    log_terms = -sq / (2.0 * variance) - np.log(2.0 * np.pi * variance) - np.log(mix.num_components)
    return log_terms, alpha, sigma, variance


def log_density_t(mix: GridMixture, x_t, t: Timesteps, sched: NoiseSchedule) -> Union[float, np.ndarray]:
    """log q_t(x_t) of the diffused mixture, stabilised with log-sum-exp."""
    points, single = _as_points(x_t)
    log_terms, _, _, _ = _component_terms(mix, points, t, sched, lowest=0)
    value = logsumexp(log_terms, axis=1)
    return float(value[0]) if single else value


def oracle_noise_predictor(mix: GridMixture, x_t, t: Timesteps, sched: NoiseSchedule,
                           label: Optional[Union[int, np.ndarray]] = None) -> np.ndarray:
    """-sigma_t * grad log q_t(x_t), or of q_t(. | c) when a label is given.

    Raises:
        TimestepError: For t = 0, where sigma_0 = 0 makes the formula singular
    """
    points, single = _as_points(x_t)
    if np.any(np.asarray(t) == 0):
        raise TimestepError("the noise oracle is undefined at t = 0", timestep=t)
    log_terms, alpha, sigma, variance = _component_terms(mix, points, t, sched, lowest=1)

    if label is None:
        responsibilities = softmax(log_terms, axis=1)
        mean = alpha * (responsibilities @ mix.centers)
    else:
        labels = np.broadcast_to(np.asarray(label, dtype=np.int64), (points.shape[0],))
        mean = alpha * mix.centers[labels]

    eps = sigma * (points - mean) / variance
    return eps[0] if single else eps


class OracleNoisePredictor:
    """
    Closed-form noise predictor of a GridMixture.

    Shares the ``predict`` / ``input_vjp`` interface of the trained
    NoisePredictor so samplers, refinement and the regularity accept either.
    Pure given its inputs; safe for concurrent use.
    """

    conditional = True

    def __init__(self, mix: GridMixture, sched: NoiseSchedule):
        self.mix = mix
        self.sched = sched

    def predict(self, x_t: np.ndarray, t: Timesteps, labels: Optional[np.ndarray] = None) -> np.ndarray:
        return oracle_noise_predictor(self.mix, x_t, t, self.sched, labels)

    def input_vjp(self, x_t: np.ndarray, t: Timesteps, grad_out: np.ndarray,
                  labels: Optional[np.ndarray] = None) -> np.ndarray:
        """grad_out @ d eps / d x_t; the Jacobian is symmetric.

        The unconditional Jacobian is sigma * (I / v - Cov_r[a]), with a_i the
        component scores and r the responsibilities.
        """
        points, _ = _as_points(x_t)
        grad = np.atleast_2d(np.asarray(grad_out, dtype=np.float64))
        if np.any(np.asarray(t) == 0):
            raise TimestepError("the noise oracle is undefined at t = 0", timestep=t)
        log_terms, alpha, sigma, variance = _component_terms(self.mix, points, t, self.sched, lowest=1)

        if labels is not None:
            return sigma * grad / variance

        centers = self.mix.centers
        responsibilities = softmax(log_terms, axis=1)
        # a_i . g for every component, (n, K)
        projections = -(np.sum(points * grad, axis=1, keepdims=True) - alpha * (grad @ centers.T)) / variance
        weighted = responsibilities * projections
        score_dot_grad = weighted.sum(axis=1, keepdims=True)
        second_moment = -(score_dot_grad * points - alpha * (weighted @ centers)) / variance
        score = -(points - alpha * (responsibilities @ centers)) / variance
        covariance_grad = second_moment - score * score_dot_grad
        return sigma * (grad / variance - covariance_grad)


def export_samples_csv(batch: LabeledBatch, path: Union[str, Path]) -> None:
    """Write ``x,y,label`` rows; the label column is empty for unlabeled batches."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['x', 'y', 'label'])
        for k, (x, y) in enumerate(batch.points):
            label = '' if batch.labels is None else int(batch.labels[k])
            writer.writerow([repr(float(x)), repr(float(y)), label])
