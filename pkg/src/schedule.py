"""Discrete variance-preserving noise schedule."""

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from src.exceptions import ScheduleError, TimestepError

Timesteps = Union[int, np.ndarray]


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """
    Table of (alpha_t, sigma_t) for t = 0..T.

    Attributes:
        T: Total number of timesteps
        alpha: (T + 1,) signal coefficients, alpha[0] = 1
        sigma: (T + 1,) noise coefficients, sigma[0] = 0
    """
    T: int
    alpha: np.ndarray
    sigma: np.ndarray

    def validate(self, atol: float = 1e-12) -> bool:
        """Check the boundary values, the VP identity and monotone SNR.

        Raises:
            ScheduleError: naming the first violated property
        """
        if self.alpha.shape != (self.T + 1,) or self.sigma.shape != (self.T + 1,):
            raise ScheduleError(f"tables must have length T + 1 = {self.T + 1}")
        if self.alpha[0] != 1.0 or self.sigma[0] != 0.0:
            raise ScheduleError("schedule must start at (alpha, sigma) = (1, 0)")
        drift = np.max(np.abs(self.alpha ** 2 + self.sigma ** 2 - 1.0))
        if drift > atol:
            raise ScheduleError(f"alpha^2 + sigma^2 deviates from 1 by {drift:.3e}")
        snr = self.snr(np.arange(1, self.T + 1))
        if np.any(np.diff(snr) >= 0):
            raise ScheduleError("SNR must be strictly decreasing for t >= 1")
        return True

    def check_timesteps(self, t: Timesteps, lowest: int = 0) -> np.ndarray:
        steps = np.asarray(t)
        if not np.issubdtype(steps.dtype, np.integer):
            raise TimestepError(f"timesteps must be integers, got dtype {steps.dtype}", timestep=t)
        if steps.size and (steps.min() < lowest or steps.max() > self.T):
            raise TimestepError(f"timesteps must lie in [{lowest}, {self.T}]", timestep=t)
        return steps

    def snr(self, t: Timesteps) -> np.ndarray:
        steps = self.check_timesteps(t)
        return self.alpha[steps] ** 2 / self.sigma[steps] ** 2

    def coefficients(self, t: Timesteps, lowest: int = 0) -> Tuple[np.ndarray, np.ndarray]:
        steps = self.check_timesteps(t, lowest)
        return self.alpha[steps], self.sigma[steps]

    def batch_coefficients(self, t: Timesteps, n: int,
                           lowest: int = 0) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(alpha, sigma) as (n, 1) columns plus the (n,) timestep vector.

        ``t`` is a single timestep shared by the batch or one per row.
        """
        steps = self.check_timesteps(t, lowest)
        steps = np.broadcast_to(steps, (n,)).astype(np.int64)
        return self.alpha[steps][:, None], self.sigma[steps][:, None], steps


def build_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule: alpha_t = sqrt(prod(1 - beta)), sigma_t = sqrt(1 - alpha_t^2).

    Raises:
        ScheduleError: If T < 1 or the beta range is invalid
    """
    if T < 1:
        raise ScheduleError(f"T must be >= 1, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ScheduleError(f"need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]")

    betas = np.linspace(beta_start, beta_end, T)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    schedule = NoiseSchedule(T=T, alpha=np.sqrt(alpha_bar), sigma=np.sqrt(1.0 - alpha_bar))
    schedule.validate()
    return schedule
