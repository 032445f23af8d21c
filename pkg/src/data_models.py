"""
Data models shared across the laboratory.

This module contains dataclasses for sample batches, evaluation rows and
the run manifest.
"""

from dataclasses import dataclass, field, asdict
from typing import Any, Dict, List, Optional

import numpy as np

from src.exceptions import DimensionMismatchError


@dataclass
class LabeledBatch:
    """
    A batch of 2-D points with optional mixture-mode labels.

    Attributes:
        points: (n, 2) float64 array
        labels: (n,) int array of mode indices, or None
    """
    points: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise DimensionMismatchError(f"points: expected shape (n, 2), got {self.points.shape}",
                                         actual=self.points.shape)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.points.shape[0],):
                raise DimensionMismatchError(
                    f"labels: expected shape ({self.points.shape[0]},), got {self.labels.shape}",
                    expected=(self.points.shape[0],), actual=self.labels.shape)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class SampleQuality:
    """
    Sample-quality fragment of a metrics row.

    Attributes:
        mode_coverage: Number of centers owning enough high-quality samples
        hq_fraction: Share of samples within tau of their nearest center
        mean_dist: Mean distance to the nearest center
    """
    mode_coverage: int
    hq_fraction: float
    mean_dist: float


METRICS_HEADER = ('iter', 'd_loss', 'g_loss', 'score_loss', 'mode_coverage', 'hq_fraction', 'mean_dist')


@dataclass
class MetricsRow:
    """
    One evaluation row of a GAN run; field order is the CSV column order.

    score_loss is NaN when the regularity has not been evaluated yet.
    """
    iter: int
    d_loss: float
    g_loss: float
    score_loss: float
    mode_coverage: int
    hq_fraction: float
    mean_dist: float

    @classmethod
    def from_quality(cls, iteration: int, d_loss: float, g_loss: float, score_loss: float,
                     quality: SampleQuality) -> 'MetricsRow':
        return cls(iter=iteration, d_loss=d_loss, g_loss=g_loss, score_loss=score_loss,
                   mode_coverage=quality.mode_coverage, hq_fraction=quality.hq_fraction,
                   mean_dist=quality.mean_dist)


@dataclass
class RunManifest:
    """
    Everything needed to reproduce a run.

    Attributes:
        run_id: Hex digest over the flat config and seed
        command: Subcommand that produced the run
        seed: Root seed
        config: Flat effective configuration
        output_dir: Directory holding every artifact of the run
        artifacts: Artifact name -> path (checkpoints, CSVs, figures)
        host: Host snapshot (informational, not part of the run id)
    """
    run_id: str
    command: str
    seed: int
    config: Dict[str, Any]
    output_dir: str
    artifacts: Dict[str, str] = field(default_factory=dict)
    host: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)
