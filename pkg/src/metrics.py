"""
Sample-quality metrics and their CSV persistence.

This module turns generated samples into the mode coverage / high-quality
fraction / mean distance triple and writes evaluation rows in the fixed
column order of the metrics CSV.
"""

from pathlib import Path
from typing import Iterable, List, Sequence, Union

import numpy as np

from src.data_models import METRICS_HEADER, LabeledBatch, MetricsRow, SampleQuality
from src.exceptions import LabError
from src.logging_config import get_logger
from src.toy_data import GridMixture, nearest_center

logger = get_logger(__name__)


def coverage_threshold(n: int) -> float:
    """Minimum high-quality samples a center needs to count as covered."""
    return max(1.0, n / 4900.0)


def compute_metrics(samples: Union[LabeledBatch, np.ndarray], mix: GridMixture, tau: float) -> SampleQuality:
    """
    Score samples against the mixture centers.

    Args:
        samples: Generated points (labels, if any, are ignored)
        mix: Reference mixture
        tau: High-quality radius around a center

    Returns:
        SampleQuality with coverage, high-quality share and mean distance
    """
    if not tau > 0:
        raise LabError(f"tau must be positive, got {tau}")
    points = samples.points if isinstance(samples, LabeledBatch) else np.asarray(samples, dtype=np.float64)
    n = points.shape[0]
    if n == 0:
        return SampleQuality(mode_coverage=0, hq_fraction=0.0, mean_dist=float('nan'))

    index, distance = nearest_center(mix, points)
    high_quality = distance <= tau
    counts = np.bincount(index[high_quality], minlength=mix.num_components)
    coverage = int(np.sum(counts >= coverage_threshold(n)))
    return SampleQuality(mode_coverage=coverage,
                         hq_fraction=float(np.mean(high_quality)),
                         mean_dist=float(np.mean(distance)))


def format_value(value) -> str:
    """Render one CSV cell; floats use %.10g so identical runs give identical bytes."""
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if np.isnan(value):
        return 'nan'
    return '%.10g' % value


class MetricsWriter:
    """
    Writes rows of a fixed-header CSV.

    The header is written on construction; every row must have one value per
    column. The default header is the GAN evaluation schema.
    """

    def __init__(self, path: Union[str, Path], header: Sequence[str] = METRICS_HEADER):
        self.path = Path(path)
        self.header = tuple(header)
        self.rows_written = 0
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, 'w', encoding='utf-8', newline='') as f:
            f.write(','.join(self.header) + '\n')
        logger.debug(f"Opened metrics file {self.path} ({len(self.header)} columns)")

    def write(self, values: Union[MetricsRow, Sequence]) -> None:
        if isinstance(values, MetricsRow):
            values = [getattr(values, column) for column in METRICS_HEADER]
        if len(values) != len(self.header):
            raise LabError(f"{self.path.name}: expected {len(self.header)} columns, got {len(values)}")
        with open(self.path, 'a', encoding='utf-8', newline='') as f:
            f.write(','.join(format_value(v) for v in values) + '\n')
        self.rows_written += 1

    def write_all(self, rows: Iterable[Union[MetricsRow, Sequence]]) -> None:
        for row in rows:
            self.write(row)


def read_metrics(path: Union[str, Path]) -> List[dict]:
    """Read a metrics CSV back as a list of column -> float dicts."""
    path = Path(path)
    lines = path.read_text(encoding='utf-8').splitlines()
    if not lines:
        return []
    header = lines[0].split(',')
    return [dict(zip(header, (float(cell) for cell in line.split(',')))) for line in lines[1:]]
