"""
Unit tests for sample-quality metrics and the metrics CSV writer.
"""

import math

import numpy as np
import pytest

from src.data_models import METRICS_HEADER, LabeledBatch, MetricsRow, SampleQuality
from src.exceptions import LabError
from src.metrics import MetricsWriter, compute_metrics, coverage_threshold, format_value, read_metrics
from src.toy_data import GridMixture


class TestComputeMetrics:
    """Test cases for compute_metrics."""

    def setup_method(self):
        self.mix = GridMixture.grid()

    def test_exact_centers_cover_everything(self):
        quality = compute_metrics(self.mix.centers, self.mix, 0.15)
        assert quality.mode_coverage == 49
        assert quality.hq_fraction == 1.0
        assert quality.mean_dist == 0.0

    def test_collapsed_generator(self):
        """All samples on one center cover exactly one mode."""
        points = np.tile([1.0, 1.0], (1000, 1))
        quality = compute_metrics(points, self.mix, 0.15)
        assert quality.mode_coverage == 1
        assert quality.hq_fraction == 1.0

    def test_points_between_centers(self):
        points = np.array([[0.5, 0.5], [1.5, -0.5]])
        quality = compute_metrics(points, self.mix, 0.15)
        assert quality.mode_coverage == 0
        assert quality.hq_fraction == 0.0
        assert quality.mean_dist == pytest.approx(math.sqrt(0.5))

    def test_tau_boundary_is_inclusive(self):
        quality = compute_metrics(np.array([[0.25, 0.0]]), self.mix, 0.25)
        assert quality.hq_fraction == 1.0

    def test_coverage_threshold_scales_with_n(self):
        assert coverage_threshold(100) == 1.0
        assert coverage_threshold(10000) == pytest.approx(10000 / 4900)
        # 9800 samples need 2 high-quality hits per center
        base = np.repeat(self.mix.centers, 200, axis=0)
        points = base.copy()
        points[:198] += 0.5
        assert compute_metrics(points, self.mix, 0.15).mode_coverage == 49
        points = base.copy()
        points[:199] += 0.5
        assert compute_metrics(points, self.mix, 0.15).mode_coverage == 48

    def test_empty_samples(self):
        quality = compute_metrics(np.empty((0, 2)), self.mix, 0.15)
        assert quality.mode_coverage == 0
        assert quality.hq_fraction == 0.0
        assert math.isnan(quality.mean_dist)

    def test_accepts_labeled_batch(self):
        batch = LabeledBatch(points=self.mix.centers[:3], labels=np.array([5, 5, 5]))
        assert compute_metrics(batch, self.mix, 0.15).mode_coverage == 3

    def test_rejects_non_positive_tau(self):
        with pytest.raises(LabError):
            compute_metrics(self.mix.centers, self.mix, 0.0)


class TestFormatting:
    """Test cases for format_value."""

    @pytest.mark.parametrize('value,expected', [
        (3, '3'),
        (np.int64(7), '7'),
        (True, '1'),
        (0.1, '0.1'),
        (1.0 / 3.0, '0.3333333333'),
        (float('nan'), 'nan'),
        ('label', 'label'),
    ])
    def test_cells(self, value, expected):
        assert format_value(value) == expected


class TestMetricsWriter:
    """Test cases for MetricsWriter and read_metrics."""

    def test_header_written_on_open(self, tmp_path):
        path = tmp_path / 'metrics.csv'
        MetricsWriter(path)
        assert path.read_text() == ','.join(METRICS_HEADER) + '\n'

    def test_rows_in_column_order(self, tmp_path):
        path = tmp_path / 'run' / 'metrics.csv'
        writer = MetricsWriter(path)
        quality = SampleQuality(mode_coverage=49, hq_fraction=0.5, mean_dist=0.25)
        writer.write(MetricsRow.from_quality(1000, 1.25, 0.75, float('nan'), quality))
        writer.write(MetricsRow.from_quality(2000, 1.0, 0.5, 0.125, quality))
        lines = path.read_text().splitlines()
        assert lines[1] == '1000,1.25,0.75,nan,49,0.5,0.25'
        assert writer.rows_written == 2

        rows = read_metrics(path)
        assert rows[1]['score_loss'] == 0.125
        assert math.isnan(rows[0]['score_loss'])

    def test_custom_header(self, tmp_path):
        path = tmp_path / 'loss.csv'
        writer = MetricsWriter(path, header=('iter', 'loss'))
        writer.write_all([(0, 2.0), (1, 1.5)])
        assert path.read_text().splitlines() == ['iter,loss', '0,2', '1,1.5']

    def test_wrong_column_count(self, tmp_path):
        writer = MetricsWriter(tmp_path / 'loss.csv', header=('iter', 'loss'))
        with pytest.raises(LabError, match="expected 2 columns"):
            writer.write((1, 2.0, 3.0))

    def test_identical_rows_give_identical_bytes(self, tmp_path):
        for name in ('a.csv', 'b.csv'):
            writer = MetricsWriter(tmp_path / name, header=('x',))
            writer.write((0.1 + 0.2,))
        assert (tmp_path / 'a.csv').read_bytes() == (tmp_path / 'b.csv').read_bytes()
