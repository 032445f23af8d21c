"""
Unit tests for the SVG scatter renderer.
"""

import numpy as np
import pytest

from src.data_models import LabeledBatch
from src.exceptions import LabError
from src.svg_render import CANVAS_PX, ScatterCanvas, render_scatter
from src.toy_data import GridMixture


class TestScatterCanvas:
    """Test cases for coordinate mapping and elements."""

    def setup_method(self):
        self.canvas = ScatterCanvas()

    def test_corners_map_to_viewport(self):
        assert self.canvas.to_px(-4.0, 4.0) == (0.0, 0.0)
        assert self.canvas.to_px(4.0, -4.0) == (CANVAS_PX, CANVAS_PX)
        assert self.canvas.to_px(0.0, 0.0) == (CANVAS_PX / 2, CANVAS_PX / 2)

    def test_points_outside_are_skipped(self):
        self.canvas.dots(np.array([[0.0, 0.0], [5.0, 0.0], [0.0, -4.5]]))
        circles = [c for c in self.canvas.commands if c.startswith('<circle')]
        assert circles == ['<circle cx="240.00" cy="240.00" r="2"/>']

    def test_document_is_closed(self):
        text = self.canvas.render()
        assert text.startswith('<?xml')
        assert text.endswith('</svg>\n')


class TestRenderScatter:
    """Test cases for render_scatter."""

    def setup_method(self):
        self.mix = GridMixture.grid()

    def test_writes_centers_and_samples(self, tmp_path):
        batch = LabeledBatch(points=np.array([[0.1, 0.2], [1.0, 1.0]]))
        path = render_scatter(batch, self.mix, tmp_path / 'fig' / 'samples.svg')
        text = path.read_text()
        assert text.count('<circle') == 2
        assert text.count('<path') == 49

    def test_empty_input_draws_centers_only(self, tmp_path):
        path = render_scatter(None, self.mix, tmp_path / 'empty.svg')
        text = path.read_text()
        assert '<circle' not in text
        assert text.count('<path') == 49

    def test_byte_identical(self, tmp_path):
        points = np.random.default_rng(0).uniform(-4, 4, size=(50, 2))
        a = render_scatter(points, self.mix, tmp_path / 'a.svg').read_bytes()
        b = render_scatter(points.copy(), self.mix, tmp_path / 'b.svg').read_bytes()
        assert a == b

    def test_unwritable_path(self, tmp_path):
        blocker = tmp_path / 'file'
        blocker.write_text('x')
        with pytest.raises(LabError):
            render_scatter(None, self.mix, blocker / 'fig.svg')
