"""
SVG 1.1 scatter plots of toy samples.

The viewport always covers [-4, 4]^2 so figures from different runs line
up. Coordinates are written with fixed precision, so identical inputs give
byte-identical files.
"""

from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from src.data_models import LabeledBatch
from src.exceptions import ErrorCategory, LabError
from src.logging_config import get_logger
from src.toy_data import GridMixture

logger = get_logger(__name__)

EXTENT = 4.0
CANVAS_PX = 480
DOT_RADIUS = 2
CROSS_HALF_PX = 4

PREAMBLE = """\
<?xml version="1.0" standalone="no"?>
<!DOCTYPE svg PUBLIC "-//W3C//DTD SVG 1.1//EN" "http://www.w3.org/Graphics/SVG/1.1/DTD/svg11.dtd">
<svg width="%(size)d" height="%(size)d" viewBox="0 0 %(size)d %(size)d" version="1.1" xmlns="http://www.w3.org/2000/svg">
<rect x="0" y="0" width="%(size)d" height="%(size)d" style="fill:#ffffff;stroke:#000000;stroke-width:1"/>
"""

POSTAMBLE = "</svg>\n"


class ScatterCanvas:
    """Accumulates SVG elements in plot coordinates (y up)."""

    def __init__(self, extent: float = EXTENT, size: int = CANVAS_PX):
        self.extent = extent
        self.size = size
        self.scale = size / (2.0 * extent)
        self.commands: List[str] = []

    def to_px(self, x: float, y: float):
        return (x + self.extent) * self.scale, (self.extent - y) * self.scale

    def line(self, x1: float, y1: float, x2: float, y2: float, color: str = '#000000', width: float = 1.0):
        (px1, py1), (px2, py2) = self.to_px(x1, y1), self.to_px(x2, y2)
        self.commands.append('<line x1="%.2f" y1="%.2f" x2="%.2f" y2="%.2f" style="stroke:%s;stroke-width:%.2f"/>'
                             % (px1, py1, px2, py2, color, width))

    def axes(self):
        self.line(-self.extent, 0.0, self.extent, 0.0, color='#888888')
        self.line(0.0, -self.extent, 0.0, self.extent, color='#888888')
        tick = 4.0 / self.scale
        for k in range(-int(self.extent) + 1, int(self.extent)):
            self.line(float(k), -tick, float(k), tick, color='#888888')
            self.line(-tick, float(k), tick, float(k), color='#888888')

    def cross(self, x: float, y: float, color: str = '#d62728'):
        px, py = self.to_px(x, y)
        h = CROSS_HALF_PX
        self.commands.append('<path d="M%.2f %.2fL%.2f %.2fM%.2f %.2fL%.2f %.2f" style="stroke:%s;stroke-width:1.5"/>'
                             % (px - h, py - h, px + h, py + h, px - h, py + h, px + h, py - h, color))

    def dots(self, points: np.ndarray, color: str = '#1f77b4'):
        """Points outside the viewport are skipped."""
        inside = np.all(np.abs(points) <= self.extent, axis=1)
        self.commands.append('<g style="fill:%s;fill-opacity:0.5">' % color)
        for x, y in points[inside]:
            px, py = self.to_px(float(x), float(y))
            self.commands.append('<circle cx="%.2f" cy="%.2f" r="%d"/>' % (px, py, DOT_RADIUS))
        self.commands.append('</g>')

    def render(self) -> str:
        return PREAMBLE % {'size': self.size} + ''.join(c + '\n' for c in self.commands) + POSTAMBLE


def render_scatter(samples: Optional[Union[LabeledBatch, np.ndarray]], mix: GridMixture,
                   path: Union[str, Path]) -> Path:
    """
    Write samples as dots and mixture centers as crosses.

    Args:
        samples: Points to draw; None or an empty batch draws only axes and centers
        mix: Mixture whose centers are marked
        path: Output file

    Raises:
        LabError: If the file cannot be written
    """
    canvas = ScatterCanvas()
    canvas.axes()
    if samples is not None:
        points = samples.points if isinstance(samples, LabeledBatch) else np.asarray(samples, dtype=np.float64)
        if points.size:
            canvas.dots(points.reshape(-1, 2))
    for x, y in mix.centers:
        canvas.cross(float(x), float(y))

    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(canvas.render(), encoding='utf-8')
    except OSError as e:
        raise LabError(f"cannot write figure {path}: {e}", category=ErrorCategory.IO, original_error=e)
    logger.debug(f"Rendered {path}")
    return path
