"""Rasterize a PageLayout into 8-bit grayscale pages (ink 0 on background 255)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from imgcot.errors import ContractError
from imgcot.render.font import CELL, scaled_glyph
from imgcot.render.layout import PageLayout, layout
from imgcot.render.segment import RenderConfig, SegmentGraph, segment

BACKGROUND = 255
INK = 0


@dataclass(frozen=True, eq=False)
class RenderedPage:
    pixels: np.ndarray
    index: int = 0
    layout: PageLayout | None = field(default=None, repr=False)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __eq__(self, other):
        return isinstance(other, RenderedPage) and np.array_equal(self.pixels, other.pixels)

    def ink_pixels(self) -> int:
        return int((self.pixels != BACKGROUND).sum())


def _fill(img: np.ndarray, x0: int, y0: int, x1: int, y1: int) -> None:
    """Ink the half-open rectangle [x0, x1) x [y0, y1), clipped to the page."""
    h, w = img.shape
    x0, x1 = max(x0, 0), min(x1, w)
    y0, y1 = max(y0, 0), min(y1, h)
    if x0 < x1 and y0 < y1:
        img[y0:y1, x0:x1] = INK


def _stroke(img: np.ndarray, p: tuple, q: tuple, s: int) -> None:
    (x0, y0), (x1, y1) = p, q
    off = (s - 1) // 2
    if x0 == x1:
        lo, hi = sorted((y0, y1))
        _fill(img, x0 - off, lo, x0 - off + s, hi + 1)
    elif y0 == y1:
        lo, hi = sorted((x0, x1))
        _fill(img, lo, y0 - off, hi + 1, y0 - off + s)
    else:
        raise ContractError("arrow segments must be axis-aligned")


def _head(img: np.ndarray, x: int, y: int, direction: str, s: int) -> None:
    for r in range(2 * s):
        if direction == "down":
            _fill(img, x - r, y - 1 - r, x + r + 1, y - r)
        else:
            _fill(img, x + 1 + r, y - r, x + 2 + r, y + r + 1)


def rasterize_page(lay: PageLayout, graph: SegmentGraph, page: int) -> np.ndarray:
    if lay.n_segments != len(graph.segments):
        raise ContractError("layout was produced for a different segment graph")
    s = lay.font_size
    img = np.full((lay.height, lay.width), BACKGROUND, dtype=np.uint8)
    cell = CELL * s
    for box in lay.boxes:
        if box.page != page:
            continue
        _fill(img, box.x, box.y, box.x_end, box.y + s)
        _fill(img, box.x, box.y_end - s, box.x_end, box.y_end)
        _fill(img, box.x, box.y, box.x + s, box.y_end)
        _fill(img, box.x_end - s, box.y, box.x_end, box.y_end)
        tx0 = box.x + s + lay.padding
        ty0 = box.y + s + lay.padding
        for li, line in enumerate(box.lines):
            for ci, ch in enumerate(line):
                g = scaled_glyph(ch, s)
                gy = ty0 + li * cell
                gx = tx0 + ci * cell
                region = img[gy:gy + cell, gx:gx + cell]
                region[g[: region.shape[0], : region.shape[1]]] = INK
    for arrow in lay.arrows:
        for path in arrow.paths:
            if path.page != page:
                continue
            pts = path.points
            for a, b in zip(pts, pts[1:]):
                _stroke(img, a, b, s)
        hp, hx, hy, direction = arrow.head
        if hp == page:
            _head(img, hx, hy, direction, s)
    return img


def rasterize(lay: PageLayout, graph: SegmentGraph, config: RenderConfig | None = None) -> list:
    if config is not None and (config.height, config.width) != (lay.height, lay.width):
        raise ContractError("layout page size does not match configuration")
    return [RenderedPage(rasterize_page(lay, graph, p), p, lay) for p in range(lay.pages)]


def render_text(text: str, config: RenderConfig | None = None) -> list:
    """segment -> layout -> rasterize in one call."""
    config = config or RenderConfig()
    graph = segment(text, config)
    return rasterize(layout(graph, config), graph, config)


def blank_page(config: RenderConfig | None = None) -> RenderedPage:
    config = config or RenderConfig()
    return RenderedPage(np.full((config.height, config.width), BACKGROUND, dtype=np.uint8))
