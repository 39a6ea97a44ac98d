"""Box-and-arrow page layout with dynamic font sizing and overflow paging.

Boxes span the content width and stack top to bottom in segment order.
An edge (i, i+1) between boxes on one page is a straight vertical arrow
from the source's bottom midpoint to the destination's top midpoint; every
other edge is routed through its own lane in a right-hand gutter and
enters the destination through its right edge midpoint.  Edges that cross
pages end in stubs at the page's content boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

from imgcot.errors import LayoutInfeasibleError
from imgcot.render.font import CELL
from imgcot.render.segment import RenderConfig, SegmentGraph


@dataclass(frozen=True)
class BoxRect:
    segment: int
    part: int
    page: int
    x: int
    y: int
    w: int
    h: int
    lines: tuple

    @property
    def x_end(self) -> int:
        return self.x + self.w

    @property
    def y_end(self) -> int:
        return self.y + self.h

    @property
    def cx(self) -> int:
        return self.x + self.w // 2

    @property
    def cy(self) -> int:
        return self.y + self.h // 2

    def on_perimeter(self, px: int, py: int) -> bool:
        inside = self.x <= px < self.x_end and self.y <= py < self.y_end
        edge = px in (self.x, self.x_end - 1) or py in (self.y, self.y_end - 1)
        return inside and edge

    def overlaps(self, other: "BoxRect") -> bool:
        return not (
            self.x_end <= other.x or other.x_end <= self.x or self.y_end <= other.y or other.y_end <= self.y
        )


@dataclass(frozen=True)
class ArrowPath:
    page: int
    points: tuple


@dataclass(frozen=True)
class Arrow:
    edge: tuple
    paths: tuple
    head: tuple  # (page, x, y, direction): tip pixel on the destination perimeter
    lane: int | None = None


@dataclass(frozen=True)
class PageLayout:
    font_size: int
    pages: int
    boxes: tuple
    arrows: tuple
    height: int
    width: int
    lanes: int
    n_segments: int
    padding: int = 0

    def boxes_of(self, segment: int) -> list:
        return [b for b in self.boxes if b.segment == segment]

    def boxes_on(self, page: int) -> list:
        return [b for b in self.boxes if b.page == page]


@dataclass(frozen=True)
class Geometry:
    config: RenderConfig
    scale: int
    lanes: int

    @property
    def border(self) -> int:
        return self.scale

    @property
    def gap(self) -> int:
        return 3 * self.scale

    @property
    def line_height(self) -> int:
        return CELL * self.scale

    @property
    def gutter(self) -> int:
        return 2 * self.lanes * self.scale

    @property
    def box_x(self) -> int:
        return self.config.margin

    @property
    def box_w(self) -> int:
        return self.config.width - 2 * self.config.margin - self.gutter

    @property
    def chars_per_line(self) -> int:
        inner = self.box_w - 2 * self.border - 2 * self.config.padding
        return max(inner // self.line_height, 0)

    def box_h(self, lines: int) -> int:
        return 2 * self.border + 2 * self.config.padding + lines * self.line_height

    def top(self, page: int) -> int:
        # continuation pages keep room for incoming arrow stubs
        return self.config.margin + (self.gap if page > 0 else 0)

    @property
    def bottom(self) -> int:
        return self.config.height - self.config.margin

    def lane_x(self, lane: int) -> int:
        base = self.box_x + self.box_w
        return base + (2 * lane + 1) * self.scale + (self.scale - 1) // 2


def wrap(text: str, width: int) -> tuple:
    """Greedy word wrap; words longer than ``width`` are broken hard."""
    if width < 1:
        raise LayoutInfeasibleError("no room for a single glyph per line")
    lines: list = []
    cur = ""
    for word in text.split():
        while len(word) > width:
            if cur:
                room = width - len(cur) - 1
                if room > 0:
                    lines.append(cur + " " + word[:room])
                    word = word[room:]
                else:
                    lines.append(cur)
                cur = ""
                continue
            lines.append(word[:width])
            word = word[width:]
        if not word:
            continue
        if not cur:
            cur = word
        elif len(cur) + 1 + len(word) <= width:
            cur = cur + " " + word
        else:
            lines.append(cur)
            cur = word
    if cur or not lines:
        lines.append(cur)
    return tuple(lines)


def routed_edges(graph: SegmentGraph) -> list:
    return [e for e in graph.edges if e[1] != e[0] + 1]


def _place(graph: SegmentGraph, geo: Geometry, paginate: bool):
    """Greedy top-to-bottom packing.  Returns boxes, or None if one page is required but exceeded."""
    cpl = geo.chars_per_line
    if cpl < 1:
        return None
    boxes = []
    page = 0
    y = geo.top(0)
    fresh_room = geo.bottom - geo.top(1)
    for idx, text in enumerate(graph.segments):
        remaining = wrap(text, cpl)
        part = 0
        while remaining:
            need = geo.box_h(len(remaining))
            if y + need <= geo.bottom:
                boxes.append(BoxRect(idx, part, page, geo.box_x, y, geo.box_w, need, remaining))
                y += need + geo.gap
                break
            if not paginate:
                return None
            if need <= fresh_room and y > geo.top(page):
                page += 1
                y = geo.top(page)
                continue
            fit_lines = (geo.bottom - y - geo.box_h(0)) // geo.line_height
            if fit_lines >= 1:
                boxes.append(
                    BoxRect(idx, part, page, geo.box_x, y, geo.box_w, geo.box_h(fit_lines), remaining[:fit_lines])
                )
                remaining = remaining[fit_lines:]
                part += 1
            elif y == geo.top(page):
                raise LayoutInfeasibleError("a single line does not fit on an empty page")
            page += 1
            y = geo.top(page)
    return boxes


def fits(graph: SegmentGraph, config: RenderConfig, scale: int) -> bool:
    geo = Geometry(config, scale, len(routed_edges(graph)))
    return _place(graph, geo, paginate=False) is not None


def _arrows(graph: SegmentGraph, geo: Geometry, boxes: list) -> tuple:
    first = {}
    last = {}
    for b in boxes:
        first.setdefault(b.segment, b)
        last[b.segment] = b
    lanes = {e: i for i, e in enumerate(routed_edges(graph))}
    top_row = geo.config.margin
    bottom_row = geo.bottom - 1
    arrows = []
    for a, b in graph.edges:
        src, dst = last[a], first[b]
        if (a, b) not in lanes:
            if src.page == dst.page:
                paths = (ArrowPath(src.page, ((src.cx, src.y_end - 1), (dst.cx, dst.y))),)
            else:
                paths = (
                    ArrowPath(src.page, ((src.cx, src.y_end - 1), (src.cx, bottom_row))),
                    ArrowPath(dst.page, ((dst.cx, top_row), (dst.cx, dst.y))),
                )
            arrows.append(Arrow((a, b), paths, (dst.page, dst.cx, dst.y, "down")))
            continue
        lane = lanes[(a, b)]
        lx = geo.lane_x(lane)
        sx, sy = src.x_end - 1, src.cy
        dx, dy = dst.x_end - 1, dst.cy
        if src.page == dst.page:
            paths = (ArrowPath(src.page, ((sx, sy), (lx, sy), (lx, dy), (dx, dy))),)
        else:
            leave = bottom_row if dst.page > src.page else top_row
            enter = top_row if dst.page > src.page else bottom_row
            paths = (
                ArrowPath(src.page, ((sx, sy), (lx, sy), (lx, leave))),
                ArrowPath(dst.page, ((lx, enter), (lx, dy), (dx, dy))),
            )
        arrows.append(Arrow((a, b), paths, (dst.page, dx, dy, "left"), lane))
    return tuple(arrows)


def layout_at(graph: SegmentGraph, config: RenderConfig, scale: int, paginate: bool = False) -> PageLayout | None:
    geo = Geometry(config, scale, len(routed_edges(graph)))
    if geo.chars_per_line < 1:
        if paginate:
            raise LayoutInfeasibleError(f"page too narrow for one glyph at font size {scale}")
        return None
    boxes = _place(graph, geo, paginate)
    if boxes is None:
        return None
    pages = max(b.page for b in boxes) + 1
    return PageLayout(
        font_size=scale,
        pages=pages,
        boxes=tuple(boxes),
        arrows=_arrows(graph, geo, boxes),
        height=config.height,
        width=config.width,
        lanes=geo.lanes,
        n_segments=len(graph.segments),
        padding=config.padding,
    )


def blank_fraction(lay: PageLayout, graph: SegmentGraph, page: int = 0) -> float:
    from imgcot.render.raster import rasterize_page

    pixels = rasterize_page(lay, graph, page)
    return float((pixels == 255).sum()) / pixels.size


def layout(graph: SegmentGraph, config: RenderConfig | None = None) -> PageLayout:
    """Pick the font size and place boxes and arrows.

    Start at the default size and shrink until the graph fits one page; at
    the minimum size, overflow onto extra pages.  If the default already
    fits but leaves more blank area than ``blank_ceiling``, grow while the
    next size still fits.
    """
    config = config or RenderConfig()
    scale = config.font_size
    current = layout_at(graph, config, scale)
    if current is None:
        while scale > config.min_font_size:
            scale -= 1
            current = layout_at(graph, config, scale)
            if current is not None:
                return current
        return layout_at(graph, config, config.min_font_size, paginate=True)
    while scale < config.max_font_size and blank_fraction(current, graph) > config.blank_ceiling:
        bigger = layout_at(graph, config, scale + 1)
        if bigger is None:
            break
        scale += 1
        current = bigger
    return current
