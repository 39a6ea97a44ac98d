"""Binary PGM (P5) page files, layout sidecars and optional PNG export."""

from __future__ import annotations

import json
import re

import numpy as np

from imgcot.errors import ParseError
from imgcot.io import atomic_write_bytes, atomic_write_text, require
from imgcot.render.layout import PageLayout
from imgcot.render.raster import RenderedPage

_TOKEN = re.compile(rb"\s*(#[^\n]*\n\s*)*([^\s#]+)")


def encode_pgm(page: RenderedPage) -> bytes:
    h, w = page.pixels.shape
    return b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(page.pixels, dtype=np.uint8).tobytes()


def decode_pgm(blob: bytes) -> RenderedPage:
    pos = 0
    fields = []
    for what in ("magic", "width", "height", "maxval"):
        m = _TOKEN.match(blob, pos)
        if not m:
            raise ParseError(f"missing PGM {what}", offset=pos)
        fields.append((m.group(2), m.start(2)))
        pos = m.end()
    magic, moff = fields[0]
    if magic != b"P5":
        raise ParseError(f"not a binary PGM (magic {magic!r})", offset=moff)
    values = []
    for (tok, off), what in zip(fields[1:], ("width", "height", "maxval")):
        if not tok.isdigit():
            raise ParseError(f"non-numeric {what} {tok!r}", offset=off)
        values.append(int(tok))
    w, h, maxval = values
    if w <= 0 or h <= 0:
        raise ParseError("non-positive image size", offset=fields[1][1])
    if maxval != 255:
        raise ParseError(f"only 8-bit PGM supported (maxval {maxval})", offset=fields[3][1])
    if pos >= len(blob) or blob[pos:pos + 1] not in (b" ", b"\n", b"\r", b"\t"):
        raise ParseError("missing whitespace before raster", offset=pos)
    pos += 1
    need = w * h
    data = blob[pos:]
    if len(data) < need:
        raise ParseError(f"truncated raster: expected {need} bytes, found {len(data)}", offset=pos + len(data))
    if len(data) > need:
        raise ParseError("trailing bytes after raster", offset=pos + need)
    pixels = np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()
    return RenderedPage(pixels)


def write_page(page: RenderedPage, path) -> None:
    atomic_write_bytes(path, encode_pgm(page))


def read_page(path) -> RenderedPage:
    return decode_pgm(require(path).read_bytes())


def export_png(page: RenderedPage, path) -> None:
    from PIL import Image

    Image.fromarray(page.pixels, mode="L").save(path)


def layout_records(lay: PageLayout) -> list:
    recs = [{"kind": "layout", "font_size": lay.font_size, "pages": lay.pages, "lanes": lay.lanes,
             "height": lay.height, "width": lay.width}]
    for b in lay.boxes:
        recs.append({"kind": "box", "segment": b.segment, "part": b.part, "page": b.page,
                     "x": b.x, "y": b.y, "w": b.w, "h": b.h, "lines": list(b.lines)})
    for a in lay.arrows:
        recs.append({"kind": "arrow", "edge": list(a.edge), "lane": a.lane,
                     "paths": [{"page": p.page, "points": [list(pt) for pt in p.points]} for p in a.paths],
                     "head": list(a.head)})
    return recs


def write_sidecar(lay: PageLayout, path) -> None:
    text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in layout_records(lay))
    atomic_write_text(path, text)
