"""Render chain-of-thought text as boxed steps joined by dependency arrows."""

from imgcot.render.layout import Arrow, BoxRect, PageLayout, blank_fraction, fits, layout, layout_at, wrap
from imgcot.render.pgmio import decode_pgm, encode_pgm, export_png, read_page, write_page, write_sidecar
from imgcot.render.raster import RenderedPage, blank_page, rasterize, rasterize_page, render_text
from imgcot.render.segment import RenderConfig, SegmentGraph, segment

__all__ = [
    "Arrow", "BoxRect", "PageLayout", "RenderConfig", "RenderedPage", "SegmentGraph", "blank_fraction",
    "blank_page", "decode_pgm", "encode_pgm", "export_png", "fits", "layout", "layout_at", "rasterize",
    "rasterize_page", "read_page", "render_text", "segment", "wrap", "write_page", "write_sidecar",
]
