"""Confidence scoring, gamma estimation and step filtering."""

from imgcot.filter.core import (
    ELLIPSIS,
    Aggregation,
    ConfidenceProfile,
    FilteredTrace,
    GammaEstimate,
    assign_tokens,
    build_limgcot_sample,
    collapse,
    confidence,
    estimate_gamma,
    filter_profile,
    filter_trace,
    full_cot_output,
    read_gamma,
    retention,
    step_spans,
    write_gamma,
)

__all__ = [
    "Aggregation", "ConfidenceProfile", "ELLIPSIS", "FilteredTrace", "GammaEstimate", "assign_tokens",
    "build_limgcot_sample", "collapse", "confidence", "estimate_gamma", "filter_profile", "filter_trace",
    "full_cot_output", "read_gamma", "retention", "step_spans", "write_gamma",
]
