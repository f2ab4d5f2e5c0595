"""Functional and timing simulator of a stream-unit sparse/stencil compute cluster."""

__version__ = "0.1.0"
