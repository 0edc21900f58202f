"""Hybrid-attention single-stage object detector on a small numpy autodiff engine."""

__version__ = "0.1.0"
