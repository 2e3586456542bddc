"""Dual-stream online phase recognition with an adaptive clip read-out."""

__version__ = "0.1.0"
