"""Subprocess codec adapters for watermark dilution benchmarking."""

from .cli import adapter_main, main

__version__ = "0.1.0"
