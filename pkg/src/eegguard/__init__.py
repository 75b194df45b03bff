"""Measurement-first EEG analysis with frozen-slot clinical reports."""

__version__ = "0.1.0"
