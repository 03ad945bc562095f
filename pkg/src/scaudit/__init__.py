"""Staged LLM smart-contract audit pipeline with evolutionary prompt
optimization, retrieval-augmented calibration, and ranking-metric evaluation."""

__version__ = "0.1.0"
