"""Respiratory sound event detection: features, CNN-BiGRU detector,
event postprocessing, Jaccard-based evaluation and an experiment harness."""

__version__ = "0.1.0"
