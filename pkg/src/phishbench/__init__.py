"""Phishing-detection benchmarking pipeline."""

__version__ = "0.1.0"

from .records import Category, DatasetBundle, Provenance, Sample

__all__ = ["Category", "DatasetBundle", "Provenance", "Sample", "__version__"]
