"""Fine-tune-and-serve sidecar for transformer sequence classification."""

__version__ = "0.1.0"

from .config import EpochMetrics, RunManifest, TrainConfig

__all__ = ["EpochMetrics", "RunManifest", "TrainConfig", "__version__"]
