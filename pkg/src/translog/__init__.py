"""Log anomaly detection with transferable adapter-tuned Transformers."""

__version__ = "0.1.0"
