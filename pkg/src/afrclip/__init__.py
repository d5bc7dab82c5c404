"""Zero-shot anomaly detection with rectified stateless prompts on a frozen CLIP-style encoder."""

__version__ = "0.1.0"
