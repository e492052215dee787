"""User-level timeline classification with a time-aware multimodal transformer."""

__version__ = "0.1.0"
