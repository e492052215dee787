"""JSONL-to-binary embedding extraction for the temt corpus format."""

__version__ = "0.1.0"
