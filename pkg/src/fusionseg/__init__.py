"""Two-stream (appearance + motion) video object segmentation at desk scale."""

__version__ = "0.1.0"
