"""Multi-branch attention network for hand-based person identification."""

__version__ = "0.1.0"
