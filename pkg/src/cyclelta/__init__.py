"""End-to-end long-term activity anticipation with cycle consistency."""

__version__ = "0.1.0"
