"""omnires: application-resource bottleneck discovery and diagnosis."""

__version__ = "0.1.0"
