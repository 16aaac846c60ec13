"""Motion, scene and object decomposition for token-level video prediction."""

__version__ = "0.1.0"
