"""Graph-aware weight initialization for GCNs, with the tooling to check it."""

__version__ = "0.1.0"
