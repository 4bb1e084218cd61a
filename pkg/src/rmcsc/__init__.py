"""Design and analysis of rate-memory-compatible spatially-coupled LDPC codes."""

__version__ = "0.1.0"
